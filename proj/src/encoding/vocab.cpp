#include "isflab/vocab.hpp"

#include <cstdio>
#include <sstream>

#include "isflab/error.hpp"

namespace isflab {
namespace {

const char* const kReservedTokens[] = {"p", "<s>", "<q>", "<a>", "</s>", ":", ",", "|", "<ANS>"};

}  // namespace

Vocab::Vocab(VocabConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.max_nodes < 1) throw ConfigError("vocab needs at least one node token");
  auto add = [&](const std::string& t, bool shared_ok) {
    if (t.empty() || t.find_first_of(" \t\n") != std::string::npos) throw ConfigError("invalid token '" + t + "'");
    if (index_.count(t)) {
      if (shared_ok) return;
      throw ConfigError("duplicate token '" + t + "'");
    }
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  };
  for (const char* t : kReservedTokens) add(t, false);
  for (int j = 1; j <= kMaxTinsParts; ++j) add("<S" + std::to_string(j) + ">", false);
  first_node_ = size();
  for (int v = 0; v < cfg_.max_nodes; ++v) add(std::to_string(v), false);
  first_letter_ = size();
  for (int i = 0; i < kPatternLetters; ++i) add(std::string(1, static_cast<char>('A' + i)), false);
  for (const auto& t : cfg_.terms) add(t, false);
  for (const auto& f : cfg_.features) add(f, true);
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(std::string_view token) const {
  if (auto i = find(token)) return *i;
  throw ValidationError("unknown token '" + std::string(token) + "'");
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::part(int j) const {
  if (j < 1 || j > kMaxTinsParts) throw ValidationError("part marker index must be in 1..8");
  return kPart1 + j - 1;
}

std::optional<int> Vocab::part_index(int id) const {
  if (id >= kPart1 && id < kPart1 + kMaxTinsParts) return id - kPart1 + 1;
  return std::nullopt;
}

int Vocab::node(int v) const {
  if (v < 0 || v >= cfg_.max_nodes) {
    throw ValidationError("vertex " + std::to_string(v) + " has no token (max_nodes=" + std::to_string(cfg_.max_nodes) + ")");
  }
  return first_node_ + v;
}

std::optional<int> Vocab::node_value(int id) const {
  if (id >= first_node_ && id < first_node_ + cfg_.max_nodes) return id - first_node_;
  return std::nullopt;
}

int Vocab::letter(int i) const {
  if (i < 0 || i >= kPatternLetters) throw ValidationError("pattern letter index must be in 0..7");
  return first_letter_ + i;
}

std::optional<int> Vocab::letter_value(int id) const {
  if (id >= first_letter_ && id < first_letter_ + kPatternLetters) return id - first_letter_;
  return std::nullopt;
}

std::string Vocab::render(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

std::vector<int> Vocab::parse(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> ids;
  std::string t;
  while (in >> t) ids.push_back(id(t));
  return ids;
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["reserved"] = {{"pad", kPad},     {"bos", kBos},     {"query", kQuery}, {"answer", kAnswer},
                   {"eos", kEos},     {"colon", kColon}, {"comma", kComma}, {"bar", kBar},
                   {"ans", kAns},     {"part1", kPart1}};
  j["config"] = {{"max_nodes", cfg_.max_nodes}, {"terms", cfg_.terms}, {"features", cfg_.features}};
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  VocabConfig cfg;
  try {
    const auto& c = j.at("config");
    cfg.max_nodes = c.at("max_nodes").get<int>();
    cfg.terms = c.at("terms").get<std::vector<std::string>>();
    cfg.features = c.at("features").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad vocab record: ") + e.what());
  }
  Vocab v(std::move(cfg));
  if (j.contains("tokens") && j["tokens"].get<std::vector<std::string>>() != v.tokens_) {
    throw ValidationError("vocab token list does not match its config");
  }
  return v;
}

std::string Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x0a;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace isflab
