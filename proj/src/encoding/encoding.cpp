#include "isflab/encoding.hpp"

#include <algorithm>
#include <map>

#include "isflab/error.hpp"

namespace isflab {
namespace {

class Cursor {
 public:
  Cursor(std::span<const int> t, const Vocab& v) : t_(t), v_(v) {}

  bool done() const { return pos_ >= t_.size(); }
  std::size_t pos() const { return pos_; }
  int peek() const { return done() ? -1 : t_[pos_]; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void expect(int id, const char* what) {
    if (peek() != id) fail(std::string("expected ") + what);
    ++pos_;
  }
  int node() {
    if (done()) fail("expected vertex id, got end of input");
    auto v = v_.node_value(t_[pos_]);
    if (!v) fail("expected vertex id, got '" + v_.token(t_[pos_]) + "'");
    ++pos_;
    return *v;
  }
  std::string feature() {
    if (done()) fail("expected feature token, got end of input");
    const int id = t_[pos_];
    if (id == Vocab::kColon || id == Vocab::kComma || id == Vocab::kBar || v_.node_value(id)) {
      fail("expected feature token, got '" + v_.token(id) + "'");
    }
    ++pos_;
    return v_.token(id);
  }
  bool take(int id) {
    if (peek() != id) return false;
    ++pos_;
    return true;
  }

 private:
  std::span<const int> t_;
  const Vocab& v_;
  std::size_t pos_ = 0;
};

Graph build(int n, std::vector<Edge> edges, std::optional<FeatureList> f, std::size_t pos) {
  try {
    return Graph(n, std::move(edges), std::move(f));
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), pos);
  }
}

// Shared AL / AL_f parser.
Graph parse_al(std::span<const int> tokens, const Vocab& vocab, bool with_features) {
  Cursor c(tokens, vocab);
  if (c.done()) c.fail("empty adjacency list");
  std::vector<Edge> edges;
  FeatureList heads;
  std::vector<std::pair<int, std::pair<std::string, std::size_t>>> seen;  // neighbour features to reconcile
  int block = 0;
  while (true) {
    const std::size_t at = c.pos();
    const int v = c.node();
    if (v != block) throw ParseError("expected block for vertex " + std::to_string(block), at);
    if (with_features) heads.push_back(c.feature());
    c.expect(Vocab::kColon, "':'");
    while (!c.done() && c.peek() != Vocab::kComma) {
      const std::size_t nat = c.pos();
      const int u = c.node();
      edges.push_back({v, u});
      if (with_features) seen.push_back({u, {c.feature(), nat}});
    }
    ++block;
    if (c.done()) break;
    c.expect(Vocab::kComma, "','");
    if (c.done()) c.fail("trailing ','");
  }
  std::optional<FeatureList> f;
  if (with_features) {
    for (const auto& [u, fp] : seen) {
      if (u >= block) throw ParseError("neighbour " + std::to_string(u) + " has no block", fp.second);
      if (heads[static_cast<std::size_t>(u)] != fp.first) {
        throw ParseError("feature of vertex " + std::to_string(u) + " disagrees with its block", fp.second);
      }
    }
    f = std::move(heads);
  }
  return build(block, std::move(edges), std::move(f), tokens.size());
}

TokenSeq encode_al_impl(const Graph& g, const Vocab& vocab, bool with_features) {
  TokenSeq out;
  std::vector<int> feat;
  if (with_features) {
    for (int v = 0; v < g.size(); ++v) feat.push_back(vocab.id(g.feature(v)));
  }
  for (int v = 0; v < g.size(); ++v) {
    if (v) out.push_back(Vocab::kComma);
    out.push_back(vocab.node(v));
    if (with_features) out.push_back(feat[static_cast<std::size_t>(v)]);
    out.push_back(Vocab::kColon);
    for (int u : g.out_neighbors(v)) {
      out.push_back(vocab.node(u));
      if (with_features) out.push_back(feat[static_cast<std::size_t>(u)]);
    }
  }
  return out;
}

void append_matches(TokenSeq& out, const MatchSet& ms, const Vocab& vocab) {
  std::vector<Tuple> sorted = ms.tuples;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].empty()) throw ValidationError("empty match tuple");
    if (i) out.push_back(Vocab::kComma);
    for (int v : sorted[i]) out.push_back(vocab.node(v));
  }
}

// Parses "t , t , t" until a token for which stop() is true.
template <typename Stop>
std::vector<Tuple> parse_matches(Cursor& c, Stop stop) {
  std::vector<Tuple> tuples;
  if (c.done() || stop(c.peek())) return tuples;
  while (true) {
    Tuple t;
    const std::size_t at = c.pos();
    t.push_back(c.node());
    while (!c.done() && c.peek() != Vocab::kComma && !stop(c.peek())) t.push_back(c.node());
    if (!tuples.empty() && t.size() != tuples.front().size()) throw ParseError("match arity differs from first match", at);
    tuples.push_back(std::move(t));
    if (!c.take(Vocab::kComma)) break;
    if (c.done() || stop(c.peek())) c.fail("trailing ','");
  }
  return tuples;
}

}  // namespace

TokenSeq encode_al(const Graph& g, const Vocab& vocab) { return encode_al_impl(g, vocab, false); }

Graph decode_al(std::span<const int> tokens, const Vocab& vocab) { return parse_al(tokens, vocab, false); }

TokenSeq encode_el(const Graph& g, const Vocab& vocab) {
  if (g.edge_count() == 0) throw ValidationError("edge list cannot represent a graph without edges");
  TokenSeq out;
  bool first = true;
  for (const Edge& e : g.edges()) {
    if (!first) out.push_back(Vocab::kBar);
    first = false;
    out.push_back(vocab.node(e.src));
    out.push_back(vocab.node(e.dst));
  }
  return out;
}

Graph decode_el(std::span<const int> tokens, int n, const Vocab& vocab) {
  Cursor c(tokens, vocab);
  if (c.done()) c.fail("empty edge list");
  std::vector<Edge> edges;
  while (true) {
    const int u = c.node();
    const int v = c.node();
    edges.push_back({u, v});
    if (c.done()) break;
    c.expect(Vocab::kBar, "'|'");
  }
  return build(n, std::move(edges), std::nullopt, tokens.size());
}

TokenSeq encode_al_f(const Graph& g, const Vocab& vocab) {
  if (!g.has_features()) throw ValidationError("AL_f needs node features");
  return encode_al_impl(g, vocab, true);
}

Graph decode_al_f(std::span<const int> tokens, const Vocab& vocab) { return parse_al(tokens, vocab, true); }

std::string_view to_string(Representation r) {
  switch (r) {
    case Representation::AL: return "AL";
    case Representation::EL: return "EL";
    case Representation::AL_f: return "AL_f";
  }
  return "?";
}

Representation representation_from_string(std::string_view s) {
  if (s == "AL") return Representation::AL;
  if (s == "EL") return Representation::EL;
  if (s == "AL_f") return Representation::AL_f;
  throw ConfigError("unknown representation '" + std::string(s) + "'");
}

TokenSeq encode_graph(const Graph& g, Representation r, const Vocab& vocab) {
  switch (r) {
    case Representation::AL: return encode_al(g, vocab);
    case Representation::EL: return encode_el(g, vocab);
    case Representation::AL_f: return encode_al_f(g, vocab);
  }
  throw ConfigError("unknown representation");
}

int topo_naming_count(const Pattern& p) {
  return p.topo_names().empty() ? 1 : static_cast<int>(p.topo_names().size());
}

TokenSeq encode_prompt(const Pattern& p, PromptMode mode, const Vocab& vocab, int naming) {
  if (mode == PromptMode::Term) {
    if (!p.name()) throw ValidationError("terminology prompt needs a named pattern");
    return {vocab.id(*p.name())};
  }
  if (naming < 0 || naming >= topo_naming_count(p)) throw ConfigError("topo naming index out of range");
  std::vector<int> letter(static_cast<std::size_t>(p.k()));
  for (int x = 0; x < p.k(); ++x) {
    if (p.topo_names().empty()) {
      letter[static_cast<std::size_t>(x)] = vocab.letter(x);
    } else {
      const std::string& s = p.topo_names()[static_cast<std::size_t>(naming)][static_cast<std::size_t>(x)];
      if (s.size() != 1 || s[0] < 'A' || s[0] >= 'A' + kPatternLetters) throw ValidationError("topo name must be a letter A..H");
      letter[static_cast<std::size_t>(x)] = vocab.letter(s[0] - 'A');
    }
  }
  TokenSeq out;
  for (int x = 0; x < p.k(); ++x) {
    const auto& nb = p.graph().out_neighbors(x);
    if (nb.empty()) continue;
    if (!out.empty()) out.push_back(Vocab::kComma);
    out.push_back(letter[static_cast<std::size_t>(x)]);
    out.push_back(Vocab::kColon);
    std::vector<int> ids;
    for (int y : nb) ids.push_back(letter[static_cast<std::size_t>(y)]);
    std::sort(ids.begin(), ids.end());
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

TokenSeq perturb_prompt(std::span<const int> topo, PerturbKind kind, const Vocab& vocab, std::string_view token) {
  for (std::size_t i = 0; i < topo.size(); ++i) {
    const int id = topo[i];
    if (id != Vocab::kColon && id != Vocab::kComma && !vocab.letter_value(id)) {
      throw ParseError("not a topology prompt token: '" + vocab.token(id) + "'", i);
    }
  }
  TokenSeq out;
  switch (kind) {
    case PerturbKind::StructureOnly:
      for (int id : topo) {
        if (!vocab.letter_value(id)) out.push_back(id);
      }
      break;
    case PerturbKind::Pad:
      for (int id : topo) out.push_back(vocab.letter_value(id) ? Vocab::kPad : id);
      break;
    case PerturbKind::Token:
      out.push_back(vocab.id(token));
      break;
  }
  return out;
}

TokenSeq encode_answer(const MatchSet& ms, const Vocab& vocab) {
  TokenSeq out;
  append_matches(out, ms, vocab);
  return out;
}

MatchSet decode_answer(std::span<const int> tokens, const Vocab& vocab) {
  Cursor c(tokens, vocab);
  MatchSet ms;
  ms.tuples = parse_matches(c, [](int) { return false; });
  if (!c.done()) c.fail("unexpected token after answer");
  return ms;
}

TokenSeq encode_answer_tins(std::span<const MatchSet> parts, const MatchSet& final, const Vocab& vocab,
                            std::optional<std::size_t> max_len) {
  if (parts.empty() || parts.size() > static_cast<std::size_t>(kMaxTinsParts)) {
    throw ValidationError("Tins answers need 1..8 parts");
  }
  TokenSeq out;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    out.push_back(vocab.part(static_cast<int>(j) + 1));
    append_matches(out, parts[j], vocab);
  }
  out.push_back(Vocab::kAns);
  append_matches(out, final, vocab);
  if (max_len && out.size() > *max_len) {
    throw LengthError("Tins answer has " + std::to_string(out.size()) + " tokens, limit is " + std::to_string(*max_len));
  }
  return out;
}

TinsAnswer decode_answer_tins(std::span<const int> tokens, const Vocab& vocab) {
  Cursor c(tokens, vocab);
  TinsAnswer a;
  auto marker = [&](int id) { return id == Vocab::kAns || vocab.part_index(id).has_value(); };
  int expect_part = 1;
  while (!c.done() && vocab.part_index(c.peek())) {
    if (*vocab.part_index(c.peek()) != expect_part) c.fail("expected <S" + std::to_string(expect_part) + ">");
    c.take(c.peek());
    MatchSet ms;
    ms.tuples = parse_matches(c, marker);
    a.parts.push_back(std::move(ms));
    ++expect_part;
  }
  if (a.parts.empty()) c.fail("expected <S1>");
  c.expect(Vocab::kAns, "<ANS>");
  a.final.tuples = parse_matches(c, marker);
  if (!c.done()) c.fail("unexpected token after final answer");
  return a;
}

std::optional<std::span<const int>> final_answer_region(std::span<const int> tokens, const Vocab&) {
  for (std::size_t i = tokens.size(); i-- > 0;) {
    if (tokens[i] == Vocab::kAns) return tokens.subspan(i + 1);
  }
  return std::nullopt;
}

TrainingSequence assemble(const Sample& s, std::optional<std::size_t> pad_to) {
  TrainingSequence t;
  t.tokens.reserve(sequence_length(s));
  t.tokens.push_back(Vocab::kBos);
  t.tokens.insert(t.tokens.end(), s.graph_tokens.begin(), s.graph_tokens.end());
  t.tokens.push_back(Vocab::kQuery);
  t.tokens.insert(t.tokens.end(), s.prompt_tokens.begin(), s.prompt_tokens.end());
  t.tokens.push_back(Vocab::kAnswer);
  t.loss_mask.assign(t.tokens.size(), 0);
  t.tokens.insert(t.tokens.end(), s.answer_tokens.begin(), s.answer_tokens.end());
  t.tokens.push_back(Vocab::kEos);
  t.loss_mask.resize(t.tokens.size(), 1);
  if (pad_to) {
    if (t.tokens.size() > *pad_to) {
      throw LengthError("sequence of " + std::to_string(t.tokens.size()) + " tokens exceeds " + std::to_string(*pad_to));
    }
    t.tokens.resize(*pad_to, Vocab::kPad);
    t.loss_mask.resize(*pad_to, 0);
  }
  return t;
}

TokenSeq generation_prefix(const Sample& s) {
  TokenSeq t;
  t.push_back(Vocab::kBos);
  t.insert(t.end(), s.graph_tokens.begin(), s.graph_tokens.end());
  t.push_back(Vocab::kQuery);
  t.insert(t.end(), s.prompt_tokens.begin(), s.prompt_tokens.end());
  t.push_back(Vocab::kAnswer);
  return t;
}

std::size_t sequence_length(const Sample& s) {
  return s.graph_tokens.size() + s.prompt_tokens.size() + s.answer_tokens.size() + 4;
}

nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["graph"] = s.graph_tokens;
  j["prompt"] = s.prompt_tokens;
  j["answer"] = s.answer_tokens;
  j["meta"] = s.meta;
  return j;
}

Sample sample_from_json(const nlohmann::json& j) {
  try {
    Sample s;
    s.graph_tokens = j.at("graph").get<TokenSeq>();
    s.prompt_tokens = j.at("prompt").get<TokenSeq>();
    s.answer_tokens = j.at("answer").get<TokenSeq>();
    s.meta = j.value("meta", nlohmann::json::object());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad sample record: ") + e.what());
  }
}

}  // namespace isflab
