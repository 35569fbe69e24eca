#include <fstream>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"

namespace isflab {
namespace {

constexpr const char* kSplitFiles[] = {"train", "val", "test", "eval_perturbed"};

void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + p.string());
}

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "manifest.json", d.manifest);
  write_json(dir / "vocab.json", d.vocab.to_json());
  for (const char* name : kSplitFiles) {
    auto it = d.splits.find(name);
    if (it == d.splits.end() || (it->second.empty() && std::string(name) == "eval_perturbed")) continue;
    const auto path = dir / (std::string(name) + ".jsonl");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const Sample& s : it->second) out << sample_to_json(s).dump() << '\n';
    if (!out) throw IoError("write failed for " + path.string());
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_json(dir / "manifest.json");
  d.vocab = Vocab::from_json(read_json(dir / "vocab.json"));
  if (d.manifest.value("vocab_hash", "") != d.vocab.hash()) {
    throw ValidationError(dir.string() + ": vocab hash does not match manifest");
  }
  for (const char* name : kSplitFiles) {
    const auto path = dir / (std::string(name) + ".jsonl");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    auto& out = d.splits[name];
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        out.push_back(sample_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw ValidationError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return d;
}

}  // namespace isflab
