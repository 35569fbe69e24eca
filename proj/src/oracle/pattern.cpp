#include "isflab/pattern.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>

#include "isflab/error.hpp"

#ifndef ISFLAB_DATA_DIR
#define ISFLAB_DATA_DIR "data"
#endif

namespace isflab {
namespace {

void check_subset(const Graph& p, const VertexSubset& s, const char* what) {
  if (s.empty()) throw ValidationError(std::string(what) + " subset is empty");
  std::set<int> seen;
  for (int v : s) {
    if (v < 0 || v >= p.size()) throw ValidationError(std::string(what) + " vertex " + std::to_string(v) + " out of range");
    if (!seen.insert(v).second) throw ValidationError(std::string(what) + " vertex " + std::to_string(v) + " repeated");
  }
}

std::vector<VertexSubset> sorted_subsets(std::vector<VertexSubset> s) {
  for (auto& x : s) std::sort(x.begin(), x.end());
  return s;
}

}  // namespace

void validate_filtration(const Graph& pattern, const std::vector<VertexSubset>& filtration) {
  if (filtration.empty()) throw ValidationError("filtration has no stages");
  std::set<int> prev;
  for (std::size_t i = 0; i < filtration.size(); ++i) {
    check_subset(pattern, filtration[i], "filtration");
    std::set<int> cur(filtration[i].begin(), filtration[i].end());
    if (i > 0) {
      if (!std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()) || cur.size() == prev.size()) {
        throw ValidationError("filtration stage " + std::to_string(i + 1) + " does not strictly contain stage " + std::to_string(i));
      }
    }
    prev = std::move(cur);
  }
  if (static_cast<int>(prev.size()) != pattern.size()) {
    throw ValidationError("last filtration stage must be the full vertex set");
  }
}

void validate_decomposition(const Graph& pattern, const std::vector<VertexSubset>& decomposition) {
  if (decomposition.empty()) throw ValidationError("decomposition has no parts");
  if (static_cast<int>(decomposition.size()) > kMaxDecompositionParts) {
    throw ValidationError("decomposition has " + std::to_string(decomposition.size()) + " parts, limit is 8");
  }
  std::vector<std::set<int>> parts;
  std::set<int> covered;
  for (const auto& s : decomposition) {
    check_subset(pattern, s, "decomposition");
    parts.emplace_back(s.begin(), s.end());
    covered.insert(s.begin(), s.end());
  }
  if (static_cast<int>(covered.size()) != pattern.size()) throw ValidationError("decomposition does not cover every pattern vertex");
  for (const Edge& e : pattern.edges()) {
    const bool inside = std::any_of(parts.begin(), parts.end(), [&](const std::set<int>& s) { return s.count(e.src) && s.count(e.dst); });
    if (!inside) {
      throw ValidationError("pattern edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) + ") is not covered by any part");
    }
  }
}

Pattern::Pattern(Graph graph, std::optional<std::string> name, std::optional<std::vector<VertexSubset>> filtration,
                 std::optional<std::vector<VertexSubset>> decomposition, std::vector<std::vector<std::string>> topo_names)
    : graph_(std::move(graph)), name_(std::move(name)), topo_names_(std::move(topo_names)) {
  if (filtration) {
    validate_filtration(graph_, *filtration);
    filtration_ = sorted_subsets(std::move(*filtration));
  }
  if (decomposition) {
    validate_decomposition(graph_, *decomposition);
    decomposition_ = sorted_subsets(std::move(*decomposition));
  }
  for (const auto& naming : topo_names_) {
    if (static_cast<int>(naming.size()) != k()) throw ValidationError("topo naming must name every pattern vertex");
    std::set<std::string> distinct(naming.begin(), naming.end());
    if (distinct.size() != naming.size()) throw ValidationError("topo naming repeats a name");
  }
}

Pattern Pattern::sub(VertexSubset vertices) const {
  std::sort(vertices.begin(), vertices.end());
  check_subset(graph_, vertices, "sub-pattern");
  return Pattern(graph_.induced(vertices));
}

nlohmann::json pattern_to_json(const Pattern& p) {
  using nlohmann::json;
  json edges = json::array();
  for (const Edge& e : p.graph().edges()) edges.push_back({e.src, e.dst});
  json j;
  j["k"] = p.k();
  j["edges"] = std::move(edges);
  j["name"] = p.name() ? json(*p.name()) : json(nullptr);
  j["filtration"] = p.filtration() ? json(*p.filtration()) : json(nullptr);
  j["decomposition"] = p.decomposition() ? json(*p.decomposition()) : json(nullptr);
  j["features"] = p.graph().features() ? json(*p.graph().features()) : json(nullptr);
  if (!p.topo_names().empty()) j["topo_names"] = p.topo_names();
  return j;
}

Pattern pattern_from_json(const nlohmann::json& j) {
  try {
    const int k = j.at("k").get<int>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ValidationError("pattern edge must be a [x,y] pair");
      edges.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    auto opt = [&](const char* key) -> const nlohmann::json* {
      auto it = j.find(key);
      return (it == j.end() || it->is_null()) ? nullptr : &*it;
    };
    std::optional<FeatureList> features;
    if (auto* f = opt("features")) features = f->get<FeatureList>();
    std::optional<std::string> name;
    if (auto* n = opt("name")) name = n->get<std::string>();
    std::optional<std::vector<VertexSubset>> filtration, decomposition;
    if (auto* f = opt("filtration")) filtration = f->get<std::vector<VertexSubset>>();
    if (auto* d = opt("decomposition")) decomposition = d->get<std::vector<VertexSubset>>();
    std::vector<std::vector<std::string>> topo;
    if (auto* t = opt("topo_names")) topo = t->get<std::vector<std::vector<std::string>>>();
    return Pattern(Graph(k, std::move(edges), std::move(features)), std::move(name), std::move(filtration),
                   std::move(decomposition), std::move(topo));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad pattern record: ") + e.what());
  }
}

Pattern load_pattern(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pattern file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return pattern_from_json(j);
}

PatternLibrary PatternLibrary::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("pattern directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  PatternLibrary lib;
  for (const auto& f : files) {
    Pattern p = load_pattern(f);
    if (!p.name()) throw ValidationError(f.string() + ": library patterns must be named");
    lib.add(std::move(p));
  }
  return lib;
}

std::filesystem::path PatternLibrary::default_dir() {
  if (const char* env = std::getenv("ISFLAB_DATA")) return std::filesystem::path(env) / "patterns";
  return std::filesystem::path(ISFLAB_DATA_DIR) / "patterns";
}

PatternLibrary PatternLibrary::load_default() { return load(default_dir()); }

void PatternLibrary::add(Pattern p) {
  if (!p.name()) throw ValidationError("cannot add unnamed pattern to library");
  const std::string key = *p.name();
  patterns_.insert_or_assign(key, std::move(p));
}

const Pattern& PatternLibrary::at(const std::string& name) const {
  auto it = patterns_.find(name);
  if (it == patterns_.end()) throw ConfigError("unknown pattern '" + name + "'");
  return it->second;
}

std::vector<std::string> PatternLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : patterns_) out.push_back(k);
  return out;
}

}  // namespace isflab
