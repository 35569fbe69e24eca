#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isflab/graph.hpp"
#include "json.hpp"

namespace isflab {

using VertexSubset = std::vector<int>;

// Target substructure. Vertex order is fixed: answers list host vertices in
// this order. Optional extras:
//  - filtration: nested vertex subsets V'_1 < ... < V'_m = V'
//  - decomposition: subsets V'_1..V'_t (t <= 8) whose induced subgraphs cover
//    every vertex and edge of the pattern
//  - topo_names: alternative letter namings used for topology prompts
class Pattern {
 public:
  Pattern(Graph graph, std::optional<std::string> name = std::nullopt,
          std::optional<std::vector<VertexSubset>> filtration = std::nullopt,
          std::optional<std::vector<VertexSubset>> decomposition = std::nullopt,
          std::vector<std::vector<std::string>> topo_names = {});

  int k() const noexcept { return graph_.size(); }
  const Graph& graph() const noexcept { return graph_; }
  const std::optional<std::string>& name() const noexcept { return name_; }
  const std::optional<std::vector<VertexSubset>>& filtration() const noexcept { return filtration_; }
  const std::optional<std::vector<VertexSubset>>& decomposition() const noexcept { return decomposition_; }
  const std::vector<std::vector<std::string>>& topo_names() const noexcept { return topo_names_; }
  bool has_features() const noexcept { return graph_.has_features(); }

  // G'[vertices] with vertices taken in ascending pattern order.
  Pattern sub(VertexSubset vertices) const;

 private:
  Graph graph_;
  std::optional<std::string> name_;
  std::optional<std::vector<VertexSubset>> filtration_;
  std::optional<std::vector<VertexSubset>> decomposition_;
  std::vector<std::vector<std::string>> topo_names_;
};

inline constexpr int kMaxDecompositionParts = 8;

void validate_filtration(const Graph& pattern, const std::vector<VertexSubset>& filtration);
void validate_decomposition(const Graph& pattern, const std::vector<VertexSubset>& decomposition);

// Pattern file: {"k", "edges", "name", "filtration", "decomposition",
// "features", "topo_names"}; null for absent optional fields.
nlohmann::json pattern_to_json(const Pattern& p);
Pattern pattern_from_json(const nlohmann::json& j);
Pattern load_pattern(const std::filesystem::path& path);

// Named patterns loaded from a directory of *.json pattern files.
class PatternLibrary {
 public:
  PatternLibrary() = default;
  static PatternLibrary load(const std::filesystem::path& dir);
  // ISFLAB_DATA env var if set, otherwise the data directory of the source tree.
  static PatternLibrary load_default();
  static std::filesystem::path default_dir();

  void add(Pattern p);
  const Pattern& at(const std::string& name) const;
  bool contains(const std::string& name) const { return patterns_.count(name) != 0; }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Pattern> patterns_;
};

}  // namespace isflab
