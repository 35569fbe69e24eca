#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace isflab {

struct Edge {
  int src = 0;
  int dst = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

using FeatureList = std::vector<std::string>;

// Simple directed graph on vertices 0..n-1 with optional per-vertex feature
// symbols. Edges are kept sorted by (src, dst); no self-loops, no duplicates.
class Graph {
 public:
  Graph() : Graph(1, {}) {}
  Graph(int n, std::vector<Edge> edges, std::optional<FeatureList> features = std::nullopt);

  int size() const noexcept { return n_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  std::span<const Edge> edges() const noexcept { return edges_; }

  bool has_edge(int u, int v) const noexcept {
    return adj_[static_cast<std::size_t>(u) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(v)] != 0;
  }
  std::span<const int> out_neighbors(int v) const noexcept { return out_[static_cast<std::size_t>(v)]; }
  std::span<const int> in_neighbors(int v) const noexcept { return in_[static_cast<std::size_t>(v)]; }
  int out_degree(int v) const noexcept { return static_cast<int>(out_[static_cast<std::size_t>(v)].size()); }
  int in_degree(int v) const noexcept { return static_cast<int>(in_[static_cast<std::size_t>(v)].size()); }

  bool has_features() const noexcept { return features_.has_value(); }
  const std::optional<FeatureList>& features() const noexcept { return features_; }
  const std::string& feature(int v) const;

  // perm[v] is the new label of vertex v.
  Graph relabeled(std::span<const int> perm) const;
  // Subgraph induced by `vertices`; vertex vertices[i] becomes i.
  Graph induced(std::span<const int> vertices) const;
  Graph without_features() const { return Graph(n_, edges_); }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_ && a.features_ == b.features_;
  }

 private:
  int n_;
  std::vector<Edge> edges_;
  std::vector<std::uint8_t> adj_;
  std::vector<std::vector<int>> out_;
  std::vector<std::vector<int>> in_;
  std::optional<FeatureList> features_;
};

// Dense n x n 0/1 matrix; entry (i, j) is 1 iff (v_i, v_j) is an edge.
class AdjacencyMatrix {
 public:
  explicit AdjacencyMatrix(int n);

  int size() const noexcept { return n_; }
  std::uint8_t at(int i, int j) const;
  void set(int i, int j, bool value);
  std::size_t count() const noexcept;
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  friend bool operator==(const AdjacencyMatrix&, const AdjacencyMatrix&) = default;

 private:
  int n_;
  std::vector<std::uint8_t> bits_;
};

AdjacencyMatrix adjacency(const Graph& g);
Graph from_adjacency(const AdjacencyMatrix& m);

// Row-major vectorization of a d-dimensional tensor with 1-based indices:
//   j = 1 + sum_m (i_m - 1) * prod_{l > m} n_l
class TensorIndexer {
 public:
  explicit TensorIndexer(std::vector<long long> dims);

  std::span<const long long> dims() const noexcept { return dims_; }
  long long total() const noexcept { return total_; }

  // Throws std::out_of_range when any i_k is outside [1, n_k].
  long long flatten(std::span<const long long> index) const;
  std::vector<long long> unflatten(long long j) const;

 private:
  std::vector<long long> dims_;
  std::vector<long long> strides_;
  long long total_;
};

struct IntRange {
  int lo = 0;
  int hi = 0;

  friend bool operator==(const IntRange&, const IntRange&) = default;
};

// Draws n uniformly from n_range, then |E| uniformly from e_range clipped to
// [0, n(n-1)], then that many distinct vertex pairs uniformly without
// replacement. Deterministic in `seed`.
Graph random_graph(IntRange n_range, IntRange e_range, std::uint64_t seed);

// Byte string equal for two graphs iff they are isomorphic (feature-preserving
// when features are present). Supports n <= 16.
struct CanonicalCertificate {
  std::string bytes;

  friend auto operator<=>(const CanonicalCertificate&, const CanonicalCertificate&) = default;
};

inline constexpr int kMaxCertificateVertices = 16;

CanonicalCertificate canonical_certificate(const Graph& g);

// Isomorphism-invariant 64-bit hash from colour refinement. Equal for
// isomorphic graphs, usually different otherwise; works for any n. Used where
// exact certificates are unavailable (large molecules).
std::uint64_t refinement_hash(const Graph& g);

// Graph on-disk record: {"n": int, "edges": [[u,v],...], "features": [...] | null}
nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

}  // namespace isflab
