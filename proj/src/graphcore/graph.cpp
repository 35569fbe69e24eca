#include "isflab/graph.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "isflab/error.hpp"
#include "isflab/rng.hpp"

namespace isflab {

Graph::Graph(int n, std::vector<Edge> edges, std::optional<FeatureList> features)
    : n_(n), edges_(std::move(edges)), features_(std::move(features)) {
  if (n_ < 1) throw ValidationError("graph must have at least one vertex, got n=" + std::to_string(n_));
  if (features_ && static_cast<int>(features_->size()) != n_) {
    throw ValidationError("feature list length " + std::to_string(features_->size()) +
                          " does not match n=" + std::to_string(n_));
  }
  const auto un = static_cast<std::size_t>(n_);
  adj_.assign(un * un, 0);
  for (const Edge& e : edges_) {
    if (e.src < 0 || e.src >= n_ || e.dst < 0 || e.dst >= n_) {
      throw ValidationError("edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                            ") out of range for n=" + std::to_string(n_));
    }
    if (e.src == e.dst) throw ValidationError("self-loop on vertex " + std::to_string(e.src));
    auto& bit = adj_[static_cast<std::size_t>(e.src) * un + static_cast<std::size_t>(e.dst)];
    if (bit) {
      throw ValidationError("duplicate edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) + ")");
    }
    bit = 1;
  }
  std::sort(edges_.begin(), edges_.end());
  out_.assign(un, {});
  in_.assign(un, {});
  for (const Edge& e : edges_) {
    out_[static_cast<std::size_t>(e.src)].push_back(e.dst);
    in_[static_cast<std::size_t>(e.dst)].push_back(e.src);
  }
  for (auto& l : in_) std::sort(l.begin(), l.end());
}

const std::string& Graph::feature(int v) const {
  if (!features_) throw ValidationError("graph has no features");
  return (*features_)[static_cast<std::size_t>(v)];
}

Graph Graph::relabeled(std::span<const int> perm) const {
  if (static_cast<int>(perm.size()) != n_) throw ValidationError("permutation size does not match graph");
  std::vector<Edge> e;
  e.reserve(edges_.size());
  for (const Edge& x : edges_) e.push_back({perm[static_cast<std::size_t>(x.src)], perm[static_cast<std::size_t>(x.dst)]});
  std::optional<FeatureList> f;
  if (features_) {
    f.emplace(static_cast<std::size_t>(n_));
    for (int v = 0; v < n_; ++v) (*f)[static_cast<std::size_t>(perm[static_cast<std::size_t>(v)])] = (*features_)[static_cast<std::size_t>(v)];
  }
  return Graph(n_, std::move(e), std::move(f));
}

Graph Graph::induced(std::span<const int> vertices) const {
  const int k = static_cast<int>(vertices.size());
  std::vector<Edge> e;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a != b && has_edge(vertices[static_cast<std::size_t>(a)], vertices[static_cast<std::size_t>(b)])) e.push_back({a, b});
    }
  }
  std::optional<FeatureList> f;
  if (features_) {
    f.emplace();
    for (int v : vertices) f->push_back((*features_)[static_cast<std::size_t>(v)]);
  }
  return Graph(k, std::move(e), std::move(f));
}

AdjacencyMatrix::AdjacencyMatrix(int n) : n_(n) {
  if (n < 1) throw ValidationError("adjacency matrix dimension must be >= 1");
  bits_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
}

std::uint8_t AdjacencyMatrix::at(int i, int j) const {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("adjacency index out of range");
  return bits_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)];
}

void AdjacencyMatrix::set(int i, int j, bool value) {
  if (i < 0 || j < 0 || i >= n_ || j >= n_) throw std::out_of_range("adjacency index out of range");
  bits_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)] = value ? 1 : 0;
}

std::size_t AdjacencyMatrix::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

AdjacencyMatrix adjacency(const Graph& g) {
  AdjacencyMatrix m(g.size());
  for (const Edge& e : g.edges()) m.set(e.src, e.dst, true);
  return m;
}

Graph from_adjacency(const AdjacencyMatrix& m) {
  std::vector<Edge> edges;
  for (int i = 0; i < m.size(); ++i) {
    for (int j = 0; j < m.size(); ++j) {
      if (m.at(i, j)) edges.push_back({i, j});
    }
  }
  return Graph(m.size(), std::move(edges));
}

TensorIndexer::TensorIndexer(std::vector<long long> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ValidationError("tensor must have at least one dimension");
  strides_.assign(dims_.size(), 1);
  total_ = 1;
  for (std::size_t m = dims_.size(); m-- > 0;) {
    if (dims_[m] < 1) throw ValidationError("tensor dimensions must be >= 1");
    strides_[m] = total_;
    total_ *= dims_[m];
  }
}

long long TensorIndexer::flatten(std::span<const long long> index) const {
  if (index.size() != dims_.size()) throw std::out_of_range("index arity does not match tensor order");
  long long j = 1;
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    if (index[m] < 1 || index[m] > dims_[m]) {
      throw std::out_of_range("index " + std::to_string(index[m]) + " outside [1," + std::to_string(dims_[m]) +
                              "] in dimension " + std::to_string(m + 1));
    }
    j += (index[m] - 1) * strides_[m];
  }
  return j;
}

std::vector<long long> TensorIndexer::unflatten(long long j) const {
  if (j < 1 || j > total_) throw std::out_of_range("flat index outside [1, N]");
  std::vector<long long> idx(dims_.size());
  long long r = j - 1;
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    idx[m] = r / strides_[m] + 1;
    r %= strides_[m];
  }
  return idx;
}

Graph random_graph(IntRange n_range, IntRange e_range, std::uint64_t seed) {
  if (n_range.lo < 1 || n_range.lo > n_range.hi) {
    throw ConfigError("empty vertex-count range [" + std::to_string(n_range.lo) + "," + std::to_string(n_range.hi) + "]");
  }
  if (e_range.lo < 0 || e_range.lo > e_range.hi) {
    throw ConfigError("empty edge-count range [" + std::to_string(e_range.lo) + "," + std::to_string(e_range.hi) + "]");
  }
  CounterRng rng(seed);
  const int n = static_cast<int>(rng.between(n_range.lo, n_range.hi));
  const int cap = n * (n - 1);
  const int lo = std::min(e_range.lo, cap);
  const int hi = std::min(e_range.hi, cap);
  const int e = static_cast<int>(rng.between(lo, hi));

  // Partial Fisher-Yates over the n(n-1) off-diagonal slots.
  std::vector<int> slots(static_cast<std::size_t>(cap));
  std::iota(slots.begin(), slots.end(), 0);
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(e));
  for (int i = 0; i < e; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(cap - i));
    std::swap(slots[static_cast<std::size_t>(i)], slots[j]);
    const int s = slots[static_cast<std::size_t>(i)];
    const int u = s / (n - 1);
    int v = s % (n - 1);
    if (v >= u) ++v;
    edges.push_back({u, v});
  }
  return Graph(n, std::move(edges));
}

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : g.edges()) edges.push_back({e.src, e.dst});
  nlohmann::json j;
  j["n"] = g.size();
  j["edges"] = std::move(edges);
  j["features"] = g.features() ? nlohmann::json(*g.features()) : nlohmann::json(nullptr);
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  try {
    const int n = j.at("n").get<int>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ValidationError("edge must be a [u,v] pair");
      edges.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    std::optional<FeatureList> features;
    if (j.contains("features") && !j["features"].is_null()) features = j["features"].get<FeatureList>();
    return Graph(n, std::move(edges), std::move(features));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad graph record: ") + e.what());
  }
}

}  // namespace isflab
