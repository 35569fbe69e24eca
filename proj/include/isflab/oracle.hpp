#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "isflab/graph.hpp"
#include "isflab/pattern.hpp"

namespace isflab {

// Monomorphism checks edge preservation only; induced additionally maps
// pattern non-edges onto host non-edges.
enum class MatchMode { Monomorphism, Induced };
// ByVertexSet keeps one tuple per host vertex set: the lexicographically
// smallest valid tuple.
enum class Dedup { ByTuple, ByVertexSet };

std::string_view to_string(MatchMode m);
std::string_view to_string(Dedup d);
MatchMode match_mode_from_string(std::string_view s);
Dedup dedup_from_string(std::string_view s);

using Tuple = std::vector<int>;

struct MatchOptions {
  MatchMode mode = MatchMode::Monomorphism;
  Dedup dedup = Dedup::ByVertexSet;
};

// Host-vertex tuples in pattern-vertex order, sorted lexicographically.
struct MatchSet {
  std::vector<Tuple> tuples;
  MatchMode mode = MatchMode::Monomorphism;
  Dedup dedup = Dedup::ByVertexSet;

  std::size_t size() const noexcept { return tuples.size(); }
  bool empty() const noexcept { return tuples.empty(); }
  friend bool operator==(const MatchSet& a, const MatchSet& b) { return a.tuples == b.tuples; }
};

// Sorts tuples and applies the dedup policy. Used by every producer of
// MatchSets so ordering is uniform.
MatchSet make_match_set(std::vector<Tuple> tuples, MatchOptions opts);

// 1 when idx is injective and edge-preserving (plus non-edge preserving in
// induced mode); otherwise minus the number of violated conditions.
int indicator(const Graph& g, const Pattern& p, std::span<const int> idx, MatchMode mode = MatchMode::Monomorphism);

// All tuples with indicator 1, via backtracking with degree pruning.
// Pattern features, when both sides carry them, are ignored here; see
// match_attributed.
MatchSet enumerate_matches(const Graph& g, const Pattern& p, MatchOptions opts = {});

bool check_unique(const Graph& g, const Pattern& p, MatchOptions opts = {});

// Matches whose host features equal the pattern features position by position.
MatchSet match_attributed(const Graph& g, const Pattern& p, MatchOptions opts = {});

// Positive entries of the indicator tensor of G'[V'_i] for one filtration
// stage. `vertices` is V'_i in ascending order; each positive tuple lists host
// vertices in that order.
struct StageMap {
  VertexSubset vertices;
  std::vector<Tuple> positives;
};

// Stage maps computed through the one-step recurrence
//   T_i = T_{i-1} + sum_{new pairs (x,y)} [A'(x,y) A(j_x,j_y) - A'(x,y)] - 1{duplicate index}
// starting from T_0 = 1 on the empty tuple. Only positives of stage i-1 are
// extended since every other entry stays non-positive.
std::vector<StageMap> filtration_tensors(const Graph& g, const Pattern& p, MatchMode mode = MatchMode::Monomorphism);

// Recurrence value T_stage for an arbitrary assignment (host vertex per entry
// of V'_stage, ascending pattern order). stage is 1-based.
int filtration_score(const Graph& g, const Pattern& p, int stage, std::span<const int> assignment,
                     MatchMode mode = MatchMode::Monomorphism);

struct TinsOptions {
  MatchOptions match;
  std::size_t c_max = 16;
};

struct TinsResult {
  std::vector<MatchSet> parts;  // per decomposition subset, dedup as configured
  MatchSet final;
};

// Matches every part G'[V'_j], then joins one tuple per part whenever the
// tuples agree on shared pattern vertices and stay injective. Raw part matches
// above c_max raise CapacityError.
TinsResult match_via_tins(const Graph& g, const Pattern& p, TinsOptions opts = {});

}  // namespace isflab
