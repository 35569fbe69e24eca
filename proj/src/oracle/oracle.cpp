#include "isflab/oracle.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "isflab/error.hpp"

namespace isflab {

std::string_view to_string(MatchMode m) { return m == MatchMode::Monomorphism ? "monomorphism" : "induced"; }
std::string_view to_string(Dedup d) { return d == Dedup::ByTuple ? "by-tuple" : "by-vertex-set"; }

MatchMode match_mode_from_string(std::string_view s) {
  if (s == "monomorphism") return MatchMode::Monomorphism;
  if (s == "induced") return MatchMode::Induced;
  throw ConfigError("unknown match mode '" + std::string(s) + "'");
}

Dedup dedup_from_string(std::string_view s) {
  if (s == "by-tuple") return Dedup::ByTuple;
  if (s == "by-vertex-set") return Dedup::ByVertexSet;
  throw ConfigError("unknown dedup mode '" + std::string(s) + "'");
}

MatchSet make_match_set(std::vector<Tuple> tuples, MatchOptions opts) {
  std::sort(tuples.begin(), tuples.end());
  tuples.erase(std::unique(tuples.begin(), tuples.end()), tuples.end());
  if (opts.dedup == Dedup::ByVertexSet) {
    std::set<Tuple> seen;
    std::vector<Tuple> kept;
    for (auto& t : tuples) {
      Tuple key = t;
      std::sort(key.begin(), key.end());
      if (seen.insert(std::move(key)).second) kept.push_back(std::move(t));
    }
    tuples = std::move(kept);
  }
  return MatchSet{std::move(tuples), opts.mode, opts.dedup};
}

int indicator(const Graph& g, const Pattern& p, std::span<const int> idx, MatchMode mode) {
  const int k = p.k();
  if (static_cast<int>(idx.size()) != k) throw std::out_of_range("indicator tuple arity does not match pattern");
  for (int v : idx) {
    if (v < 0 || v >= g.size()) throw std::out_of_range("indicator index outside host graph");
  }
  int violations = 0;
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) violations += idx[static_cast<std::size_t>(a)] == idx[static_cast<std::size_t>(b)];
  }
  const Graph& pg = p.graph();
  for (int x = 0; x < k; ++x) {
    for (int y = 0; y < k; ++y) {
      if (x == y) continue;
      const bool pe = pg.has_edge(x, y);
      const int u = idx[static_cast<std::size_t>(x)], v = idx[static_cast<std::size_t>(y)];
      const bool he = u != v && g.has_edge(u, v);
      if (pe && !he) ++violations;
      if (mode == MatchMode::Induced && !pe && he) ++violations;
    }
  }
  return violations == 0 ? 1 : -violations;
}

namespace {

// Backtracking matcher. Pattern vertices are visited in a connectivity-first
// order so most candidates come from a host neighbour list.
class Matcher {
 public:
  Matcher(const Graph& g, const Pattern& p, MatchMode mode, bool use_features)
      : g_(g), p_(p.graph()), mode_(mode), use_features_(use_features), k_(p.k()) {
    plan();
  }

  std::vector<Tuple> run() {
    if (k_ > g_.size()) return {};
    assign_.assign(static_cast<std::size_t>(k_), -1);
    used_.assign(static_cast<std::size_t>(g_.size()), 0);
    step(0);
    return std::move(out_);
  }

 private:
  struct Slot {
    int w;                      // pattern vertex
    int anchor = -1;            // earlier pattern vertex used to draw candidates
    bool anchor_out = false;    // true: candidates = out-neighbours of anchor image
    std::vector<int> earlier;   // pattern vertices placed before w
  };

  void plan() {
    std::vector<int> deg(static_cast<std::size_t>(k_));
    for (int v = 0; v < k_; ++v) deg[static_cast<std::size_t>(v)] = p_.out_degree(v) + p_.in_degree(v);
    std::vector<char> placed(static_cast<std::size_t>(k_), 0);
    for (int i = 0; i < k_; ++i) {
      int best = -1, best_links = -1;
      for (int v = 0; v < k_; ++v) {
        if (placed[static_cast<std::size_t>(v)]) continue;
        int links = 0;
        for (const Slot& s : slots_) links += p_.has_edge(s.w, v) + p_.has_edge(v, s.w);
        if (links > best_links || (links == best_links && deg[static_cast<std::size_t>(v)] > deg[static_cast<std::size_t>(best)])) {
          best = v;
          best_links = links;
        }
      }
      Slot s;
      s.w = best;
      for (const Slot& prev : slots_) {
        s.earlier.push_back(prev.w);
        if (s.anchor < 0 && p_.has_edge(prev.w, best)) {
          s.anchor = prev.w;
          s.anchor_out = true;
        } else if (s.anchor < 0 && p_.has_edge(best, prev.w)) {
          s.anchor = prev.w;
          s.anchor_out = false;
        }
      }
      placed[static_cast<std::size_t>(best)] = 1;
      slots_.push_back(std::move(s));
    }
  }

  bool feasible(const Slot& s, int h) const {
    if (used_[static_cast<std::size_t>(h)]) return false;
    if (g_.out_degree(h) < p_.out_degree(s.w) || g_.in_degree(h) < p_.in_degree(s.w)) return false;
    if (use_features_ && g_.feature(h) != p_.feature(s.w)) return false;
    for (int u : s.earlier) {
      const int hu = assign_[static_cast<std::size_t>(u)];
      const bool pe_out = p_.has_edge(s.w, u), pe_in = p_.has_edge(u, s.w);
      const bool he_out = g_.has_edge(h, hu), he_in = g_.has_edge(hu, h);
      if ((pe_out && !he_out) || (pe_in && !he_in)) return false;
      if (mode_ == MatchMode::Induced && ((!pe_out && he_out) || (!pe_in && he_in))) return false;
    }
    return true;
  }

  void step(int depth) {
    if (depth == k_) {
      out_.push_back(assign_);
      return;
    }
    const Slot& s = slots_[static_cast<std::size_t>(depth)];
    auto visit = [&](int h) {
      if (!feasible(s, h)) return;
      assign_[static_cast<std::size_t>(s.w)] = h;
      used_[static_cast<std::size_t>(h)] = 1;
      step(depth + 1);
      used_[static_cast<std::size_t>(h)] = 0;
      assign_[static_cast<std::size_t>(s.w)] = -1;
    };
    if (s.anchor >= 0) {
      const int ha = assign_[static_cast<std::size_t>(s.anchor)];
      const auto& cand = s.anchor_out ? g_.out_neighbors(ha) : g_.in_neighbors(ha);
      for (int h : cand) visit(h);
    } else {
      for (int h = 0; h < g_.size(); ++h) visit(h);
    }
  }

  const Graph& g_;
  const Graph& p_;
  MatchMode mode_;
  bool use_features_;
  int k_;
  std::vector<Slot> slots_;
  Tuple assign_;
  std::vector<char> used_;
  std::vector<Tuple> out_;
};

const std::vector<VertexSubset>& require_filtration(const Pattern& p) {
  if (!p.filtration()) throw ValidationError("pattern has no filtration");
  return *p.filtration();
}

// Increment of the recurrence for stage s (0-based) given an assignment over
// the full pattern (entries outside V'_s unused).
int stage_increment(const Graph& g, const Graph& pg, const VertexSubset& cur, const std::vector<char>& is_new,
                    const Tuple& assign, MatchMode mode) {
  int inc = 0;
  for (int x : cur) {
    for (int y : cur) {
      if (x == y || !(is_new[static_cast<std::size_t>(x)] || is_new[static_cast<std::size_t>(y)])) continue;
      const int jx = assign[static_cast<std::size_t>(x)], jy = assign[static_cast<std::size_t>(y)];
      const int pa = pg.has_edge(x, y) ? 1 : 0;
      const int ha = (jx != jy && g.has_edge(jx, jy)) ? 1 : 0;
      inc += pa * ha - pa;
      if (mode == MatchMode::Induced) inc -= (1 - pa) * ha;
    }
  }
  for (std::size_t a = 0; a < cur.size(); ++a) {
    for (std::size_t b = a + 1; b < cur.size(); ++b) {
      if (assign[static_cast<std::size_t>(cur[a])] == assign[static_cast<std::size_t>(cur[b])]) return inc - 1;
    }
  }
  return inc;
}

}  // namespace

MatchSet enumerate_matches(const Graph& g, const Pattern& p, MatchOptions opts) {
  return make_match_set(Matcher(g, p, opts.mode, false).run(), opts);
}

bool check_unique(const Graph& g, const Pattern& p, MatchOptions opts) { return enumerate_matches(g, p, opts).size() == 1; }

MatchSet match_attributed(const Graph& g, const Pattern& p, MatchOptions opts) {
  if (!g.has_features()) throw ValidationError("attributed matching needs host features");
  if (!p.has_features()) throw ValidationError("attributed matching needs pattern features");
  return make_match_set(Matcher(g, p, opts.mode, true).run(), opts);
}

std::vector<StageMap> filtration_tensors(const Graph& g, const Pattern& p, MatchMode mode) {
  const auto& filtration = require_filtration(p);
  const int k = p.k();
  const int n = g.size();
  std::vector<StageMap> maps;
  // Positives of the previous stage as full-length assignments (-1 = unset).
  std::vector<Tuple> frontier{Tuple(static_cast<std::size_t>(k), -1)};
  std::vector<char> in_prev(static_cast<std::size_t>(k), 0);
  for (const VertexSubset& cur : filtration) {
    std::vector<char> is_new(static_cast<std::size_t>(k), 0);
    VertexSubset fresh;
    for (int x : cur) {
      if (!in_prev[static_cast<std::size_t>(x)]) {
        is_new[static_cast<std::size_t>(x)] = 1;
        fresh.push_back(x);
      }
    }
    std::vector<Tuple> next;
    for (const Tuple& base : frontier) {
      // Every n^|fresh| extension of a previous positive; T_{i-1} = 1 there.
      Tuple a = base;
      std::vector<int> digits(fresh.size(), 0);
      while (true) {
        for (std::size_t d = 0; d < fresh.size(); ++d) a[static_cast<std::size_t>(fresh[d])] = digits[d];
        if (1 + stage_increment(g, p.graph(), cur, is_new, a, mode) == 1) next.push_back(a);
        std::size_t d = 0;
        while (d < digits.size() && ++digits[d] == n) digits[d++] = 0;
        if (d == digits.size()) break;
      }
    }
    StageMap m;
    m.vertices = cur;
    for (const Tuple& a : next) {
      Tuple t;
      t.reserve(cur.size());
      for (int x : cur) t.push_back(a[static_cast<std::size_t>(x)]);
      m.positives.push_back(std::move(t));
    }
    std::sort(m.positives.begin(), m.positives.end());
    maps.push_back(std::move(m));
    frontier = std::move(next);
    for (int x : cur) in_prev[static_cast<std::size_t>(x)] = 1;
  }
  return maps;
}

int filtration_score(const Graph& g, const Pattern& p, int stage, std::span<const int> assignment, MatchMode mode) {
  const auto& filtration = require_filtration(p);
  if (stage < 1 || stage > static_cast<int>(filtration.size())) throw std::out_of_range("filtration stage out of range");
  const VertexSubset& last = filtration[static_cast<std::size_t>(stage - 1)];
  if (assignment.size() != last.size()) throw std::out_of_range("assignment arity does not match stage");
  Tuple a(static_cast<std::size_t>(p.k()), -1);
  for (std::size_t i = 0; i < last.size(); ++i) {
    if (assignment[i] < 0 || assignment[i] >= g.size()) throw std::out_of_range("assignment index outside host graph");
    a[static_cast<std::size_t>(last[i])] = assignment[i];
  }
  int t = 1;
  std::vector<char> in_prev(static_cast<std::size_t>(p.k()), 0);
  for (int s = 0; s < stage; ++s) {
    const VertexSubset& cur = filtration[static_cast<std::size_t>(s)];
    std::vector<char> is_new(static_cast<std::size_t>(p.k()), 0);
    for (int x : cur) is_new[static_cast<std::size_t>(x)] = !in_prev[static_cast<std::size_t>(x)];
    t += stage_increment(g, p.graph(), cur, is_new, a, mode);
    for (int x : cur) in_prev[static_cast<std::size_t>(x)] = 1;
  }
  return t;
}

TinsResult match_via_tins(const Graph& g, const Pattern& p, TinsOptions opts) {
  if (!p.decomposition()) throw ValidationError("pattern has no decomposition");
  const auto& parts = *p.decomposition();
  const int k = p.k();
  MatchOptions raw_opts{opts.match.mode, Dedup::ByTuple};

  TinsResult result;
  std::vector<MatchSet> raw;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const Pattern sub = p.sub(parts[j]);
    MatchSet r = enumerate_matches(g, sub, raw_opts);
    if (r.size() > opts.c_max) {
      throw CapacityError("part " + std::to_string(j + 1) + " has " + std::to_string(r.size()) + " matches, c_max is " +
                          std::to_string(opts.c_max));
    }
    result.parts.push_back(make_match_set(r.tuples, opts.match));
    raw.push_back(std::move(r));
  }

  // Choose one tuple per part; positions either agree or are still unset,
  // and distinct pattern vertices never share a host vertex.
  std::vector<Tuple> finals;
  Tuple assign(static_cast<std::size_t>(k), -1);
  std::vector<int> owner(static_cast<std::size_t>(g.size()), -1);
  auto combine = [&](auto&& self, std::size_t j) -> void {
    if (j == parts.size()) {
      // Parts only see their own non-edges; cross-part pairs need a final check.
      if (opts.match.mode == MatchMode::Induced && indicator(g, p, assign, MatchMode::Induced) != 1) return;
      finals.push_back(assign);
      return;
    }
    const VertexSubset& vs = parts[j];
    for (const Tuple& t : raw[j].tuples) {
      std::vector<int> set_here;
      bool ok = true;
      for (std::size_t i = 0; i < vs.size() && ok; ++i) {
        const int x = vs[i], h = t[i];
        int& ax = assign[static_cast<std::size_t>(x)];
        if (ax >= 0) {
          ok = ax == h;
        } else if (owner[static_cast<std::size_t>(h)] >= 0) {
          ok = false;
        } else {
          ax = h;
          owner[static_cast<std::size_t>(h)] = x;
          set_here.push_back(x);
        }
      }
      if (ok) self(self, j + 1);
      for (int x : set_here) {
        owner[static_cast<std::size_t>(assign[static_cast<std::size_t>(x)])] = -1;
        assign[static_cast<std::size_t>(x)] = -1;
      }
    }
  };
  combine(combine, 0);
  result.final = make_match_set(std::move(finals), opts.match);
  return result;
}

}  // namespace isflab
