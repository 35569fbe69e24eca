#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "isflab/oracle.hpp"

namespace isflab::reference {

// Straight-from-definition scorer: every k-tuple of host vertices.
inline std::vector<Tuple> brute_tuples(const Graph& g, const Graph& p, MatchMode mode, bool features = false) {
  const int n = g.size(), k = p.size();
  std::vector<Tuple> out;
  Tuple t(static_cast<std::size_t>(k), 0);
  while (true) {
    bool ok = true;
    for (int a = 0; a < k && ok; ++a) {
      for (int b = 0; b < k && ok; ++b) {
        if (a == b) continue;
        const int u = t[static_cast<std::size_t>(a)], v = t[static_cast<std::size_t>(b)];
        if (u == v) ok = false;
        else if (p.has_edge(a, b) && !g.has_edge(u, v)) ok = false;
        else if (mode == MatchMode::Induced && !p.has_edge(a, b) && g.has_edge(u, v)) ok = false;
      }
      if (ok && features && g.feature(t[static_cast<std::size_t>(a)]) != p.feature(a)) ok = false;
    }
    if (ok) out.push_back(t);
    int d = k - 1;
    while (d >= 0 && ++t[static_cast<std::size_t>(d)] == n) t[static_cast<std::size_t>(d--)] = 0;
    if (d < 0) break;
  }
  return out;  // already lexicographic
}

inline std::vector<Tuple> brute_by_set(const std::vector<Tuple>& raw) {
  std::map<Tuple, Tuple> best;
  for (const Tuple& t : raw) {
    Tuple key = t;
    std::sort(key.begin(), key.end());
    auto it = best.find(key);
    if (it == best.end() || t < it->second) best[key] = t;
  }
  std::vector<Tuple> out;
  for (auto& [k, v] : best) out.push_back(v);
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace isflab::reference
