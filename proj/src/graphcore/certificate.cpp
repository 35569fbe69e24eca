// Canonical labeling by individualization-refinement.
//
// Colours start from feature symbols, then are refined by counting in- and
// out-neighbours per colour until stable. When the partition is not discrete,
// every vertex of the first smallest non-singleton cell is individualized in
// turn. Leaves are compared by their relabeled adjacency string and the
// maximum wins. Equal leaves yield automorphisms, which prune siblings lying in
// the same orbit of the automorphisms found so far that fix the current prefix.

#include <algorithm>
#include <map>
#include <numeric>

#include "isflab/error.hpp"
#include "isflab/graph.hpp"
#include "isflab/rng.hpp"

namespace isflab {
namespace {

using Colouring = std::vector<int>;

int cell_count(const Colouring& c) { return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1; }

// Re-rank vertices by signature; ranks are dense and ordered by signature.
template <typename Sig>
int rerank(Colouring& c, const std::vector<Sig>& sig) {
  const std::size_t n = c.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sig[static_cast<std::size_t>(a)] < sig[static_cast<std::size_t>(b)]; });
  int rank = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || sig[static_cast<std::size_t>(order[i])] != sig[static_cast<std::size_t>(order[i - 1])]) ++rank;
    c[static_cast<std::size_t>(order[i])] = rank;
  }
  return rank + 1;
}

void refine(const Graph& g, Colouring& c) {
  const int n = g.size();
  int cells = cell_count(c);
  while (true) {
    std::vector<std::vector<int>> sig(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
      auto& s = sig[static_cast<std::size_t>(v)];
      s.assign(static_cast<std::size_t>(1 + 2 * cells), 0);
      s[0] = c[static_cast<std::size_t>(v)];
      for (int u : g.out_neighbors(v)) ++s[static_cast<std::size_t>(1 + c[static_cast<std::size_t>(u)])];
      for (int u : g.in_neighbors(v)) ++s[static_cast<std::size_t>(1 + cells + c[static_cast<std::size_t>(u)])];
    }
    const int next = rerank(c, sig);
    if (next == cells) return;
    cells = next;
  }
}

Colouring initial_colouring(const Graph& g) {
  Colouring c(static_cast<std::size_t>(g.size()), 0);
  if (g.has_features()) {
    std::vector<std::string> sig = *g.features();
    rerank(c, sig);
  }
  return c;
}

class Search {
 public:
  explicit Search(const Graph& g) : g_(g), n_(g.size()) {}

  std::string run() {
    Colouring c = initial_colouring(g_);
    std::vector<int> prefix;
    descend(std::move(c), prefix);
    return best_;
  }

 private:
  std::string leaf_string(const std::vector<int>& lab) const {
    // lab[p] = vertex placed at position p.
    std::string s;
    s.reserve(static_cast<std::size_t>(n_ * n_) + 1);
    s.push_back(static_cast<char>(n_));
    for (int p = 0; p < n_; ++p) {
      for (int q = 0; q < n_; ++q) s.push_back(g_.has_edge(lab[static_cast<std::size_t>(p)], lab[static_cast<std::size_t>(q)]) ? '1' : '0');
    }
    return s;
  }

  void record_automorphism(const std::vector<int>& from, const std::vector<int>& to) {
    // gamma maps from[p] -> to[p].
    std::vector<int> gamma(static_cast<std::size_t>(n_));
    bool identity = true;
    for (int p = 0; p < n_; ++p) {
      gamma[static_cast<std::size_t>(from[static_cast<std::size_t>(p)])] = to[static_cast<std::size_t>(p)];
      if (from[static_cast<std::size_t>(p)] != to[static_cast<std::size_t>(p)]) identity = false;
    }
    if (!identity) autos_.push_back(std::move(gamma));
  }

  void leaf(const Colouring& c) {
    std::vector<int> lab(static_cast<std::size_t>(n_));
    for (int v = 0; v < n_; ++v) lab[static_cast<std::size_t>(c[static_cast<std::size_t>(v)])] = v;
    std::string s = leaf_string(lab);
    if (first_lab_.empty()) {
      first_lab_ = lab;
      first_ = s;
    } else if (s == first_) {
      record_automorphism(first_lab_, lab);
    }
    if (best_lab_.empty() || s > best_) {
      best_ = std::move(s);
      best_lab_ = std::move(lab);
    } else if (s == best_) {
      record_automorphism(best_lab_, lab);
    }
  }

  int find(std::vector<int>& parent, int x) const {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }

  // Orbit representatives under the stored automorphisms that fix `prefix` pointwise.
  std::vector<int> orbits(const std::vector<int>& prefix) {
    std::vector<int> parent(static_cast<std::size_t>(n_));
    std::iota(parent.begin(), parent.end(), 0);
    for (const auto& gamma : autos_) {
      const bool fixes = std::all_of(prefix.begin(), prefix.end(), [&](int v) { return gamma[static_cast<std::size_t>(v)] == v; });
      if (!fixes) continue;
      for (int v = 0; v < n_; ++v) {
        const int a = find(parent, v);
        const int b = find(parent, gamma[static_cast<std::size_t>(v)]);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
      }
    }
    for (int v = 0; v < n_; ++v) parent[static_cast<std::size_t>(v)] = find(parent, v);
    return parent;
  }

  void descend(Colouring c, std::vector<int>& prefix) {
    refine(g_, c);
    const int cells = cell_count(c);
    if (cells == n_) {
      leaf(c);
      return;
    }
    std::vector<int> size(static_cast<std::size_t>(cells), 0);
    for (int col : c) ++size[static_cast<std::size_t>(col)];
    int target = -1;
    for (int col = 0; col < cells; ++col) {
      if (size[static_cast<std::size_t>(col)] > 1 && (target < 0 || size[static_cast<std::size_t>(col)] < size[static_cast<std::size_t>(target)])) target = col;
    }
    std::vector<int> members;
    for (int v = 0; v < n_; ++v) {
      if (c[static_cast<std::size_t>(v)] == target) members.push_back(v);
    }
    std::vector<int> explored;
    for (int v : members) {
      if (!explored.empty()) {
        const auto orb = orbits(prefix);
        const bool seen = std::any_of(explored.begin(), explored.end(), [&](int u) { return orb[static_cast<std::size_t>(u)] == orb[static_cast<std::size_t>(v)]; });
        if (seen) continue;
      }
      // Individualize v: it moves in front of the rest of its cell.
      std::vector<std::pair<int, int>> sig(static_cast<std::size_t>(n_));
      for (int u = 0; u < n_; ++u) sig[static_cast<std::size_t>(u)] = {c[static_cast<std::size_t>(u)], u == v ? 0 : 1};
      Colouring child = c;
      rerank(child, sig);
      prefix.push_back(v);
      descend(std::move(child), prefix);
      prefix.pop_back();
      explored.push_back(v);
    }
  }

  const Graph& g_;
  int n_;
  std::string best_;
  std::vector<int> best_lab_;
  std::string first_;
  std::vector<int> first_lab_;
  std::vector<std::vector<int>> autos_;
};

}  // namespace

CanonicalCertificate canonical_certificate(const Graph& g) {
  if (g.size() > kMaxCertificateVertices) {
    throw ValidationError("canonical certificate supports n <= 16, got n=" + std::to_string(g.size()));
  }
  CanonicalCertificate cert;
  cert.bytes = Search(g).run();
  if (g.has_features()) {
    // Every leaf orders vertices consistently with the feature colouring, so
    // the sorted feature multiset pins the per-position symbols.
    std::vector<std::string> f = *g.features();
    std::sort(f.begin(), f.end());
    for (const auto& s : f) {
      cert.bytes.push_back('\x1f');
      cert.bytes += s;
    }
  }
  return cert;
}

std::uint64_t refinement_hash(const Graph& g) {
  Colouring c = initial_colouring(g);
  refine(g, c);
  // Hash the multiset of (colour, out-colour counts) rows plus colour sizes.
  const int cells = cell_count(c);
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(g.size()));
  for (int v = 0; v < g.size(); ++v) {
    auto& r = rows[static_cast<std::size_t>(v)];
    r.assign(static_cast<std::size_t>(cells + 1), 0);
    r[0] = c[static_cast<std::size_t>(v)];
    for (int u : g.out_neighbors(v)) ++r[static_cast<std::size_t>(1 + c[static_cast<std::size_t>(u)])];
  }
  std::sort(rows.begin(), rows.end());
  std::uint64_t h = mix64(static_cast<std::uint64_t>(g.size()));
  for (const auto& r : rows) {
    for (int x : r) h = mix64(h ^ static_cast<std::uint64_t>(x + 1));
  }
  if (g.has_features()) {
    std::vector<std::string> f = *g.features();
    std::sort(f.begin(), f.end());
    for (const auto& s : f) {
      for (char ch : s) h = mix64(h ^ static_cast<unsigned char>(ch));
      h = mix64(h ^ 0xFFu);
    }
  }
  return h;
}

}  // namespace isflab
