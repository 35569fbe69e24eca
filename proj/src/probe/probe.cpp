#include "isflab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "isflab/error.hpp"
#include "isflab/rng.hpp"

namespace isflab {

std::string to_string(ProbePosition p) { return p == ProbePosition::LastGraphToken ? "last-graph" : "last-query"; }

ProbePosition parse_probe_position(std::string_view s) {
  if (s == "last-graph") return ProbePosition::LastGraphToken;
  if (s == "last-query") return ProbePosition::LastQueryToken;
  throw ConfigError("unknown probe position '" + std::string(s) + "' (expected last-graph or last-query)");
}

std::size_t probe_index(std::span<const int> prefix, ProbePosition p) {
  const int delim = p == ProbePosition::LastGraphToken ? Vocab::kQuery : Vocab::kAnswer;
  const auto it = std::ranges::find(prefix, delim);
  if (it == prefix.end()) throw ValidationError(std::string("probe position: no ") + (delim == Vocab::kQuery ? "<q>" : "<a>") + " token");
  const auto i = static_cast<std::size_t>(it - prefix.begin());
  if (i < 2) throw ValidationError("probe position: no graph tokens before <q>");
  return i - 1;
}

std::string answer_label(const Sample& s, const Vocab& vocab) {
  bool wide = false;
  for (int t : s.answer_tokens) {
    if (auto v = vocab.node_value(t); v && *v > 9) wide = true;
  }
  std::string out;
  bool prev_node = false;
  for (int t : s.answer_tokens) {
    if (auto v = vocab.node_value(t)) {
      if (wide && prev_node) out += '.';
      out += std::to_string(*v);
      prev_node = true;
    } else {
      out += vocab.token(t);
      prev_node = false;
    }
  }
  return out;
}

ProbeDump capture(const Transformer<float>& m, const Vocab& vocab, std::span<const Sample> samples, ProbePosition pos,
                  const CaptureOptions& opt) {
  if (vocab.size() != m.config().vocab_size) throw ValidationError("probe samples use a different vocab than the checkpoint");
  const int depth = m.config().layers;
  ProbeDump d;
  d.position = pos;
  d.layers = opt.layers;
  if (d.layers.empty()) {
    for (int l = 1; l <= depth; ++l) d.layers.push_back(l);
  }
  for (int l : d.layers) {
    if (l < 1 || l > depth) throw ConfigError("probe layer " + std::to_string(l) + " outside 1.." + std::to_string(depth));
  }
  d.checkpoint_hash = model_hash(m);
  const std::size_t n = samples.size();
  std::vector<TokenSeq> prefixes(n);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    prefixes[i] = generation_prefix(samples[i]);
    try {
      rows[i] = probe_index(prefixes[i], pos);
    } catch (const ValidationError& e) {
      throw ValidationError("sample " + std::to_string(i) + ": " + e.what());
    }
    d.labels.push_back(answer_label(samples[i], vocab));
    d.sample_ids.push_back(i);
  }
  for (std::size_t j = 0; j < d.layers.size(); ++j) d.hidden.emplace_back(static_cast<Eigen::Index>(n), m.config().width);

  const std::size_t batch = std::max<std::size_t>(1, opt.batch);
  const std::size_t chunks = (n + batch - 1) / batch;
  const auto workers = static_cast<std::size_t>(std::max(1, opt.workers));
  auto work = [&](std::size_t w) {
    std::vector<Mat<float>> hidden;
    for (std::size_t c = w; c < chunks; c += workers) {
      PackedBatch b;
      const std::size_t lo = c * batch, hi = std::min(n, lo + batch);
      for (std::size_t i = lo; i < hi; ++i) b.add(prefixes[i]);
      m.forward(b, &hidden);
      for (std::size_t i = lo; i < hi; ++i) {
        const auto r = static_cast<Eigen::Index>(b.begin(i - lo) + rows[i]);
        for (std::size_t j = 0; j < d.layers.size(); ++j) {
          d.hidden[j].row(static_cast<Eigen::Index>(i)) = hidden[static_cast<std::size_t>(d.layers[j] - 1)].row(r);
        }
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  return d;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x, const Eigen::VectorXd& xsq, const Eigen::MatrixXd& c) {
  Eigen::MatrixXd d = -2.0 * x * c.transpose();
  d.colwise() += xsq;
  d.rowwise() += c.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

KMeansResult lloyd(const Eigen::MatrixXd& x, const Eigen::VectorXd& xsq, int k, CounterRng& rng, int max_iter) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  // k-means++ seeding.
  c.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd best = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = best.sum();
    Eigen::Index pick = 0;
    if (total <= 0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= best(pick);
        if (u < 0) break;
      }
    }
    c.row(j) = x.row(pick);
    best = best.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
  }

  KMeansResult r;
  r.assignment.assign(static_cast<std::size_t>(n), -1);
  Eigen::VectorXd dmin(n);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd d = squared_distances(x, xsq, c);
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index a = 0;
      dmin(i) = d.row(i).minCoeff(&a);
      if (r.assignment[static_cast<std::size_t>(i)] != a) {
        r.assignment[static_cast<std::size_t>(i)] = static_cast<int>(a);
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<Eigen::Index> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = r.assignment[static_cast<std::size_t>(i)];
      sum.row(a) += x.row(i);
      ++count[static_cast<std::size_t>(a)];
    }
    for (int j = 0; j < k; ++j) {
      if (count[static_cast<std::size_t>(j)]) {
        c.row(j) = sum.row(j) / static_cast<double>(count[static_cast<std::size_t>(j)]);
      } else {
        // Empty cluster: restart it at the point farthest from its center.
        Eigen::Index far = 0;
        dmin.maxCoeff(&far);
        c.row(j) = x.row(far);
        dmin(far) = 0;
      }
    }
  }
  const Eigen::MatrixXd d = squared_distances(x, xsq, c);
  r.inertia = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index a = 0;
    r.inertia += d.row(i).minCoeff(&a);
    r.assignment[static_cast<std::size_t>(i)] = static_cast<int>(a);
  }
  r.centers = std::move(c);
  return r;
}

double comb2(double v) { return v * (v - 1) / 2; }

std::vector<int> dense_ids(std::span<const int> a) {
  std::map<int, int> ids;
  std::vector<int> out;
  for (int v : a) out.push_back(ids.try_emplace(v, static_cast<int>(ids.size())).first->second);
  return out;
}

struct Contingency {
  std::vector<std::vector<double>> cells;
  std::vector<double> rows, cols;
  double n = 0;
};

Contingency contingency(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("labelings differ in length");
  if (a.empty()) throw ValidationError("labelings are empty");
  const auto da = dense_ids(a), db = dense_ids(b);
  Contingency t;
  t.rows.assign(static_cast<std::size_t>(*std::ranges::max_element(da) + 1), 0);
  t.cols.assign(static_cast<std::size_t>(*std::ranges::max_element(db) + 1), 0);
  t.cells.assign(t.rows.size(), std::vector<double>(t.cols.size(), 0));
  for (std::size_t i = 0; i < da.size(); ++i) {
    const auto r = static_cast<std::size_t>(da[i]), c = static_cast<std::size_t>(db[i]);
    ++t.cells[r][c];
    ++t.rows[r];
    ++t.cols[c];
  }
  t.n = static_cast<double>(a.size());
  return t;
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0;
  for (double c : counts) {
    if (c > 0) h -= c / n * std::log(c / n);
  }
  return h;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts, int max_iter) {
  if (k < 1 || k > x.rows()) throw ValidationError("k-means needs 1 <= k <= samples (k=" + std::to_string(k) + ", samples=" + std::to_string(x.rows()) + ")");
  if (restarts < 1 || max_iter < 1) throw ConfigError("k-means restarts and iterations must be positive");
  const Eigen::VectorXd xsq = x.rowwise().squaredNorm();
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    KMeansResult cur = lloyd(x, xsq, k, rng, max_iter);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  const Contingency t = contingency(a, b);
  double index = 0, sa = 0, sb = 0;
  for (const auto& row : t.cells) {
    for (double v : row) index += comb2(v);
  }
  for (double v : t.rows) sa += comb2(v);
  for (double v : t.cols) sb += comb2(v);
  const double total = comb2(t.n);
  const double expected = total > 0 ? sa * sb / total : 0;
  const double max_index = (sa + sb) / 2;
  // Both labelings trivial (one cluster each, or all singletons): identical partitions.
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

double normalized_mutual_info(std::span<const int> a, std::span<const int> b) {
  const Contingency t = contingency(a, b);
  const double ha = entropy(t.rows, t.n), hb = entropy(t.cols, t.n);
  if (ha == 0 && hb == 0) return 1.0;
  double mi = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < t.cols.size(); ++c) {
      const double v = t.cells[r][c];
      if (v > 0) mi += v / t.n * std::log(t.n * v / (t.rows[r] * t.cols[c]));
    }
  }
  return std::clamp(mi / ((ha + hb) / 2), 0.0, 1.0);
}

std::vector<LayerMetrics> cluster_metrics(const ProbeDump& dump, const ClusterOptions& opt) {
  std::map<std::string, int> ids;
  std::vector<int> truth;
  for (const auto& l : dump.labels) truth.push_back(ids.try_emplace(l, static_cast<int>(ids.size())).first->second);
  if (ids.size() < 2) throw ValidationError("cluster metrics are undefined with fewer than two distinct labels");
  const auto k = static_cast<int>(ids.size());
  std::vector<LayerMetrics> out;
  for (std::size_t j = 0; j < dump.hidden.size(); ++j) {
    const Eigen::MatrixXd x = dump.hidden[j].cast<double>();
    if (static_cast<std::size_t>(x.rows()) != truth.size()) throw ValidationError("probe dump has mismatched label and row counts");
    // Canonical row order removes any dependence on sample order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::ranges::stable_sort(order, [&](Eigen::Index p, Eigen::Index q) {
      return std::lexicographical_compare(x.row(p).begin(), x.row(p).end(), x.row(q).begin(), x.row(q).end());
    });
    Eigen::MatrixXd sorted(x.rows(), x.cols());
    for (std::size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = x.row(order[i]);
    const KMeansResult km = kmeans(sorted, k, opt.seed, opt.restarts);
    std::vector<int> cluster(truth.size());
    for (std::size_t i = 0; i < order.size(); ++i) cluster[static_cast<std::size_t>(order[i])] = km.assignment[i];
    out.push_back({dump.layers.at(j), adjusted_rand_index(truth, cluster), normalized_mutual_info(truth, cluster)});
  }
  return out;
}

Projection project2d(const Eigen::MatrixXd& x) {
  if (x.rows() < 3) throw ValidationError("projection needs at least 3 samples");
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = xc.transpose() * xc / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index d = cov.rows();
  Projection p;
  p.coords = Eigen::MatrixXd::Zero(x.rows(), 2);
  p.explained.setZero();
  const double top = std::max(0.0, eig.eigenvalues()(d - 1));
  const double tol = 1e-12 * std::max(top, 1.0);
  for (int axis = 0; axis < 2 && axis < d; ++axis) {
    const double lambda = std::max(0.0, eig.eigenvalues()(d - 1 - axis));
    if (lambda <= tol) {
      p.degenerate = true;
      continue;
    }
    Eigen::VectorXd col = xc * eig.eigenvectors().col(d - 1 - axis);
    Eigen::Index big = 0;
    col.cwiseAbs().maxCoeff(&big);
    if (col(big) < 0) col = -col;
    p.coords.col(axis) = col;
    p.explained(axis) = lambda;
  }
  if (d < 2) p.degenerate = true;
  return p;
}

}  // namespace isflab
