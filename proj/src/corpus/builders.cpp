#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"
#include "isflab/rng.hpp"

namespace isflab {
namespace {

constexpr std::array<const char*, 3> kSplitOrder{"test", "val", "train"};
constexpr const char* kToolVersion = "0.1.0";

struct Candidate {
  int key = 0;  // quota bucket
  Sample sample;
  std::optional<Sample> twin;  // Tins control
  std::string split_key;
};

using MakeFn = std::function<std::optional<Candidate>(std::uint64_t seed)>;

std::string timestamp() {
  std::time_t t;
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Each split-disjointness key is routed to one split by a seeded hash, with
// split probabilities proportional to the split sizes. Every split therefore
// sees the same distribution over keys, and no key can land in two splits.
// Attempt i of a stream always uses derive_seed(stream_seed, i) and
// candidates are accepted in attempt order, so the result does not depend on
// the worker count.
class SplitRouter {
 public:
  explicit SplitRouter(const TaskSpec& s) : seed_(derive_seed(s.seed, 0x73706c6974ULL)) {
    const SplitSizes sz = split_sizes(s);
    const double total = static_cast<double>(sz.test + sz.val + sz.train);
    if (total > 0) {
      cut_[0] = static_cast<double>(sz.test) / total;
      cut_[1] = static_cast<double>(sz.test + sz.val) / total;
    }
  }

  std::size_t operator()(const std::string& key) const {
    std::uint64_t h = seed_;
    for (unsigned char ch : key) h = mix64(h ^ ch);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return u < cut_[0] ? 0 : u < cut_[1] ? 1 : 2;
  }

 private:
  std::uint64_t seed_;
  std::array<double, 2> cut_{0, 0};
};

class SplitFiller {
 public:
  SplitFiller(const TaskSpec& s, int workers) : spec_(s), workers_(std::max(1, workers)), route_(s) {}

  // Returned in split index order (test, val, train).
  std::array<std::vector<Candidate>, 3> fill(std::uint64_t stream_seed, std::array<std::map<int, std::size_t>, 3> quota,
                                             const MakeFn& make, const std::string& label) {
    std::array<std::vector<Candidate>, 3> out;
    std::size_t needed = 0;
    for (const auto& q : quota) {
      for (const auto& [k, n] : q) needed += n;
    }
    if (needed == 0) return out;
    const std::size_t batch = static_cast<std::size_t>(workers_) * 64;
    const std::size_t cap = 10 * spec_.probe_batch + 2000 * needed;
    std::size_t attempts = 0, passed = 0, kept = 0;
    bool probed = false;
    std::vector<std::optional<Candidate>> cands(batch);
    while (kept < needed) {
      run_batch(cands, stream_seed, attempts, make);
      for (std::size_t i = 0; i < batch && kept < needed; ++i) {
        ++attempts;
        auto& c = cands[i];
        if (!c) continue;
        ++passed;
        const std::size_t split = route_(c->split_key);
        auto q = quota[split].find(c->key);
        if (q == quota[split].end() || q->second == 0) continue;
        --q->second;
        ++kept;
        out[split].push_back(std::move(*c));
      }
      if (!probed && attempts >= spec_.probe_batch) {
        probed = true;
        const double rate = static_cast<double>(passed) / static_cast<double>(attempts);
        if (rate < spec_.min_acceptance) {
          throw ConfigError("infeasible task: acceptance rate " + std::to_string(rate) + " over " + std::to_string(attempts) +
                            " attempts for " + label);
        }
      }
      if (kept < needed && attempts >= cap) {
        std::string have;
        for (std::size_t sp = 0; sp < out.size(); ++sp) have += std::string(" ") + kSplitOrder[sp] + " " + std::to_string(out[sp].size());
        throw ConfigError("could not fill " + label + " after " + std::to_string(attempts) + " attempts:" + have + " of " +
                          std::to_string(needed) + " total");
      }
    }
    nlohmann::json k = nlohmann::json::object();
    for (std::size_t sp = 0; sp < out.size(); ++sp) k[kSplitOrder[sp]] = out[sp].size();
    stats_[label] = {{"attempts", attempts}, {"oracle_accepted", passed}, {"kept", k}};
    return out;
  }

  const nlohmann::json& stats() const { return stats_; }

 private:
  void run_batch(std::vector<std::optional<Candidate>>& cands, std::uint64_t stream_seed, std::size_t base, const MakeFn& make) {
    auto work = [&](std::size_t w) {
      for (std::size_t i = w; i < cands.size(); i += static_cast<std::size_t>(workers_)) {
        cands[i] = make(derive_seed(stream_seed, base + i));
      }
    };
    if (workers_ == 1) {
      work(0);
      return;
    }
    std::vector<std::thread> threads;
    std::exception_ptr err;
    std::mutex mu;
    for (int w = 0; w < workers_; ++w) {
      threads.emplace_back([&, w] {
        try {
          work(static_cast<std::size_t>(w));
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    if (err) std::rethrow_exception(err);
  }

  const TaskSpec& spec_;
  int workers_;
  SplitRouter route_;
  nlohmann::json stats_ = nlohmann::json::object();
};

std::size_t split_target(const SplitSizes& sz, std::size_t split) {
  return split == 0 ? sz.test : split == 1 ? sz.val : sz.train;
}

std::uint64_t stream_seed(const TaskSpec& s, std::size_t split, std::size_t stream) {
  return derive_seed(derive_seed(s.seed, split + 1), stream);
}

using Quota = std::map<int, std::size_t>;

std::array<std::vector<Candidate>, 3> fill_splits(SplitFiller& filler, const TaskSpec& s, std::size_t stream,
                                                  const std::array<Quota, 3>& quota, const MakeFn& make,
                                                  const std::string& label) {
  return filler.fill(stream_seed(s, 0, stream), quota, make, label);
}

std::array<Quota, 3> split_quotas(const SplitSizes& sz, const std::function<Quota(std::size_t)>& q) {
  return {q(sz.test), q(sz.val), q(sz.train)};
}

// Host graph for one attempt; plant mode forces a copy of the pattern onto
// random vertices before the uniqueness filter runs.
std::optional<Graph> draw_host(const TaskSpec& s, const Pattern& p, std::uint64_t seed) {
  Graph g = random_graph(s.n, s.edges, seed);
  if (!s.plant) return g;
  if (g.size() < p.k()) return std::nullopt;
  CounterRng rng(mix64(seed ^ 0x706c616e74ULL));
  std::vector<int> verts(static_cast<std::size_t>(g.size()));
  for (int v = 0; v < g.size(); ++v) verts[static_cast<std::size_t>(v)] = v;
  rng.shuffle(verts);
  AdjacencyMatrix a = adjacency(g);
  for (const Edge& e : p.graph().edges()) a.set(verts[static_cast<std::size_t>(e.src)], verts[static_cast<std::size_t>(e.dst)], true);
  return from_adjacency(a);
}

nlohmann::json base_meta(const TaskSpec& s, const std::string& pattern, const std::string& prompt, std::uint64_t seed,
                         const Graph& g) {
  return {{"kind", to_string(s.kind)}, {"pattern", pattern}, {"prompt", prompt}, {"seed", seed}, {"graph", graph_to_json(g)}};
}

bool fits(const TaskSpec& s, const Sample& smp) { return s.max_len == 0 || sequence_length(smp) <= s.max_len; }

// Candidate for tasks whose answer is the direct MatchSet encoding.
std::optional<Candidate> direct_candidate(const TaskSpec& s, const Pattern& p, const Vocab& vocab, const PromptChoice& pc,
                                          int lo, int hi, std::uint64_t seed) {
  auto g = draw_host(s, p, seed);
  if (!g) return std::nullopt;
  const MatchSet ms = enumerate_matches(*g, p, s.match);
  const int c = static_cast<int>(ms.size());
  if (c < lo || c > hi) return std::nullopt;
  Candidate cand;
  cand.key = c;
  cand.sample.graph_tokens = encode_graph(*g, s.representation, vocab);
  cand.sample.prompt_tokens = encode_prompt(p, pc.mode, vocab, pc.naming);
  cand.sample.answer_tokens = encode_answer(ms, vocab);
  cand.sample.meta = base_meta(s, *p.name(), pc.label(), seed, *g);
  cand.sample.meta["count"] = c;
  if (!fits(s, cand.sample)) return std::nullopt;
  cand.split_key = split_key(*g);
  return cand;
}

std::map<int, std::size_t> single_quota(std::size_t n) { return {{1, n}}; }

std::map<int, std::size_t> bin_quota(std::size_t n, int cap) {
  std::map<int, std::size_t> q;
  for (int b = 1; b <= cap; ++b) {
    q[b] = n / static_cast<std::size_t>(cap) + (static_cast<std::size_t>(b - 1) < n % static_cast<std::size_t>(cap) ? 1 : 0);
  }
  return q;
}

// Integer shares of n proportional to ratios; remainders go to the largest
// fractional parts, earlier patterns first on ties.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& ratios) {
  std::vector<std::size_t> out(ratios.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double exact = static_cast<double>(n) * ratios[i];
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    frac.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++out[frac[i % frac.size()].second];
  return out;
}

std::vector<double> ratios_of(const TaskSpec& s) {
  if (!s.ratios.empty()) return s.ratios;
  return std::vector<double>(s.patterns.size(), 1.0 / static_cast<double>(s.patterns.size()));
}

nlohmann::json manifest_for(const TaskSpec& s, const PatternLibrary& lib, const Vocab& vocab, const Dataset& d,
                            const nlohmann::json& stats, const std::string& variant) {
  nlohmann::json pats = nlohmann::json::object();
  for (const auto& name : s.patterns) pats[name] = pattern_to_json(lib.at(name));
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [name, samples] : d.splits) counts[name] = samples.size();
  return {{"tool", "isflab"},
          {"version", kToolVersion},
          {"variant", variant},
          {"task", task_spec_to_json(s)},
          {"patterns", pats},
          {"vocab_hash", vocab.hash()},
          {"counts", counts},
          {"generation", s.plant ? "plant" : "rejection"},
          {"acceptance", stats},
          {"collisions", nlohmann::json::array()},
          {"created", timestamp()}};
}

void check_kind(const TaskSpec& s, TaskKind k) {
  s.validate();
  if (s.kind != k) throw ConfigError("builder expects a " + std::string(to_string(k)) + " task");
}

void shuffle_samples(std::vector<Sample>& v, std::uint64_t seed) {
  CounterRng rng(seed);
  rng.shuffle(v);
}

Dataset single_like(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt, int lo, int hi, bool binned) {
  const Pattern& p = lib.at(s.patterns.front());
  Dataset d{Vocab(vocab_config_for(s, lib)), {}, {}};
  const Vocab& vocab = d.vocab;
  const SplitSizes sz = split_sizes(s);
  SplitFiller filler(s, opt.workers);
  MakeFn make = [&](std::uint64_t seed) { return direct_candidate(s, p, vocab, s.prompt, lo, hi, seed); };
  auto filled = fill_splits(filler, s, 0, split_quotas(sz, [&](std::size_t n) { return binned ? bin_quota(n, hi) : single_quota(n); }),
                            make, *p.name());
  for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) {
    auto& out = d.splits[kSplitOrder[sp]];
    for (auto& c : filled[sp]) out.push_back(std::move(c.sample));
    if (binned) shuffle_samples(out, derive_seed(s.seed, 100 + sp));
  }
  d.manifest = manifest_for(s, lib, vocab, d, filler.stats(), "direct");
  return d;
}

}  // namespace

Dataset build_single(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  check_kind(s, TaskKind::Single);
  return single_like(s, lib, opt, 1, 1, false);
}

Dataset build_multinum(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  check_kind(s, TaskKind::MultiNum);
  return single_like(s, lib, opt, 1, s.max_matches, true);
}

Dataset build_multishape(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  check_kind(s, TaskKind::MultiShape);
  Dataset d{Vocab(vocab_config_for(s, lib)), {}, {}};
  const Vocab& vocab = d.vocab;
  const SplitSizes sz = split_sizes(s);
  const auto ratios = ratios_of(s);
  SplitFiller filler(s, opt.workers);
  const std::array<std::vector<std::size_t>, 3> shares{apportion(sz.test, ratios), apportion(sz.val, ratios),
                                                        apportion(sz.train, ratios)};
  for (std::size_t pi = 0; pi < s.patterns.size(); ++pi) {
    const Pattern& p = lib.at(s.patterns[pi]);
    MakeFn make = [&](std::uint64_t seed) { return direct_candidate(s, p, vocab, s.prompt, 1, 1, seed); };
    const std::array<Quota, 3> q{single_quota(shares[0][pi]), single_quota(shares[1][pi]), single_quota(shares[2][pi])};
    auto filled = fill_splits(filler, s, pi, q, make, *p.name());
    for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) {
      for (auto& c : filled[sp]) d.splits[kSplitOrder[sp]].push_back(std::move(c.sample));
    }
  }
  for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) shuffle_samples(d.splits[kSplitOrder[sp]], derive_seed(s.seed, 100 + sp));
  d.manifest = manifest_for(s, lib, vocab, d, filler.stats(), "direct");
  return d;
}

Dataset build_prompt_mixture(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  check_kind(s, TaskKind::PromptMixture);
  const std::vector<PromptChoice> variants{{PromptMode::Term, 0}, {PromptMode::Topo, 0}, {PromptMode::Topo, 1}};
  for (const auto& name : s.patterns) {
    const Pattern& p = lib.at(name);
    if (!p.name() || topo_naming_count(p) < 2) throw ConfigError("pattern '" + name + "' needs a name and two topo namings");
  }
  Dataset d{Vocab(vocab_config_for(s, lib)), {}, {}};
  const Vocab& vocab = d.vocab;
  const SplitSizes sz = split_sizes(s);
  const auto ratios = ratios_of(s);
  SplitFiller filler(s, opt.workers);
  const std::array<std::vector<std::size_t>, 3> shares{apportion(sz.test, ratios), apportion(sz.val, ratios),
                                                        apportion(sz.train, ratios)};
  for (std::size_t pi = 0; pi < s.patterns.size(); ++pi) {
    const Pattern& p = lib.at(s.patterns[pi]);
    // Graphs are drawn once; the prompt variant cycles term, topo1, topo2.
    MakeFn make = [&](std::uint64_t seed) { return direct_candidate(s, p, vocab, variants[0], 1, 1, seed); };
    const std::array<Quota, 3> q{single_quota(shares[0][pi]), single_quota(shares[1][pi]), single_quota(shares[2][pi])};
    auto filled = fill_splits(filler, s, pi, q, make, *p.name());
    for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) {
      auto& got = filled[sp];
      for (std::size_t i = 0; i < got.size(); ++i) {
        const PromptChoice& pc = variants[i % variants.size()];
        Sample smp = std::move(got[i].sample);
        smp.prompt_tokens = encode_prompt(p, pc.mode, vocab, pc.naming);
        smp.meta["prompt"] = pc.label();
        d.splits[kSplitOrder[sp]].push_back(std::move(smp));
      }
    }
  }
  for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) shuffle_samples(d.splits[kSplitOrder[sp]], derive_seed(s.seed, 100 + sp));
  // Evaluation-only perturbations of the topo1 test prompts.
  auto& pert = d.splits["eval_perturbed"];
  for (const Sample& t : d.splits["test"]) {
    if (t.meta["prompt"] != "topo1") continue;
    auto add = [&](PerturbKind kind, const std::string& label, std::string_view token) {
      Sample v = t;
      v.prompt_tokens = perturb_prompt(t.prompt_tokens, kind, vocab, token);
      v.meta["perturb"] = label;
      pert.push_back(std::move(v));
    };
    add(PerturbKind::StructureOnly, "structure", {});
    add(PerturbKind::Pad, "pad", {});
    for (const auto& tok : s.perturb_tokens) add(PerturbKind::Token, "token:" + tok, tok);
  }
  d.manifest = manifest_for(s, lib, vocab, d, filler.stats(), "direct");
  return d;
}

TinsDatasets build_tins(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  check_kind(s, TaskKind::Tins);
  const Pattern& p = lib.at(s.patterns.front());
  if (!p.decomposition()) throw ConfigError("pattern '" + s.patterns.front() + "' has no decomposition");
  TinsDatasets out{Dataset{Vocab(vocab_config_for(s, lib)), {}, {}}, Dataset{Vocab(vocab_config_for(s, lib)), {}, {}}};
  const Vocab& vocab = out.tins.vocab;
  const SplitSizes sz = split_sizes(s);
  SplitFiller filler(s, opt.workers);
  MakeFn make = [&](std::uint64_t seed) -> std::optional<Candidate> {
    auto g = draw_host(s, p, seed);
    if (!g) return std::nullopt;
    TinsResult r;
    try {
      r = match_via_tins(*g, p, {s.match, s.c_max});
    } catch (const CapacityError&) {
      return std::nullopt;
    }
    const int c = static_cast<int>(r.final.size());
    if (c < 1 || c > s.max_matches) return std::nullopt;
    Candidate cand;
    cand.sample.graph_tokens = encode_graph(*g, s.representation, vocab);
    cand.sample.prompt_tokens = encode_prompt(p, s.prompt.mode, vocab, s.prompt.naming);
    cand.sample.answer_tokens = encode_answer_tins(r.parts, r.final, vocab);
    cand.sample.meta = base_meta(s, *p.name(), s.prompt.label(), seed, *g);
    cand.sample.meta["count"] = c;
    if (!fits(s, cand.sample)) return std::nullopt;
    Sample control = cand.sample;
    control.answer_tokens = encode_answer(r.final, vocab);
    control.meta["kind"] = "tins-control";
    cand.twin = std::move(control);
    cand.key = 1;
    cand.split_key = split_key(*g);
    return cand;
  };
  auto filled = fill_splits(filler, s, 0, split_quotas(sz, single_quota), make, *p.name());
  for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) {
    for (auto& c : filled[sp]) {
      out.tins.splits[kSplitOrder[sp]].push_back(std::move(c.sample));
      out.control.splits[kSplitOrder[sp]].push_back(std::move(*c.twin));
    }
  }
  out.tins.manifest = manifest_for(s, lib, vocab, out.tins, filler.stats(), "tins");
  out.control.manifest = manifest_for(s, lib, vocab, out.control, filler.stats(), "control");
  return out;
}

Dataset ingest_molecules(const std::filesystem::path& path, const TaskSpec& s, const PatternLibrary& lib, BuildOptions) {
  check_kind(s, TaskKind::Molecular);
  const auto mols = read_molecules(path);
  const std::set<std::string> allowed(s.atoms.begin(), s.atoms.end());
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    for (const auto& a : mols[i].atoms) {
      if (!allowed.count(a)) {
        bad.push_back("line " + std::to_string(i + 1) + ": '" + a + "'");
        break;
      }
    }
  }
  if (!bad.empty()) {
    std::string msg = "atom symbols outside the vocabulary:";
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + bad[i] + ";";
    if (bad.size() > 20) msg += " ... (" + std::to_string(bad.size()) + " lines)";
    throw ValidationError(msg);
  }
  Dataset d{Vocab(vocab_config_for(s, lib)), {}, {}};
  const Vocab& vocab = d.vocab;
  const SplitSizes sz = split_sizes(s);

  std::vector<std::size_t> order(mols.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng(derive_seed(s.seed, 7)).shuffle(order);

  const SplitRouter route(s);
  nlohmann::json stats = nlohmann::json::object();
  for (std::size_t gi = 0; gi < s.patterns.size(); ++gi) {
    const Pattern& p = lib.at(s.patterns[gi]);
    std::array<std::size_t, 3> kept{0, 0, 0};
    std::size_t scanned = 0, matched = 0;
    auto full = [&] {
      for (std::size_t sp = 0; sp < kept.size(); ++sp) {
        if (kept[sp] < split_target(sz, sp)) return false;
      }
      return true;
    };
    for (std::size_t cursor = 0; cursor < order.size() && !full(); ++cursor) {
      const std::size_t mi = order[cursor];
      ++scanned;
      const MoleculeRecord& m = mols[mi];
      if (static_cast<int>(m.atoms.size()) < s.n.lo || static_cast<int>(m.atoms.size()) > s.n.hi) continue;
      if (static_cast<int>(m.atoms.size()) > s.max_nodes) continue;
      const Graph g = molecule_graph(m);
      const std::string key = split_key(g);
      const std::size_t sp = route(key);
      if (kept[sp] >= split_target(sz, sp)) continue;
      const MatchSet ms = match_attributed(g, p, s.match);
      const int c = static_cast<int>(ms.size());
      if (c < 1 || c > s.max_matches) continue;
      Sample smp;
      smp.graph_tokens = encode_al_f(g, vocab);
      smp.prompt_tokens = encode_prompt(p, s.prompt.mode, vocab, s.prompt.naming);
      smp.answer_tokens = encode_answer(ms, vocab);
      smp.meta = base_meta(s, *p.name(), s.prompt.label(), mi, g);
      smp.meta["count"] = c;
      smp.meta["record"] = mi;
      if (!fits(s, smp)) continue;
      ++matched;
      d.splits[kSplitOrder[sp]].push_back(std::move(smp));
      ++kept[sp];
    }
    for (std::size_t sp = 0; sp < kept.size(); ++sp) {
      if (kept[sp] < split_target(sz, sp)) {
        throw ConfigError("not enough molecules for " + s.patterns[gi] + " " + kSplitOrder[sp] + ": " + std::to_string(kept[sp]) + "/" +
                          std::to_string(split_target(sz, sp)));
      }
    }
    stats[s.patterns[gi]] = {{"scanned", scanned}, {"kept", matched}};
  }
  for (std::size_t sp = 0; sp < kSplitOrder.size(); ++sp) shuffle_samples(d.splits[kSplitOrder[sp]], derive_seed(s.seed, 100 + sp));
  d.manifest = manifest_for(s, lib, vocab, d, stats, "direct");
  d.manifest["molecules"] = path.filename().string();
  return d;
}

BuildResult build_dataset(const TaskSpec& s, const PatternLibrary& lib, BuildOptions opt) {
  switch (s.kind) {
    case TaskKind::Single: return {build_single(s, lib, opt), std::nullopt};
    case TaskKind::MultiNum: return {build_multinum(s, lib, opt), std::nullopt};
    case TaskKind::MultiShape: return {build_multishape(s, lib, opt), std::nullopt};
    case TaskKind::PromptMixture: return {build_prompt_mixture(s, lib, opt), std::nullopt};
    case TaskKind::Tins: {
      auto t = build_tins(s, lib, opt);
      return {std::move(t.tins), std::move(t.control)};
    }
    case TaskKind::Molecular: return {ingest_molecules(s.molecules, s, lib, opt), std::nullopt};
  }
  throw ConfigError("unknown task kind");
}

}  // namespace isflab
