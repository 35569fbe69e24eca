#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "isflab/corpus.hpp"
#include "isflab/error.hpp"

using namespace isflab;

namespace {

const PatternLibrary& lib() {
  static const PatternLibrary l = PatternLibrary::load_default();
  return l;
}

// Brute-force vertex-set matches straight from the definition: every injective
// tuple whose pattern edges all exist in the host, grouped by vertex set.
std::set<std::set<int>> brute_sets(const Graph& g, const Pattern& p) {
  const int n = g.size(), k = p.k();
  std::set<std::set<int>> out;
  std::vector<int> t(static_cast<std::size_t>(k), 0);
  while (true) {
    std::set<int> s(t.begin(), t.end());
    if (static_cast<int>(s.size()) == k) {
      bool ok = true;
      for (const Edge& e : p.graph().edges()) ok = ok && g.has_edge(t[e.src], t[e.dst]);
      if (ok) out.insert(s);
    }
    int i = 0;
    while (i < k && ++t[static_cast<std::size_t>(i)] == n) t[static_cast<std::size_t>(i++)] = 0;
    if (i == k) break;
  }
  return out;
}

std::set<std::set<int>> as_sets(const MatchSet& ms) {
  std::set<std::set<int>> out;
  for (const auto& t : ms.tuples) out.insert(std::set<int>(t.begin(), t.end()));
  return out;
}

// Plain permutation isomorphism test, for small graphs.
bool isomorphic(const Graph& a, const Graph& b) {
  if (a.size() != b.size() || a.edges().size() != b.edges().size()) return false;
  std::vector<int> perm(static_cast<std::size_t>(a.size()));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (const Edge& e : a.edges()) {
      if (!b.has_edge(perm[static_cast<std::size_t>(e.src)], perm[static_cast<std::size_t>(e.dst)])) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

TaskSpec small_single(const std::string& pattern) {
  TaskSpec s;
  s.kind = TaskKind::Single;
  s.patterns = {pattern};
  s.train = 200;
  s.test = 50;
  s.n = {5, 6};
  s.edges = {4, 10};
  s.seed = 11;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("isflab_corpus_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(TaskSpec, JsonRoundTrip) {
  TaskSpec s = small_single("square");
  s.kind = TaskKind::MultiShape;
  s.patterns = {"triangle", "square"};
  s.ratios = {1.0 / 7, 6.0 / 7};
  s.prompt = PromptChoice::parse("topo2");
  s.representation = Representation::EL;
  s.match.mode = MatchMode::Induced;
  s.plant = true;
  s.max_len = 300;
  const TaskSpec r = task_spec_from_json(task_spec_to_json(s));
  EXPECT_EQ(task_spec_to_json(r), task_spec_to_json(s));
  EXPECT_EQ(r.prompt.naming, 1);
  EXPECT_TRUE(r.plant);
}

TEST(TaskSpec, RejectsBadConfigs) {
  EXPECT_THROW(task_spec_from_json({{"kind", "single"}, {"patern", "x"}}), ConfigError);
  EXPECT_THROW(task_spec_from_json({{"kind", "nope"}}), ConfigError);
  EXPECT_THROW(PromptChoice::parse("topo0"), ConfigError);

  TaskSpec s = small_single("triangle");
  s.max_matches = 2;
  EXPECT_THROW(s.validate(), ConfigError);
  s.kind = TaskKind::MultiNum;
  s.max_matches = 5;
  EXPECT_NO_THROW(s.validate());
  s.max_matches = 6;
  EXPECT_THROW(s.validate(), ConfigError);

  TaskSpec m = small_single("triangle");
  m.kind = TaskKind::MultiShape;
  m.patterns = {"triangle", "square"};
  m.ratios = {0.5, 0.6};
  EXPECT_THROW(m.validate(), ConfigError);

  TaskSpec big = small_single("triangle");
  big.n = {4, 17};
  EXPECT_THROW(big.validate(), ConfigError);
}

TEST(Corpus, SplitSizesCarveValidationFromTrain) {
  TaskSpec s = small_single("triangle");
  const auto sz = split_sizes(s);
  EXPECT_EQ(sz.train, 180u);
  EXPECT_EQ(sz.val, 20u);
  EXPECT_EQ(sz.test, 50u);
}

TEST(Corpus, SingleAnswersMatchBruteForceAndSplitsAreDisjoint) {
  const TaskSpec s = small_single("triangle");
  const Dataset d = build_single(s, lib());
  ASSERT_EQ(d.split("train").size(), 180u);
  ASSERT_EQ(d.split("val").size(), 20u);
  ASSERT_EQ(d.split("test").size(), 50u);
  const Pattern& p = lib().at("triangle");
  std::map<std::string, std::vector<Graph>> graphs;
  for (const auto& [name, samples] : d.splits) {
    for (const Sample& smp : samples) {
      const Graph g = graph_from_json(smp.meta.at("graph"));
      EXPECT_EQ(decode_al(smp.graph_tokens, d.vocab).edges().size(), g.edges().size());
      const auto expect = brute_sets(g, p);
      ASSERT_EQ(expect.size(), 1u);
      EXPECT_EQ(as_sets(decode_answer(smp.answer_tokens, d.vocab)), expect);
      graphs[name].push_back(g);
    }
  }
  for (const Graph& a : graphs["test"]) {
    for (const char* other : {"train", "val"}) {
      for (const Graph& b : graphs[other]) ASSERT_FALSE(isomorphic(a, b));
    }
  }
  for (const Graph& a : graphs["val"]) {
    for (const Graph& b : graphs["train"]) ASSERT_FALSE(isomorphic(a, b));
  }
  const AuditReport rep = audit_dataset(d);
  EXPECT_TRUE(rep.ok()) << rep.to_json().dump();
  EXPECT_EQ(rep.samples, 250u);
}

TEST(Corpus, SplitsShareOneGraphDistribution) {
  // A small class space: a first-come split would hand the common classes to
  // whichever split fills first. Hash routing is unbiased, so the test-train
  // gap in mean edge count averages out over seeds.
  TaskSpec s = small_single("triangle");
  s.n = {5, 5};
  s.edges = {3, 10};
  s.train = 1000;
  s.test = 500;
  double gap = 0;
  const int seeds = 16;
  for (int seed = 1; seed <= seeds; ++seed) {
    s.seed = static_cast<std::uint64_t>(seed);
    const Dataset d = build_single(s, lib());
    auto mean_edges = [&](const char* split) {
      double sum = 0;
      for (const Sample& x : d.split(split)) sum += static_cast<double>(graph_from_json(x.meta["graph"]).edge_count());
      return sum / static_cast<double>(d.split(split).size());
    };
    gap += mean_edges("test") - mean_edges("train");
    ASSERT_TRUE(audit_dataset(d).ok());
  }
  EXPECT_NEAR(gap / seeds, 0.0, 0.15);
}

TEST(Corpus, DeterministicAndWorkerIndependent) {
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  TaskSpec s = small_single("square");
  const auto a = temp_dir("det_a"), b = temp_dir("det_b");
  write_dataset(build_single(s, lib(), {1}), a);
  write_dataset(build_single(s, lib(), {4}), b);
  for (const char* f : {"manifest.json", "vocab.json", "train.jsonl", "val.jsonl", "test.jsonl"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  s.seed = 12;
  const Dataset other = build_single(s, lib());
  EXPECT_NE(sample_to_json(other.split("train").front()), sample_to_json(read_dataset(a).split("train").front()));
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST(Corpus, WriteReadRoundTrip) {
  const Dataset d = build_single(small_single("triangle"), lib());
  const auto dir = temp_dir("rt");
  write_dataset(d, dir);
  EXPECT_FALSE(std::filesystem::exists(dir / "eval_perturbed.jsonl"));
  const Dataset r = read_dataset(dir);
  EXPECT_EQ(r.manifest, d.manifest);
  EXPECT_EQ(r.vocab.hash(), d.vocab.hash());
  for (const char* split : {"train", "val", "test"}) EXPECT_EQ(r.split(split), d.split(split));
  EXPECT_EQ(r.manifest.at("counts").at("train"), 180);
  EXPECT_EQ(r.manifest.at("generation"), "rejection");
  EXPECT_TRUE(r.manifest.contains("created"));
}

TEST(Corpus, AuditCatchesCorruptionAndCollisions) {
  Dataset d = build_single(small_single("triangle"), lib());
  Dataset bad = d;
  auto& ans = bad.splits["train"][3].answer_tokens;
  std::swap(ans[0], ans[2]);
  const auto r1 = audit_dataset(bad);
  EXPECT_FALSE(r1.ok());
  EXPECT_EQ(r1.verified + 1, r1.samples);
  ASSERT_EQ(r1.failures.size(), 1u);
  EXPECT_EQ(r1.failures[0].rfind("train:3:", 0), 0u);

  Dataset leak = d;
  leak.splits["test"].push_back(leak.splits["train"][0]);
  const auto r2 = audit_dataset(leak, {3});
  EXPECT_EQ(r2.collisions, 1u);
  EXPECT_FALSE(r2.ok());
}

TEST(Corpus, MultiNumBinsAreUniform) {
  TaskSpec s = small_single("triangle");
  s.kind = TaskKind::MultiNum;
  s.max_matches = 5;
  s.n = {6, 8};
  s.edges = {8, 20};
  s.train = 250;
  s.test = 100;
  const Dataset d = build_multinum(s, lib(), {2});
  const Pattern& p = lib().at("triangle");
  for (const char* split : {"train", "test"}) {
    std::map<std::size_t, int> bins;
    for (const Sample& smp : d.split(split)) {
      const Graph g = graph_from_json(smp.meta.at("graph"));
      const auto got = as_sets(decode_answer(smp.answer_tokens, d.vocab));
      EXPECT_EQ(got, brute_sets(g, p));
      ++bins[got.size()];
    }
    ASSERT_EQ(bins.size(), 5u);
    const auto [lo, hi] = std::minmax_element(bins.begin(), bins.end(),
                                              [](const auto& a, const auto& b) { return a.second < b.second; });
    EXPECT_LE(hi->second - lo->second, 1) << split;
  }
  EXPECT_TRUE(audit_dataset(d, {2}).ok());
}

TEST(Corpus, MultiShapeRatioWithinOnePercent) {
  TaskSpec s = small_single("triangle");
  s.kind = TaskKind::MultiShape;
  s.patterns = {"triangle", "square"};
  s.ratios = {1.0 / 7, 6.0 / 7};
  s.train = 700;
  s.test = 140;
  const Dataset d = build_multishape(s, lib(), {2});
  for (const char* split : {"train", "val", "test"}) {
    const auto& v = d.split(split);
    const auto tri = std::count_if(v.begin(), v.end(), [](const Sample& x) { return x.meta["pattern"] == "triangle"; });
    EXPECT_NEAR(static_cast<double>(tri) / static_cast<double>(v.size()), 1.0 / 7, 0.01) << split;
  }
  // The prompt picks the target.
  std::set<TokenSeq> prompts;
  for (const Sample& x : d.split("train")) prompts.insert(x.prompt_tokens);
  EXPECT_EQ(prompts.size(), 2u);
  EXPECT_TRUE(audit_dataset(d).ok());
}

TEST(Corpus, MultiShapeSplitsStayDisjointAcrossPatterns) {
  // Tiny hosts: the two patterns draw from the same few graphs.
  TaskSpec s = small_single("triangle");
  s.kind = TaskKind::MultiShape;
  s.patterns = {"square", "diamond"};
  s.ratios = {0.5, 0.5};
  s.n = {4, 5};
  s.edges = {3, 8};
  s.train = 300;
  s.test = 60;
  const Dataset d = build_multishape(s, lib(), {1});
  std::map<std::string, std::set<std::string>> owner;
  for (const char* split : {"train", "val", "test"}) {
    for (const Sample& x : d.split(split)) owner[split_key(graph_from_json(x.meta["graph"]))].insert(split);
  }
  for (const auto& [k, splits] : owner) EXPECT_EQ(splits.size(), 1u) << k;
  EXPECT_TRUE(audit_dataset(d).ok());
}

TEST(Corpus, PromptMixtureThirdsAndPerturbedSets) {
  TaskSpec s = small_single("triangle");
  s.kind = TaskKind::PromptMixture;
  s.patterns = {"triangle", "square"};
  s.train = 300;
  s.test = 60;
  const Dataset d = build_prompt_mixture(s, lib());
  for (const char* split : {"train", "test"}) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const Sample& x : d.split(split)) ++counts[{x.meta["pattern"], x.meta["prompt"]}];
    ASSERT_EQ(counts.size(), 6u);
    for (const auto& [k, c] : counts) {
      EXPECT_LE(std::abs(c - counts.begin()->second), 1) << k.first << " " << k.second;
    }
  }
  for (const Sample& x : d.split("train")) EXPECT_FALSE(x.meta.contains("perturb"));
  const auto& pert = d.split("eval_perturbed");
  std::size_t topo1_test = 0;
  for (const Sample& x : d.split("test")) topo1_test += x.meta["prompt"] == "topo1";
  EXPECT_EQ(pert.size(), topo1_test * 4);
  std::set<std::string> train_graphs;
  for (const Sample& x : d.split("train")) train_graphs.insert(x.meta["graph"].dump());
  for (const Sample& x : pert) EXPECT_FALSE(train_graphs.count(x.meta["graph"].dump()));
  const Vocab& v = d.vocab;
  for (const Sample& x : pert) {
    if (x.meta["perturb"] == "pad") {
      for (int t : x.prompt_tokens) EXPECT_TRUE(t == Vocab::kPad || t == Vocab::kColon || t == Vocab::kComma);
    }
    if (x.meta["perturb"] == "token:C") {
      for (int t : x.prompt_tokens) EXPECT_TRUE(t == v.id("C") || t == Vocab::kColon || t == Vocab::kComma);
    }
  }
  const auto rep = audit_dataset(d, {2});
  EXPECT_TRUE(rep.ok()) << rep.to_json().dump();
  const auto dir = temp_dir("mix");
  write_dataset(d, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "eval_perturbed.jsonl"));
}

TEST(Corpus, TinsControlSharesGraphsAndFinalAnswer) {
  TaskSpec s = small_single("house");
  s.kind = TaskKind::Tins;
  s.max_matches = 3;
  s.n = {6, 8};
  s.edges = {8, 18};
  s.plant = true;
  s.train = 100;
  s.test = 30;
  const auto t = build_tins(s, lib(), {2});
  EXPECT_EQ(t.tins.manifest.at("variant"), "tins");
  EXPECT_EQ(t.control.manifest.at("variant"), "control");
  EXPECT_EQ(t.tins.manifest.at("generation"), "plant");
  for (const char* split : {"train", "val", "test"}) {
    const auto& a = t.tins.split(split);
    const auto& b = t.control.split(split);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].graph_tokens, b[i].graph_tokens);
      EXPECT_EQ(a[i].prompt_tokens, b[i].prompt_tokens);
      const auto fin = final_answer_region(a[i].answer_tokens, t.tins.vocab);
      ASSERT_TRUE(fin.has_value());
      EXPECT_EQ(decode_answer(*fin, t.tins.vocab), decode_answer(b[i].answer_tokens, t.control.vocab));
      const Graph g = graph_from_json(a[i].meta.at("graph"));
      EXPECT_EQ(as_sets(decode_answer(b[i].answer_tokens, t.control.vocab)), brute_sets(g, lib().at("house")));
    }
  }
  EXPECT_TRUE(audit_dataset(t.tins, {2}).ok());
  EXPECT_TRUE(audit_dataset(t.control, {2}).ok());
}

TEST(Corpus, MaxLenIsRespected) {
  TaskSpec s = small_single("triangle");
  s.max_len = 60;
  const Dataset d = build_single(s, lib());
  for (const auto& [name, samples] : d.splits) {
    for (const Sample& x : samples) EXPECT_LE(sequence_length(x), 60u);
  }
}

TEST(Corpus, InfeasibleSpecFailsFast) {
  // Complete digraphs on 6 vertices hold many triangles, never exactly one.
  TaskSpec s = small_single("triangle");
  s.n = {6, 6};
  s.edges = {30, 30};
  s.probe_batch = 500;
  try {
    build_single(s, lib());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("acceptance rate"), std::string::npos);
  }
}

TEST(Molecules, GeneratorProducesValidRecords) {
  const auto mols = generate_molecules(200, {3, 9}, 5);
  ASSERT_EQ(mols.size(), 200u);
  for (const auto& m : mols) {
    EXPECT_GE(m.atoms.size(), 3u);
    EXPECT_LE(m.atoms.size(), 9u);
    const Graph g = molecule_graph(m);
    EXPECT_EQ(g.edges().size(), 2 * m.bonds.size());
    for (const Edge& e : g.edges()) EXPECT_TRUE(g.has_edge(e.dst, e.src));
  }
  EXPECT_EQ(generate_molecules(5, {3, 9}, 5)[4].bonds, mols[4].bonds);
  // Valences hold and every functional group occurs somewhere.
  const std::map<std::string, int> valence{{"C", 4}, {"N", 3}, {"O", 2}};
  std::map<std::string, int> hits;
  for (const auto& m : generate_molecules(500, {2, 30}, 6)) {
    std::vector<int> deg(m.atoms.size(), 0);
    for (auto [a, b] : m.bonds) ++deg[static_cast<std::size_t>(a)], ++deg[static_cast<std::size_t>(b)];
    for (std::size_t a = 0; a < deg.size(); ++a) EXPECT_LE(deg[a], valence.at(m.atoms[a]));
    const Graph g = molecule_graph(m);
    for (const char* p : {"hydroxyl", "carboxyl", "benzene"}) hits[p] += !match_attributed(g, lib().at(p)).empty();
  }
  for (const char* p : {"hydroxyl", "carboxyl", "benzene"}) EXPECT_GT(hits[p], 25) << p;
}

TEST(Molecules, IngestHydroxylAndMix) {
  const auto dir = temp_dir("mol");
  std::filesystem::create_directories(dir);
  write_molecules(dir / "molecules.jsonl", generate_molecules(3000, {3, 9}, 21));
  TaskSpec s;
  s.kind = TaskKind::Molecular;
  s.patterns = {"hydroxyl"};
  s.representation = Representation::AL_f;
  s.molecules = (dir / "molecules.jsonl").string();
  s.n = {2, 9};
  s.max_matches = 4;
  s.train = 300;
  s.test = 60;
  s.seed = 4;
  const Dataset d = ingest_molecules(s.molecules, s, lib());
  EXPECT_EQ(d.split("train").size(), 270u);
  for (const Sample& x : d.split("train")) {
    const Graph g = graph_from_json(x.meta.at("graph"));
    const MatchSet ms = decode_answer(x.answer_tokens, d.vocab);
    EXPECT_GE(ms.size(), 1u);
    EXPECT_LE(ms.size(), 4u);
    for (const auto& t : ms.tuples) {
      EXPECT_EQ(g.feature(t[0]), "C");
      EXPECT_EQ(g.feature(t[1]), "O");
      EXPECT_TRUE(g.has_edge(t[0], t[1]));
    }
  }
  EXPECT_TRUE(audit_dataset(d).ok());

  s.patterns = {"hydroxyl", "carboxyl"};
  s.train = 100;
  s.test = 20;
  const Dataset mix = ingest_molecules(s.molecules, s, lib());
  const auto& tr = mix.split("train");
  EXPECT_EQ(std::count_if(tr.begin(), tr.end(), [](const Sample& x) { return x.meta["pattern"] == "carboxyl"; }), 90);
  const auto rep = audit_dataset(mix);
  EXPECT_TRUE(rep.ok()) << rep.to_json().dump();
}

TEST(Molecules, UnknownAtomsAreListed) {
  const auto dir = temp_dir("badmol");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "m.jsonl");
    out << R"({"atoms":["C","O"],"bonds":[[0,1]]})" << '\n'
        << R"({"atoms":["C","Xx"],"bonds":[[0,1]]})" << '\n'
        << R"({"atoms":["Si","O"],"bonds":[[0,1]]})" << '\n';
  }
  TaskSpec s;
  s.kind = TaskKind::Molecular;
  s.patterns = {"hydroxyl"};
  s.representation = Representation::AL_f;
  s.molecules = (dir / "m.jsonl").string();
  s.train = 1;
  s.test = 1;
  try {
    ingest_molecules(s.molecules, s, lib());
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("line 3"), std::string::npos);
    EXPECT_EQ(msg.find("line 1:"), std::string::npos);
  }
}
