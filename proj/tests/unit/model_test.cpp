#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

using namespace isflab;

namespace {

ModelConfig small_config(int vocab, int max_len, bool tie = true) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 4;
  c.width = 32;
  c.dropout = 0.0;
  c.vocab_size = vocab;
  c.max_len = max_len;
  c.tie_embeddings = tie;
  return c;
}

std::vector<int> random_tokens(CounterRng& rng, int n, int vocab) {
  std::vector<int> v;
  for (int i = 0; i < n; ++i) v.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
  return v;
}

const Dataset& tiny_dataset() {
  static const Dataset d = [] {
    TaskSpec s;
    s.kind = TaskKind::Single;
    s.patterns = {"triangle"};
    s.train = 80;
    s.test = 20;
    s.n = {4, 5};
    s.edges = {3, 8};
    s.seed = 3;
    return build_single(s, PatternLibrary::load_default());
  }();
  return d;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.width = 24;
  c.dropout = 0.1;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.micro_batch = 8;
  t.accumulation = 2;
  t.max_steps = 12;
  t.eval_every = 4;
  t.eval_samples = 4;
  t.seed = 5;
  return t;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("isflab_model_" + name);
  std::filesystem::remove_all(d);
  return d;
}

// Cross-entropy straight from the definition, one position at a time.
double reference_loss(const Mat<double>& logits, const Targets& t) {
  long double sum = 0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!t.mask[static_cast<std::size_t>(i)]) continue;
    long double z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(static_cast<long double>(logits(i, j)));
    sum += std::log(z) - logits(i, t.ids[static_cast<std::size_t>(i)]);
    ++n;
  }
  return static_cast<double>(sum / static_cast<long double>(n));
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = small_config(30, 16);
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(model_config_from_json({{"layer", 2}}), ConfigError);
  TrainConfig t;
  t.schedule = "cosine";
  t.warmup = 10;
  const auto r = train_config_from_json(train_config_to_json(t));
  EXPECT_EQ(train_config_to_json(r), train_config_to_json(t));
  t.schedule = "linear";
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Transformer, CausalMaskIsExact) {
  const Transformer<float> m(small_config(30, 16), 1);
  CounterRng rng(4);
  const auto seq = random_tokens(rng, 16, 30);
  PackedBatch a;
  a.add(seq);
  const Mat<float> base = m.forward(a);
  for (int i = 0; i < 15; ++i) {
    auto changed = seq;
    for (int j = i + 1; j < 16; ++j) changed[static_cast<std::size_t>(j)] = (changed[static_cast<std::size_t>(j)] + 7) % 30;
    PackedBatch b;
    b.add(changed);
    const Mat<float> out = m.forward(b);
    for (int r = 0; r <= i; ++r) ASSERT_EQ(out.row(r), base.row(r)) << "position " << r << " after change at " << i + 1;
  }
}

TEST(Transformer, PackedSequencesAreIndependent) {
  const Transformer<float> m(small_config(30, 16), 2);
  CounterRng rng(5);
  const auto s1 = random_tokens(rng, 9, 30), s2 = random_tokens(rng, 14, 30);
  PackedBatch both, one;
  both.add(s1);
  both.add(s2);
  one.add(s2);
  const Mat<float> a = m.forward(both), b = m.forward(one);
  EXPECT_LT((a.bottomRows(14) - b).cwiseAbs().maxCoeff(), 1e-5f);
  EXPECT_EQ(m.forward(both), a);
}

TEST(Transformer, CaptureShapes) {
  ModelConfig c = small_config(30, 16);
  c.layers = 4;
  const Transformer<float> m(c, 3);
  PackedBatch b;
  CounterRng rng(6);
  b.add(random_tokens(rng, 11, 30));
  b.add(random_tokens(rng, 5, 30));
  std::vector<Mat<float>> hidden;
  const Mat<float> logits = m.forward(b, &hidden);
  ASSERT_EQ(hidden.size(), 4u);
  for (const auto& h : hidden) {
    EXPECT_EQ(h.rows(), 16);
    EXPECT_EQ(h.cols(), 32);
  }
  EXPECT_EQ(logits.rows(), 16);
  EXPECT_EQ(logits.cols(), 30);
  EXPECT_NE(hidden[0], hidden[3]);
}

TEST(Transformer, OverlongInputThrows) {
  const Transformer<float> m(small_config(30, 8), 1);
  PackedBatch b;
  b.add(std::vector<int>(9, 1));
  EXPECT_THROW(m.forward(b), LengthError);
  PackedBatch bad;
  bad.add(std::vector<int>{1, 30});
  EXPECT_THROW(m.forward(bad), ValidationError);
  auto cache = m.make_cache();
  EXPECT_THROW(m.extend(cache, std::vector<int>(9, 1)), LengthError);
}

TEST(Transformer, KvCacheMatchesFullForward) {
  for (bool tie : {true, false}) {
    const Transformer<float> m(small_config(30, 20, tie), 8);
    CounterRng rng(9);
    const auto seq = random_tokens(rng, 20, 30);
    PackedBatch b;
    b.add(seq);
    const Mat<float> full = m.forward(b);
    auto cache = m.make_cache();
    const Mat<float> pre = m.extend(cache, std::span<const int>(seq).first(12));
    EXPECT_LT((pre - full.topRows(12)).cwiseAbs().maxCoeff(), 1e-5f);
    for (int i = 12; i < 20; ++i) {
      const Mat<float> step = m.extend(cache, std::span<const int>(seq).subspan(static_cast<std::size_t>(i), 1));
      EXPECT_LT((step.row(0) - full.row(i)).cwiseAbs().maxCoeff(), 1e-5f) << i;
    }
    EXPECT_EQ(cache.len, 20);
  }
}

TEST(Loss, AnalyticValues) {
  Targets t;
  t.ids = {1, 2, 3, 0};
  t.mask = {1, 0, 1, 1};
  const Mat<double> uniform = Mat<double>::Constant(4, 7, 0.3);
  EXPECT_NEAR(masked_cross_entropy(uniform, t).loss, std::log(7.0), 1e-12);
  Mat<double> perfect = Mat<double>::Zero(4, 7);
  for (int i = 0; i < 4; ++i) perfect(i, t.ids[static_cast<std::size_t>(i)]) = 60.0;
  EXPECT_LT(masked_cross_entropy(perfect, t).loss, 1e-20);
  Targets none{{1, 2}, {0, 0}};
  EXPECT_THROW(masked_cross_entropy(Mat<double>(Mat<double>::Zero(2, 7)), none), ValidationError);
}

TEST(Loss, MatchesPerPositionSumAndMasksGradient) {
  CounterRng rng(12);
  Mat<double> logits(10, 9);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 3 * rng.normal();
  Targets t;
  for (int i = 0; i < 10; ++i) {
    t.ids.push_back(static_cast<int>(rng.below(9)));
    t.mask.push_back(i % 3 != 0);
  }
  const auto r = masked_cross_entropy(logits, t);
  EXPECT_NEAR(r.loss, reference_loss(logits, t), 1e-12);
  EXPECT_EQ(r.count, 6u);
  for (int i = 0; i < 10; i += 3) EXPECT_EQ(r.dlogits.row(i).cwiseAbs().maxCoeff(), 0.0);
  // Finite-difference check of the logit gradient.
  for (int i = 1; i < 10; i += 4) {
    for (int j = 0; j < 9; ++j) {
      Mat<double> up = logits, down = logits;
      up(i, j) += 1e-6;
      down(i, j) -= 1e-6;
      const double num = (reference_loss(up, t) - reference_loss(down, t)) / 2e-6;
      EXPECT_NEAR(r.dlogits(i, j), num, 1e-7);
    }
  }
  const auto half = masked_cross_entropy(logits, t, 12.0);
  EXPECT_NEAR(half.loss, r.loss / 2, 1e-12);
}

TEST(Loss, TargetsFollowAnswerMask) {
  Sample s;
  s.graph_tokens = {20, 5, 21};
  s.prompt_tokens = {30};
  s.answer_tokens = {20, 6, 21};
  const TrainingSequence seq = assemble(s);
  Targets t;
  append_targets(seq, t);
  ASSERT_EQ(t.ids.size(), seq.tokens.size());
  // <s> g g g <q> p <a> a , a </s>: rows 6..9 predict the answer and </s>.
  std::vector<std::uint8_t> expect{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0};
  EXPECT_EQ(t.mask, expect);
  EXPECT_EQ(t.ids[9], Vocab::kEos);
}

TEST(GradCheck, TinyConfigPasses) {
  ModelConfig c;
  c.layers = 2;
  c.width = 16;
  c.heads = 4;
  c.vocab_size = 20;
  c.max_len = 12;
  c.dropout = 0.0;
  for (bool tie : {true, false}) {
    c.tie_embeddings = tie;
    const auto r = grad_check(c, 3);
    EXPECT_LE(r.max_rel_error, 1e-3) << r.worst_parameter << "[" << r.worst_index << "]";
    EXPECT_EQ(r.off_mask_max, 0.0);
    EXPECT_GT(r.checked, 7000u);
    for (const char* name : {"tok_emb", "h0.attn.w_qkv", "h1.attn.w_o", "ln_f.g"}) EXPECT_TRUE(r.per_parameter.count(name));
  }
  c.dropout = 0.2;
  EXPECT_THROW(grad_check(c, 3), ConfigError);
}

TEST(Optim, AdamWFirstStepsMatchFormula) {
  std::vector<Parameter<double>> ps(2);
  ps[0] = {"w", Mat<double>::Constant(1, 2, 1.0), Mat<double>::Zero(1, 2), true};
  ps[1] = {"b", Mat<double>::Constant(1, 1, -2.0), Mat<double>::Zero(1, 1), false};
  TrainConfig c;
  c.weight_decay = 0.1;
  AdamW<double> opt(ps, c);
  double w = 1.0, b = -2.0, mw = 0, vw = 0, mb = 0, vb = 0;
  for (int t = 1; t <= 3; ++t) {
    const double gw = 2 * w, gb = 2 * b;  // d/dx x^2
    ps[0].grad.setConstant(gw);
    ps[1].grad.setConstant(gb);
    opt.step(ps, 0.01);
    w *= 1 - 0.01 * 0.1;
    mw = 0.9 * mw + 0.1 * gw;
    vw = 0.95 * vw + 0.05 * gw * gw;
    w -= 0.01 * (mw / (1 - std::pow(0.9, t))) / (std::sqrt(vw / (1 - std::pow(0.95, t))) + 1e-8);
    mb = 0.9 * mb + 0.1 * gb;
    vb = 0.95 * vb + 0.05 * gb * gb;
    b -= 0.01 * (mb / (1 - std::pow(0.9, t))) / (std::sqrt(vb / (1 - std::pow(0.95, t))) + 1e-8);
    EXPECT_NEAR(ps[0].value(0, 1), w, 1e-12);
    EXPECT_NEAR(ps[1].value(0, 0), b, 1e-12);
  }
}

TEST(Optim, ClipAndSchedule) {
  std::vector<Parameter<double>> ps(1);
  ps[0] = {"w", Mat<double>::Zero(1, 2), Mat<double>(1, 2), true};
  ps[0].grad << 3, 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(ps[0].grad.norm(), 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), ps[0].grad.norm());

  TrainConfig c;
  c.lr = 1e-3;
  EXPECT_DOUBLE_EQ(learning_rate(c, 500), 1e-3);
  c.warmup = 10;
  c.schedule = "cosine";
  c.max_steps = 110;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 10), 1e-3);
  EXPECT_NEAR(learning_rate(c, 110), 1e-4, 1e-12);
  EXPECT_LT(learning_rate(c, 80), learning_rate(c, 40));
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const Transformer<float> m(small_config(30, 16, false), 21);
  const Vocab vocab(VocabConfig{8, {"triangle"}, {}});
  const auto dir = temp_dir("ckpt");
  CheckpointMeta meta;
  meta.step = 7;
  meta.best_val_loss = 0.5;
  save_checkpoint(dir, m, vocab, meta);
  const Checkpoint c = load_checkpoint(dir);
  EXPECT_EQ(model_hash(c.model), model_hash(m));
  EXPECT_EQ(c.meta.step, 7u);
  EXPECT_EQ(c.vocab.hash(), vocab.hash());
  PackedBatch b;
  CounterRng rng(1);
  b.add(random_tokens(rng, 16, 30));
  EXPECT_EQ(c.model.forward(b), m.forward(b));

  std::filesystem::resize_file(dir / "params" / "ln_f.g.f32", 12);
  EXPECT_THROW(load_checkpoint(dir), ValidationError);
}

TEST(Generate, TerminatesAndFlagsTruncation) {
  ModelConfig c = small_config(30, 24);
  const Transformer<float> m(c, 2);
  std::vector<int> prefix{Vocab::kBos, 20, 21, Vocab::kQuery, 22, Vocab::kAnswer};
  const Generation g = generate(m, prefix);
  EXPECT_LE(g.tokens.size(), 24u - prefix.size());
  if (g.truncated) {
    EXPECT_EQ(g.tokens.size(), 24u - prefix.size());
  }
  EXPECT_LE(generate(m, prefix, 3).tokens.size(), 3u);
  prefix.pop_back();
  EXPECT_THROW(generate(m, prefix), ValidationError);
}

TEST(Generate, FollowsAStrongBias) {
  // With the closing token's embedding dominating every logit row, decoding
  // stops immediately.
  ModelConfig c = small_config(30, 24);
  c.layers = 1;
  Transformer<float> m(c, 2);
  m.param("ln_f.g").value.setZero();
  m.param("ln_f.b").value.setConstant(1.0f);
  m.param("tok_emb").value.row(Vocab::kEos).setConstant(5.0f);
  std::vector<int> prefix{Vocab::kBos, 20, Vocab::kQuery, 22, Vocab::kAnswer};
  const Generation g = generate(m, prefix);
  EXPECT_TRUE(g.tokens.empty());
  EXPECT_FALSE(g.truncated);
}

TEST(Score, StrictExactMatchAndBreakdowns) {
  const Vocab vocab(VocabConfig{8, {"triangle"}, {}});
  std::vector<Sample> samples(1000);
  std::vector<Generation> preds(1000);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].answer_tokens = {vocab.node(1), Vocab::kComma, vocab.node(static_cast<int>(i % 5))};
    samples[i].meta = {{"pattern", "triangle"}, {"count", static_cast<int>(i % 5) + 1}};
    preds[i].tokens = samples[i].answer_tokens;
  }
  EXPECT_DOUBLE_EQ(score(samples, preds, vocab).overall.accuracy(), 1.0);
  preds[17].tokens[2] = vocab.node(7);
  const EvalReport r = score(samples, preds, vocab);
  EXPECT_DOUBLE_EQ(r.overall.accuracy(), 0.999);
  std::size_t n = 0, correct = 0;
  for (const auto& [label, t] : r.breakdown.at("count")) {
    n += t.n;
    correct += t.correct;
  }
  EXPECT_EQ(n, r.overall.n);
  EXPECT_EQ(correct, r.overall.correct);
  EXPECT_EQ(r.breakdown.at("pattern").at("triangle").correct, 999u);
  preds[3].truncated = true;
  EXPECT_EQ(score(samples, preds, vocab).overall.correct, 998u);
  EXPECT_THROW(score(samples, std::span(preds).first(3), vocab), ValidationError);
}

TEST(Score, TinsComparesFinalRegion) {
  const Vocab vocab(VocabConfig{8, {"diagonal"}, {}});
  Sample s;
  s.answer_tokens = {Vocab::kPart1, vocab.node(0), vocab.node(1), Vocab::kAns, vocab.node(0), vocab.node(1), vocab.node(2)};
  Generation right_final;
  right_final.tokens = {Vocab::kPart1, vocab.node(3), Vocab::kAns, vocab.node(0), vocab.node(1), vocab.node(2)};
  Generation exact;
  exact.tokens = s.answer_tokens;
  Generation no_ans;
  no_ans.tokens = {vocab.node(0), vocab.node(1), vocab.node(2)};
  const std::vector<Sample> ss{s, s, s};
  const EvalReport r = score(ss, std::vector<Generation>{right_final, exact, no_ans}, vocab);
  EXPECT_EQ(r.overall.correct, 2u);
  EXPECT_EQ(r.full_sequence.correct, 1u);
}

TEST(Train, DeterministicWithLogAndBestCheckpoint) {
  const Dataset& d = tiny_dataset();
  const auto a = temp_dir("train_a"), b = temp_dir("train_b");
  TrainOptions oa, ob;
  oa.out = a;
  ob.out = b;
  std::size_t calls = 0;
  oa.on_eval = [&](const LogRow&) { ++calls; };
  const TrainResult ra = train(d, tiny_model(), tiny_train(), oa);
  const TrainResult rb = train(d, tiny_model(), tiny_train(), ob);
  EXPECT_EQ(model_hash(ra.checkpoint.model), model_hash(rb.checkpoint.model));
  EXPECT_EQ(calls, 3u);
  ASSERT_EQ(ra.log.size(), 3u);
  std::size_t best = 0;
  for (std::size_t i = 1; i < ra.log.size(); ++i) {
    if (ra.log[i].val_loss < ra.log[best].val_loss) best = i;
  }
  EXPECT_EQ(ra.checkpoint.meta.step, ra.log[best].step);
  EXPECT_DOUBLE_EQ(ra.checkpoint.meta.best_val_loss, ra.log[best].val_loss);
  EXPECT_NEAR(mean_loss(ra.checkpoint.model, d.split("val")), ra.log[best].val_loss, 1e-9);

  std::ifstream log(a / "train_log.csv");
  std::string header, columns;
  std::getline(log, header);
  std::getline(log, columns);
  EXPECT_EQ(header.rfind("# schedule=constant", 0), 0u);
  EXPECT_EQ(columns, "step,train_loss,val_loss,val_acc");
  const Checkpoint loaded = load_checkpoint(a);
  EXPECT_EQ(model_hash(loaded.model), model_hash(ra.checkpoint.model));
  std::size_t longest = 0;
  for (const auto& [name, samples] : d.splits) {
    for (const Sample& s : samples) longest = std::max(longest, sequence_length(s));
  }
  EXPECT_EQ(loaded.model.config().max_len, static_cast<int>(longest));

  TrainConfig other = tiny_train();
  other.seed = 6;
  EXPECT_NE(model_hash(train(d, tiny_model(), other).checkpoint.model), model_hash(ra.checkpoint.model));
}

TEST(Train, RejectsMismatchedConfigs) {
  const Dataset& d = tiny_dataset();
  ModelConfig m = tiny_model();
  m.vocab_size = d.vocab.size() + 1;
  EXPECT_THROW(train(d, m, tiny_train()), ConfigError);
  m = tiny_model();
  m.max_len = 5;
  EXPECT_THROW(train(d, m, tiny_train()), ConfigError);
  Dataset bad = d;
  bad.manifest["vocab_hash"] = "0";
  EXPECT_THROW(train(bad, tiny_model(), tiny_train()), ConfigError);
}

TEST(Train, DivergenceSavesLastGoodState) {
  TrainConfig t = tiny_train();
  t.lr = 1e30;
  t.clip = 0;
  t.weight_decay = 0;
  t.max_steps = 50;
  t.eval_every = 1;
  const auto dir = temp_dir("diverge");
  TrainOptions o;
  o.out = dir;
  EXPECT_THROW(train(tiny_dataset(), tiny_model(), t, o), DivergenceError);
  EXPECT_NO_THROW(load_checkpoint(dir));
}

TEST(Evaluate, UntrainedModelTerminates) {
  const Dataset& d = tiny_dataset();
  ModelConfig c = tiny_model();
  c.vocab_size = d.vocab.size();
  c.max_len = 64;
  const Transformer<float> m(c, 4);
  const EvalReport r = evaluate(m, d.vocab, d.split("test"), {0, 0, 2});
  EXPECT_EQ(r.overall.n, d.split("test").size());
  EXPECT_EQ(r.predictions.size(), r.overall.n);
  const EvalReport r1 = evaluate(m, d.vocab, d.split("test"), {0, 0, 1});
  for (std::size_t i = 0; i < r.predictions.size(); ++i) EXPECT_EQ(r.predictions[i].tokens, r1.predictions[i].tokens);
}
