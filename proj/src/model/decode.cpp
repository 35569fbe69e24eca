#include <algorithm>
#include <thread>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {

Generation generate(const Transformer<float>& m, std::span<const int> prefix, std::size_t max_new) {
  if (prefix.empty() || prefix.back() != Vocab::kAnswer) throw ValidationError("generation prefix must end at the answer-start token");
  const auto max_len = static_cast<std::size_t>(m.config().max_len);
  if (prefix.size() > max_len) throw LengthError("prefix longer than max_len");
  // The closing token counts against the budget, so a full sequence fits max_len.
  std::size_t budget = max_len - prefix.size();
  if (max_new) budget = std::min(budget, max_new);
  Generation g;
  auto cache = m.make_cache();
  Mat<float> logits = m.extend(cache, prefix);
  for (std::size_t step = 0; step < budget; ++step) {
    Eigen::Index next = 0;
    logits.row(logits.rows() - 1).maxCoeff(&next);
    if (next == Vocab::kEos) return g;
    g.tokens.push_back(static_cast<int>(next));
    if (step + 1 < budget) {
      const int t = static_cast<int>(next);
      logits = m.extend(cache, std::span<const int>(&t, 1));
    }
  }
  g.truncated = true;
  return g;
}

nlohmann::json EvalReport::to_json() const {
  auto tally = [](const Tally& t) { return nlohmann::json{{"n", t.n}, {"correct", t.correct}, {"accuracy", t.accuracy()}}; };
  nlohmann::json bd = nlohmann::json::object();
  for (const auto& [key, rows] : breakdown) {
    for (const auto& [label, t] : rows) bd[key][label] = tally(t);
  }
  return {{"n", overall.n},
          {"correct", overall.correct},
          {"accuracy", overall.accuracy()},
          {"full_sequence_accuracy", full_sequence.accuracy()},
          {"truncated", truncated},
          {"breakdown", bd}};
}

EvalReport score(std::span<const Sample> samples, std::span<const Generation> predictions, const Vocab& vocab) {
  if (samples.size() != predictions.size()) throw ValidationError("one prediction per sample is required");
  EvalReport r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const Generation& g = predictions[i];
    const bool full = !g.truncated && g.tokens == s.answer_tokens;
    bool ok = full;
    if (auto truth = final_answer_region(s.answer_tokens, vocab)) {
      const auto pred = final_answer_region(g.tokens, vocab);
      ok = !g.truncated && pred && std::ranges::equal(*pred, *truth);
    }
    ++r.overall.n;
    r.overall.correct += ok;
    ++r.full_sequence.n;
    r.full_sequence.correct += full;
    r.truncated += g.truncated;
    for (const char* key : {"pattern", "count", "prompt", "perturb"}) {
      if (!s.meta.contains(key)) continue;
      const auto& v = s.meta[key];
      Tally& t = r.breakdown[key][v.is_string() ? v.get<std::string>() : v.dump()];
      ++t.n;
      t.correct += ok;
    }
  }
  r.predictions.assign(predictions.begin(), predictions.end());
  return r;
}

EvalReport evaluate(const Transformer<float>& m, const Vocab& vocab, std::span<const Sample> samples, EvalOptions opt) {
  if (vocab.size() != m.config().vocab_size) throw ValidationError("model and dataset vocabularies differ");
  const std::size_t n = opt.limit ? std::min(opt.limit, samples.size()) : samples.size();
  std::vector<Generation> preds(n);
  const auto workers = static_cast<std::size_t>(std::max(1, opt.workers));
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) preds[i] = generate(m, generation_prefix(samples[i]), opt.max_new);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  return score(samples.first(n), preds, vocab);
}

double mean_loss(const Transformer<float>& m, std::span<const Sample> samples, std::size_t micro_batch) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < samples.size(); i += micro_batch) {
    PackedBatch b;
    Targets t;
    for (std::size_t j = i; j < std::min(samples.size(), i + micro_batch); ++j) {
      const TrainingSequence seq = assemble(samples[j]);
      b.add(seq.tokens);
      append_targets(seq, t);
    }
    const auto r = masked_cross_entropy(m.forward(b), t, 1.0);
    total += static_cast<double>(r.loss);
    count += r.count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace isflab
