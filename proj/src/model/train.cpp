#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {
namespace {

std::size_t longest_sequence(const Dataset& d) {
  std::size_t n = 0;
  for (const auto& [name, samples] : d.splits) {
    for (const Sample& s : samples) n = std::max(n, sequence_length(s));
  }
  return n;
}

class LogWriter {
 public:
  LogWriter(const std::optional<std::filesystem::path>& dir, const TrainConfig& tc) {
    if (!dir) return;
    std::error_code ec;
    std::filesystem::create_directories(*dir, ec);
    if (ec) throw IoError("cannot create " + dir->string() + ": " + ec.message());
    out_.open(*dir / "train_log.csv");
    if (!out_) throw IoError("cannot write " + (*dir / "train_log.csv").string());
    out_ << "# schedule=" << tc.schedule << " lr=" << tc.lr << " warmup=" << tc.warmup << " max_steps=" << tc.max_steps
         << " effective_batch=" << tc.effective_batch() << '\n'
         << "step,train_loss,val_loss,val_acc\n";
    out_.flush();
  }
  void write(const LogRow& r) {
    if (!out_.is_open()) return;
    out_ << r.step << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_acc << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace

TrainResult train(const Dataset& data, ModelConfig mc, const TrainConfig& tc, const TrainOptions& opt) {
  tc.validate();
  if (data.manifest.value("vocab_hash", "") != data.vocab.hash()) throw ConfigError("dataset manifest vocab hash does not match its vocab");
  if (mc.vocab_size == 0) mc.vocab_size = data.vocab.size();
  if (mc.vocab_size != data.vocab.size()) throw ConfigError("model vocab size differs from the dataset vocab");
  const auto longest = static_cast<int>(longest_sequence(data));
  if (mc.max_len == 0) mc.max_len = longest;
  if (mc.max_len < longest) throw ConfigError("max_len " + std::to_string(mc.max_len) + " is shorter than the longest sequence (" + std::to_string(longest) + ")");
  const auto& train_set = data.split("train");
  const auto& val_set = data.split("val");
  if (train_set.empty()) throw ConfigError("training split is empty");

  Transformer<float> model(mc, derive_seed(tc.seed, 1));
  AdamW<float> adam(model.parameters(), tc);
  std::vector<TrainingSequence> seqs;
  seqs.reserve(train_set.size());
  for (const Sample& s : train_set) seqs.push_back(assemble(s));

  std::vector<std::size_t> order(seqs.size());
  std::size_t cursor = order.size(), epoch = 0;
  CounterRng drop_rng(derive_seed(tc.seed, 2));
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng(derive_seed(tc.seed, 1000 + epoch++)).shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  LogWriter log(opt.out, tc);
  TrainResult res{{model, data.vocab, {}}, {}, 0};
  Transformer<float> best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0, since_best = 0;
  Transformer<float> last_good = model;
  std::size_t last_good_step = 0;
  double run_loss = 0;
  std::size_t run_n = 0;

  auto meta_for = [&](std::size_t step, double loss) {
    CheckpointMeta m;
    m.step = step;
    m.best_val_loss = loss;
    m.train_config = train_config_to_json(tc);
    m.rng = {{"seed", tc.seed}, {"dropout_key", drop_rng.key()}, {"dropout_counter", drop_rng.counter()}, {"epoch", epoch}};
    return m;
  };
  auto diverge = [&](std::size_t step) {
    if (opt.out) save_checkpoint(*opt.out, last_good, data.vocab, meta_for(last_good_step, best_loss));
    throw DivergenceError("non-finite loss at step " + std::to_string(step) + "; last good state is step " + std::to_string(last_good_step));
  };

  std::size_t step = 0;
  for (; step < tc.max_steps; ++step) {
    model.zero_grad();
    std::vector<PackedBatch> micro(tc.accumulation);
    std::vector<Targets> targets(tc.accumulation);
    std::size_t count = 0;
    for (std::size_t a = 0; a < tc.accumulation; ++a) {
      for (std::size_t i = 0; i < tc.micro_batch; ++i) {
        const auto& s = seqs[next_index()];
        micro[a].add(s.tokens);
        append_targets(s, targets[a]);
      }
      count += targets[a].count();
    }
    double loss = 0;
    for (std::size_t a = 0; a < tc.accumulation; ++a) {
      Tape<float> tape;
      const Mat<float> logits = model.forward_train(micro[a], tape, &drop_rng);
      const auto r = masked_cross_entropy(logits, targets[a], static_cast<double>(count));
      loss += static_cast<double>(r.loss);
      model.backward(tape, r.dlogits);
    }
    if (!std::isfinite(loss)) diverge(step + 1);
    clip_grad_norm(model.parameters(), tc.clip);
    adam.step(model.parameters(), learning_rate(tc, step));
    run_loss += loss;
    ++run_n;

    if ((step + 1) % tc.eval_every == 0 || step + 1 == tc.max_steps) {
      LogRow row;
      row.step = step + 1;
      row.train_loss = run_loss / static_cast<double>(run_n);
      row.val_loss = val_set.empty() ? row.train_loss : mean_loss(model, val_set);
      row.val_acc = val_set.empty() ? 0.0 : evaluate(model, data.vocab, val_set, {0, tc.eval_samples, 1}).overall.accuracy();
      run_loss = 0;
      run_n = 0;
      res.log.push_back(row);
      log.write(row);
      if (opt.on_eval) opt.on_eval(row);
      if (!std::isfinite(row.val_loss)) diverge(step + 1);
      last_good = model;
      last_good_step = step + 1;
      if (row.val_loss < best_loss) {
        best_loss = row.val_loss;
        best = model;
        best_step = step + 1;
        since_best = 0;
      } else if (tc.patience && ++since_best >= tc.patience) {
        ++step;
        break;
      }
    }
  }
  res.steps_run = step;
  const bool use_best = tc.checkpoint_best && best_step > 0;
  res.checkpoint.model = use_best ? best : model;
  res.checkpoint.meta = meta_for(use_best ? best_step : step, best_loss);
  if (opt.out) save_checkpoint(*opt.out, res.checkpoint.model, data.vocab, res.checkpoint.meta);
  return res;
}

}  // namespace isflab
