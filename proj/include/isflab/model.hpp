#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isflab/corpus.hpp"
#include "isflab/encoding.hpp"
#include "isflab/rng.hpp"
#include "isflab/vocab.hpp"
#include "json.hpp"

namespace isflab {

struct ModelConfig {
  int layers = 2;
  int heads = 12;
  int width = 192;
  int ffn_mult = 4;
  double dropout = 0.2;
  int max_len = 0;     // 0 = fit to the dataset at train time
  int vocab_size = 0;  // 0 = take from the dataset vocab
  bool tie_embeddings = true;

  int head_dim() const { return width / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool decay = false;
};

// Variable-length sequences stacked row-wise, no padding.
struct PackedBatch {
  std::vector<int> tokens;
  std::vector<std::size_t> offsets{0};

  void add(std::span<const int> seq);
  std::size_t size() const { return offsets.size() - 1; }
  std::size_t rows() const { return tokens.size(); }
  std::size_t begin(std::size_t i) const { return offsets[i]; }
  std::size_t length(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

// Activations kept by forward_train for the backward pass.
template <typename T>
struct Tape {
  struct Layer {
    Mat<T> xhat1, h1, qkv, att, drop1;
    Col<T> rstd1;
    std::vector<Mat<T>> probs;  // per (sequence, head)
    Mat<T> xhat2, h2, pre, act, drop2;
    Col<T> rstd2;
  };
  PackedBatch batch;
  Mat<T> drop0;  // dropout scale masks, empty when dropout is off
  std::vector<Layer> layers;
  Mat<T> xhatf, hf;
  Col<T> rstdf;
};

template <typename T>
class Transformer {
 public:
  struct Cache {
    std::vector<Mat<T>> k, v;  // per layer, max_len x width
    int len = 0;
  };

  Transformer(const ModelConfig& c, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& param(const std::string& name);
  const Parameter<T>& param(const std::string& name) const;
  std::size_t parameter_count() const;

  // Eval mode. Logits are rows x vocab. When `hidden` is given it receives the
  // post-block residual stream of every layer (rows x width each).
  Mat<T> forward(const PackedBatch& b, std::vector<Mat<T>>* hidden = nullptr) const;
  // Training mode; residual and embedding dropout use `rng` when dropout > 0.
  Mat<T> forward_train(const PackedBatch& b, Tape<T>& tape, CounterRng* rng) const;
  // Accumulates parameter gradients.
  void backward(const Tape<T>& tape, const Mat<T>& dlogits);
  void zero_grad();

  Cache make_cache() const;
  // Feeds `tokens` after the cached prefix and returns their logits.
  Mat<T> extend(Cache& cache, std::span<const int> tokens) const;

 private:
  struct LayerIdx {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_in, b_in, w_out, b_out;
  };

  Mat<T> run(const PackedBatch& b, Tape<T>* tape, CounterRng* rng, std::vector<Mat<T>>* hidden) const;
  void check_batch(const PackedBatch& b) const;
  std::size_t add_param(const std::string& name, int rows, int cols, bool decay);

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::vector<LayerIdx> layer_idx_;
  std::size_t tok_ = 0, pos_ = 0, lnf_g_ = 0, lnf_b_ = 0, head_ = 0;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

// Row i of a packed training sequence predicts token i+1; the target row is
// masked in when token i+1 is an answer or closing token.
struct Targets {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  std::size_t count() const;
};
void append_targets(const TrainingSequence& s, Targets& t);

template <typename T>
struct LossResult {
  T loss = 0;  // mean over masked rows (or sum / normalizer)
  std::size_t count = 0;
  Mat<T> dlogits;  // exactly zero on unmasked rows
};

// Mean cross-entropy over masked rows. `normalizer` replaces the masked count
// as divisor, for gradient accumulation across micro-batches.
template <typename T>
LossResult<T> masked_cross_entropy(const Mat<T>& logits, const Targets& t, std::optional<double> normalizer = std::nullopt);

struct TrainConfig {
  std::size_t micro_batch = 32;
  std::size_t accumulation = 1;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip = 1.0;
  std::size_t max_steps = 2000;
  std::size_t warmup = 0;
  std::string schedule = "constant";  // or "cosine"
  std::size_t eval_every = 100;
  std::size_t eval_samples = 256;  // val exact-match subset, 0 = all
  std::size_t patience = 0;        // evals without val-loss improvement, 0 = off
  bool checkpoint_best = true;
  std::uint64_t seed = 0;

  std::size_t effective_batch() const { return micro_batch * accumulation; }
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

double learning_rate(const TrainConfig& c, std::size_t step);

template <typename T>
class AdamW {
 public:
  AdamW(const std::vector<Parameter<T>>& params, const TrainConfig& c);
  void step(std::vector<Parameter<T>>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Mat<T>> m_, v_;
  std::size_t t_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm);

struct LogRow {
  std::size_t step = 0;
  double train_loss = 0, val_loss = 0, val_acc = 0;
};

struct CheckpointMeta {
  std::size_t step = 0;
  double best_val_loss = 0;
  nlohmann::json train_config;
  nlohmann::json rng;
};

struct Checkpoint {
  Transformer<float> model;
  Vocab vocab;
  CheckpointMeta meta;
};

// Layout: manifest.json, vocab.json, params/<name>.f32 (little-endian,
// row-major).
void save_checkpoint(const std::filesystem::path& dir, const Transformer<float>& m, const Vocab& vocab,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
std::string model_hash(const Transformer<float>& m);

struct TrainOptions {
  std::optional<std::filesystem::path> out;  // checkpoint + train_log.csv
  std::function<void(const LogRow&)> on_eval;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  std::size_t steps_run = 0;
};

// Throws DivergenceError on a non-finite loss after saving the last good
// state to opt.out.
TrainResult train(const Dataset& data, ModelConfig mc, const TrainConfig& tc, const TrainOptions& opt = {});

struct Generation {
  TokenSeq tokens;  // answer tokens, closing token excluded
  bool truncated = false;
};

// Greedy decoding from a prefix ending at the answer-start token.
Generation generate(const Transformer<float>& m, std::span<const int> prefix, std::size_t max_new = 0);

struct Tally {
  std::size_t n = 0, correct = 0;
  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

struct EvalReport {
  Tally overall;        // final-answer exact match
  Tally full_sequence;  // whole generated answer, including scratchpad parts
  std::size_t truncated = 0;
  std::map<std::string, std::map<std::string, Tally>> breakdown;  // by pattern, count, prompt, perturb
  std::vector<Generation> predictions;

  nlohmann::json to_json() const;
};

EvalReport score(std::span<const Sample> samples, std::span<const Generation> predictions, const Vocab& vocab);

struct EvalOptions {
  std::size_t max_new = 0;  // 0 = up to max_len
  std::size_t limit = 0;    // first N samples, 0 = all
  int workers = 1;
};

EvalReport evaluate(const Transformer<float>& m, const Vocab& vocab, std::span<const Sample> samples, EvalOptions opt = {});

// Mean masked cross-entropy over a split, teacher forced.
double mean_loss(const Transformer<float>& m, std::span<const Sample> samples, std::size_t micro_batch = 64);

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::map<std::string, double> per_parameter;
  std::size_t checked = 0;
  double off_mask_max = 0;  // largest |dloss/dlogit| on unmasked rows
};

// Analytic gradients of a double-precision model against central differences.
GradCheckResult grad_check(const ModelConfig& tiny, std::uint64_t seed, double h = 1e-5);

}  // namespace isflab
