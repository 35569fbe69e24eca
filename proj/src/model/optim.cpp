#include <cmath>
#include <numbers>
#include <set>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown " + what + " key '" + k + "'");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (heads < 1 || width < 1 || width % heads != 0) throw ConfigError("width must be a positive multiple of heads");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (max_len < 0 || vocab_size < 0) throw ConfigError("max_len and vocab_size must be non-negative");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers},   {"heads", c.heads},         {"width", c.width},
          {"ffn_mult", c.ffn_mult}, {"dropout", c.dropout},   {"max_len", c.max_len},
          {"vocab_size", c.vocab_size}, {"tie_embeddings", c.tie_embeddings}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"layers", "heads", "width", "ffn_mult", "dropout", "max_len", "vocab_size", "tie_embeddings"}, "model");
  ModelConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.width = j.value("width", c.width);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.dropout = j.value("dropout", c.dropout);
    c.max_len = j.value("max_len", c.max_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (micro_batch < 1 || accumulation < 1) throw ConfigError("micro_batch and accumulation must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must be in [0,1)");
  if (weight_decay < 0 || clip < 0) throw ConfigError("weight_decay and clip must be non-negative");
  if (schedule != "constant" && schedule != "cosine") throw ConfigError("schedule must be 'constant' or 'cosine'");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"micro_batch", c.micro_batch}, {"accumulation", c.accumulation}, {"lr", c.lr},
          {"beta1", c.beta1},             {"beta2", c.beta2},               {"eps", c.eps},
          {"weight_decay", c.weight_decay}, {"clip", c.clip},               {"max_steps", c.max_steps},
          {"warmup", c.warmup},           {"schedule", c.schedule},         {"eval_every", c.eval_every},
          {"eval_samples", c.eval_samples}, {"patience", c.patience},       {"checkpoint_best", c.checkpoint_best},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"micro_batch", "accumulation", "lr", "beta1", "beta2", "eps", "weight_decay", "clip", "max_steps", "warmup",
                  "schedule", "eval_every", "eval_samples", "patience", "checkpoint_best", "seed"},
                 "train");
  TrainConfig c;
  try {
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip = j.value("clip", c.clip);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.warmup = j.value("warmup", c.warmup);
    c.schedule = j.value("schedule", c.schedule);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.patience = j.value("patience", c.patience);
    c.checkpoint_best = j.value("checkpoint_best", c.checkpoint_best);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& c, std::size_t step) {
  if (c.warmup && step < c.warmup) return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup);
  if (c.schedule == "constant" || c.max_steps <= c.warmup) return c.lr;
  const double progress = static_cast<double>(step - c.warmup) / static_cast<double>(c.max_steps - c.warmup);
  return 0.1 * c.lr + 0.9 * c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

std::size_t Targets::count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

void append_targets(const TrainingSequence& s, Targets& t) {
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const bool last = i + 1 == s.tokens.size();
    t.ids.push_back(last ? 0 : s.tokens[i + 1]);
    t.mask.push_back(last ? 0 : s.loss_mask[i + 1]);
  }
}

template <typename T>
LossResult<T> masked_cross_entropy(const Mat<T>& logits, const Targets& t, std::optional<double> normalizer) {
  if (t.ids.size() != static_cast<std::size_t>(logits.rows()) || t.mask.size() != t.ids.size()) {
    throw ValidationError("targets do not match logits rows");
  }
  LossResult<T> r;
  r.count = t.count();
  if (r.count == 0) throw ValidationError("degenerate sample: empty answer mask");
  const double div = normalizer ? *normalizer : static_cast<double>(r.count);
  const T inv = static_cast<T>(1.0 / div);
  r.dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!t.mask[static_cast<std::size_t>(i)]) continue;
    const int y = t.ids[static_cast<std::size_t>(i)];
    const auto row = logits.row(i);
    const T mx = row.maxCoeff();
    const auto e = (row.array() - mx).exp();
    const T sum = e.sum();
    total += static_cast<double>(std::log(sum) + mx - row(y));
    r.dlogits.row(i) = (e / sum) * inv;
    r.dlogits(i, y) -= inv;
  }
  r.loss = static_cast<T>(total / div);
  return r;
}

template LossResult<float> masked_cross_entropy(const Mat<float>&, const Targets&, std::optional<double>);
template LossResult<double> masked_cross_entropy(const Mat<double>&, const Targets&, std::optional<double>);

template <typename T>
AdamW<T>::AdamW(const std::vector<Parameter<T>>& params, const TrainConfig& c) : cfg_(c) {
  for (const auto& p : params) {
    m_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  }
}

template <typename T>
void AdamW<T>::step(std::vector<Parameter<T>>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(lr / bc1), root_bc2 = static_cast<T>(std::sqrt(bc2)), eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.decay && cfg_.weight_decay > 0) p.value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
    m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() / root_bc2 + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) sq += static_cast<double>(p.grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params) p.grad *= s;
  }
  return norm;
}

template double clip_grad_norm(std::vector<Parameter<float>>&, double);
template double clip_grad_norm(std::vector<Parameter<double>>&, double);

}  // namespace isflab
