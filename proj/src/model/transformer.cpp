#include <cmath>
#include <limits>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
Mat<T> layernorm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>* xhat_out, Col<T>* rstd_out) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<T> xhat(n, d);
  Col<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    auto c = x.row(i).array() - mean;
    const T var = c.square().sum() / static_cast<T>(d);
    const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    xhat.row(i) = c * r;
    rstd(i) = r;
  }
  Mat<T> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = std::move(rstd);
  return y;
}

template <typename T>
Mat<T> layernorm_back(const Mat<T>& dy, const Mat<T>& xhat, const Col<T>& rstd, const Mat<T>& g, Mat<T>& dg, Mat<T>& db) {
  dg.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// dx for y = x w + b; accumulates dw, db.
template <typename T>
Mat<T> linear_back(const Mat<T>& dy, const Mat<T>& x, const Mat<T>& w, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  Mat<T> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const auto a = x.array();
  const auto t = (static_cast<T>(kGeluC) * (a + static_cast<T>(kGeluA) * a.cube())).tanh();
  return (static_cast<T>(0.5) * a * (T(1) + t)).matrix();
}

template <typename T>
Mat<T> gelu_back(const Mat<T>& dy, const Mat<T>& x) {
  const auto a = x.array();
  const auto t = (static_cast<T>(kGeluC) * (a + static_cast<T>(kGeluA) * a.cube())).tanh().eval();
  const auto dt = static_cast<T>(kGeluC) * (T(1) + static_cast<T>(3 * kGeluA) * a.square());
  return (dy.array() * (static_cast<T>(0.5) * (T(1) + t) + static_cast<T>(0.5) * a * (T(1) - t.square()) * dt)).matrix();
}

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, CounterRng& rng) {
  Mat<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? T(0) : keep;
  return m;
}

// Causal softmax in place on a block whose row i may see columns <= i + shift.
template <typename T>
void causal_softmax(Mat<T>& s, Eigen::Index shift) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index vis = std::min<Eigen::Index>(s.cols(), i + shift + 1);
    auto row = s.row(i);
    const T mx = row.head(vis).maxCoeff();
    T sum = 0;
    for (Eigen::Index j = 0; j < vis; ++j) {
      row(j) = std::exp(row(j) - mx);
      sum += row(j);
    }
    row.head(vis) /= sum;
    row.tail(s.cols() - vis).setZero();
  }
}

}  // namespace

void PackedBatch::add(std::span<const int> seq) {
  tokens.insert(tokens.end(), seq.begin(), seq.end());
  offsets.push_back(tokens.size());
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& c, std::uint64_t seed) : cfg_(c) {
  cfg_.validate();
  if (cfg_.vocab_size < 1 || cfg_.max_len < 1) throw ConfigError("model needs vocab_size and max_len before construction");
  const int d = cfg_.width, f = cfg_.width * cfg_.ffn_mult;
  tok_ = add_param("tok_emb", cfg_.vocab_size, d, true);
  pos_ = add_param("pos_emb", cfg_.max_len, d, true);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerIdx I{};
    I.ln1_g = add_param(p + "ln1.g", 1, d, false);
    I.ln1_b = add_param(p + "ln1.b", 1, d, false);
    I.w_qkv = add_param(p + "attn.w_qkv", d, 3 * d, true);
    I.b_qkv = add_param(p + "attn.b_qkv", 1, 3 * d, false);
    I.w_o = add_param(p + "attn.w_o", d, d, true);
    I.b_o = add_param(p + "attn.b_o", 1, d, false);
    I.ln2_g = add_param(p + "ln2.g", 1, d, false);
    I.ln2_b = add_param(p + "ln2.b", 1, d, false);
    I.w_in = add_param(p + "mlp.w_in", d, f, true);
    I.b_in = add_param(p + "mlp.b_in", 1, f, false);
    I.w_out = add_param(p + "mlp.w_out", f, d, true);
    I.b_out = add_param(p + "mlp.b_out", 1, d, false);
    layer_idx_.push_back(I);
  }
  lnf_g_ = add_param("ln_f.g", 1, d, false);
  lnf_b_ = add_param("ln_f.b", 1, d, false);
  if (!cfg_.tie_embeddings) head_ = add_param("lm_head", d, cfg_.vocab_size, true);

  // GPT-2 style init: N(0, 0.02), residual projections scaled by 1/sqrt(2L).
  CounterRng rng(seed);
  const double resid = 0.02 / std::sqrt(2.0 * cfg_.layers);
  for (auto& p : params_) {
    const bool gain = p.name.ends_with(".g");
    const bool bias = !p.decay && !gain;
    const bool proj = p.name.ends_with("attn.w_o") || p.name.ends_with("mlp.w_out");
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = gain ? T(1) : bias ? T(0) : static_cast<T>((proj ? resid : 0.02) * rng.normal());
    }
  }
}

template <typename T>
std::size_t Transformer<T>::add_param(const std::string& name, int rows, int cols, bool decay) {
  params_.push_back({name, Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols), decay});
  return params_.size() - 1;
}

template <typename T>
Parameter<T>& Transformer<T>::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

template <typename T>
const Parameter<T>& Transformer<T>::param(const std::string& name) const {
  return const_cast<Transformer*>(this)->param(name);
}

template <typename T>
std::size_t Transformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
void Transformer<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename T>
void Transformer<T>::check_batch(const PackedBatch& b) const {
  for (std::size_t s = 0; s < b.size(); ++s) {
    if (b.length(s) > static_cast<std::size_t>(cfg_.max_len)) {
      throw LengthError("sequence of length " + std::to_string(b.length(s)) + " exceeds max_len " + std::to_string(cfg_.max_len));
    }
  }
  for (int t : b.tokens) {
    if (t < 0 || t >= cfg_.vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside the model vocabulary");
  }
}

template <typename T>
Mat<T> Transformer<T>::forward(const PackedBatch& b, std::vector<Mat<T>>* hidden) const {
  if (hidden) hidden->clear();
  return run(b, nullptr, nullptr, hidden);
}

template <typename T>
Mat<T> Transformer<T>::forward_train(const PackedBatch& b, Tape<T>& tape, CounterRng* rng) const {
  return run(b, &tape, rng, nullptr);
}

template <typename T>
Mat<T> Transformer<T>::run(const PackedBatch& b, Tape<T>* tape, CounterRng* rng, std::vector<Mat<T>>* hidden) const {
  check_batch(b);
  const Eigen::Index R = static_cast<Eigen::Index>(b.rows());
  const int d = cfg_.width, H = cfg_.heads, dh = cfg_.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const bool drop = rng && cfg_.dropout > 0;
  const auto& P = params_;

  Mat<T> x(R, d);
  for (std::size_t s = 0; s < b.size(); ++s) {
    for (std::size_t i = 0; i < b.length(s); ++i) {
      const std::size_t r = b.begin(s) + i;
      x.row(static_cast<Eigen::Index>(r)) = P[tok_].value.row(b.tokens[r]) + P[pos_].value.row(static_cast<Eigen::Index>(i));
    }
  }
  if (tape) {
    tape->batch = b;
    tape->layers.assign(static_cast<std::size_t>(cfg_.layers), {});
    tape->drop0.resize(0, 0);
  }
  if (drop) {
    Mat<T> m = dropout_mask<T>(R, d, cfg_.dropout, *rng);
    x.array() *= m.array();
    tape->drop0 = std::move(m);
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    const LayerIdx& I = layer_idx_[static_cast<std::size_t>(l)];
    typename Tape<T>::Layer* L = tape ? &tape->layers[static_cast<std::size_t>(l)] : nullptr;

    Mat<T> xhat, h1;
    Col<T> rstd;
    h1 = layernorm(x, P[I.ln1_g].value, P[I.ln1_b].value, L ? &xhat : nullptr, L ? &rstd : nullptr);
    Mat<T> qkv = linear(h1, P[I.w_qkv].value, P[I.b_qkv].value);
    Mat<T> att(R, d);
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto o = static_cast<Eigen::Index>(b.begin(s));
      const auto n = static_cast<Eigen::Index>(b.length(s));
      for (int h = 0; h < H; ++h) {
        Mat<T> S(n, n);
        S.noalias() = qkv.block(o, h * dh, n, dh) * qkv.block(o, d + h * dh, n, dh).transpose();
        S *= scale;
        causal_softmax(S, 0);
        att.block(o, h * dh, n, dh).noalias() = S * qkv.block(o, 2 * d + h * dh, n, dh);
        if (L) L->probs.push_back(std::move(S));
      }
    }
    Mat<T> a = linear(att, P[I.w_o].value, P[I.b_o].value);
    if (drop) {
      Mat<T> m = dropout_mask<T>(R, d, cfg_.dropout, *rng);
      a.array() *= m.array();
      L->drop1 = std::move(m);
    }
    x += a;

    Mat<T> xhat2;
    Col<T> rstd2;
    Mat<T> h2 = layernorm(x, P[I.ln2_g].value, P[I.ln2_b].value, L ? &xhat2 : nullptr, L ? &rstd2 : nullptr);
    Mat<T> pre = linear(h2, P[I.w_in].value, P[I.b_in].value);
    Mat<T> act = gelu(pre);
    Mat<T> f = linear(act, P[I.w_out].value, P[I.b_out].value);
    if (drop) {
      Mat<T> m = dropout_mask<T>(R, d, cfg_.dropout, *rng);
      f.array() *= m.array();
      L->drop2 = std::move(m);
    }
    x += f;
    if (hidden) hidden->push_back(x);
    if (L) {
      L->xhat1 = std::move(xhat);
      L->rstd1 = std::move(rstd);
      L->h1 = std::move(h1);
      L->qkv = std::move(qkv);
      L->att = std::move(att);
      L->xhat2 = std::move(xhat2);
      L->rstd2 = std::move(rstd2);
      L->h2 = std::move(h2);
      L->pre = std::move(pre);
      L->act = std::move(act);
    }
  }

  Mat<T> xhatf;
  Col<T> rstdf;
  Mat<T> hf = layernorm(x, P[lnf_g_].value, P[lnf_b_].value, tape ? &xhatf : nullptr, tape ? &rstdf : nullptr);
  Mat<T> logits(R, cfg_.vocab_size);
  if (cfg_.tie_embeddings) {
    logits.noalias() = hf * P[tok_].value.transpose();
  } else {
    logits.noalias() = hf * P[head_].value;
  }
  if (tape) {
    tape->xhatf = std::move(xhatf);
    tape->rstdf = std::move(rstdf);
    tape->hf = std::move(hf);
  }
  return logits;
}

template <typename T>
void Transformer<T>::backward(const Tape<T>& tape, const Mat<T>& dlogits) {
  const PackedBatch& b = tape.batch;
  const int d = cfg_.width, H = cfg_.heads, dh = cfg_.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto& P = params_;

  Mat<T> dhf(dlogits.rows(), d);
  if (cfg_.tie_embeddings) {
    dhf.noalias() = dlogits * P[tok_].value;
    P[tok_].grad.noalias() += dlogits.transpose() * tape.hf;
  } else {
    dhf.noalias() = dlogits * P[head_].value.transpose();
    P[head_].grad.noalias() += tape.hf.transpose() * dlogits;
  }
  Mat<T> dx = layernorm_back(dhf, tape.xhatf, tape.rstdf, P[lnf_g_].value, P[lnf_g_].grad, P[lnf_b_].grad);

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    const LayerIdx& I = layer_idx_[static_cast<std::size_t>(l)];
    const auto& L = tape.layers[static_cast<std::size_t>(l)];

    Mat<T> df = dx;
    if (L.drop2.size()) df.array() *= L.drop2.array();
    Mat<T> dact = linear_back(df, L.act, P[I.w_out].value, P[I.w_out].grad, P[I.b_out].grad);
    Mat<T> dpre = gelu_back(dact, L.pre);
    Mat<T> dh2 = linear_back(dpre, L.h2, P[I.w_in].value, P[I.w_in].grad, P[I.b_in].grad);
    dx += layernorm_back(dh2, L.xhat2, L.rstd2, P[I.ln2_g].value, P[I.ln2_g].grad, P[I.ln2_b].grad);

    Mat<T> da = dx;
    if (L.drop1.size()) da.array() *= L.drop1.array();
    Mat<T> datt = linear_back(da, L.att, P[I.w_o].value, P[I.w_o].grad, P[I.b_o].grad);
    Mat<T> dqkv = Mat<T>::Zero(L.qkv.rows(), L.qkv.cols());
    std::size_t pi = 0;
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto o = static_cast<Eigen::Index>(b.begin(s));
      const auto n = static_cast<Eigen::Index>(b.length(s));
      for (int h = 0; h < H; ++h) {
        const Mat<T>& Pm = L.probs[pi++];
        const auto dO = datt.block(o, h * dh, n, dh);
        const auto Q = L.qkv.block(o, h * dh, n, dh);
        const auto K = L.qkv.block(o, d + h * dh, n, dh);
        const auto V = L.qkv.block(o, 2 * d + h * dh, n, dh);
        Mat<T> dP(n, n);
        dP.noalias() = dO * V.transpose();
        dqkv.block(o, 2 * d + h * dh, n, dh).noalias() = Pm.transpose() * dO;
        const Col<T> rs = (dP.array() * Pm.array()).rowwise().sum();
        Mat<T> dS = (Pm.array() * (dP.array().colwise() - rs.array())).matrix() * scale;
        dqkv.block(o, h * dh, n, dh).noalias() = dS * K;
        dqkv.block(o, d + h * dh, n, dh).noalias() = dS.transpose() * Q;
      }
    }
    Mat<T> dh1 = linear_back(dqkv, L.h1, P[I.w_qkv].value, P[I.w_qkv].grad, P[I.b_qkv].grad);
    dx += layernorm_back(dh1, L.xhat1, L.rstd1, P[I.ln1_g].value, P[I.ln1_g].grad, P[I.ln1_b].grad);
  }

  if (tape.drop0.size()) dx.array() *= tape.drop0.array();
  for (std::size_t s = 0; s < b.size(); ++s) {
    for (std::size_t i = 0; i < b.length(s); ++i) {
      const std::size_t r = b.begin(s) + i;
      P[tok_].grad.row(b.tokens[r]) += dx.row(static_cast<Eigen::Index>(r));
      P[pos_].grad.row(static_cast<Eigen::Index>(i)) += dx.row(static_cast<Eigen::Index>(r));
    }
  }
}

template <typename T>
typename Transformer<T>::Cache Transformer<T>::make_cache() const {
  Cache c;
  for (int l = 0; l < cfg_.layers; ++l) {
    c.k.emplace_back(cfg_.max_len, cfg_.width);
    c.v.emplace_back(cfg_.max_len, cfg_.width);
  }
  return c;
}

template <typename T>
Mat<T> Transformer<T>::extend(Cache& cache, std::span<const int> tokens) const {
  const auto m = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index start = cache.len;
  if (start + m > cfg_.max_len) {
    throw LengthError("sequence of length " + std::to_string(start + m) + " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside the model vocabulary");
  }
  const int d = cfg_.width, H = cfg_.heads, dh = cfg_.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& P = params_;

  Mat<T> x(m, d);
  for (Eigen::Index i = 0; i < m; ++i) x.row(i) = P[tok_].value.row(tokens[static_cast<std::size_t>(i)]) + P[pos_].value.row(start + i);
  for (int l = 0; l < cfg_.layers; ++l) {
    const LayerIdx& I = layer_idx_[static_cast<std::size_t>(l)];
    auto& K = cache.k[static_cast<std::size_t>(l)];
    auto& V = cache.v[static_cast<std::size_t>(l)];
    const Mat<T> h1 = layernorm<T>(x, P[I.ln1_g].value, P[I.ln1_b].value, nullptr, nullptr);
    const Mat<T> qkv = linear(h1, P[I.w_qkv].value, P[I.b_qkv].value);
    K.block(start, 0, m, d) = qkv.middleCols(d, d);
    V.block(start, 0, m, d) = qkv.middleCols(2 * d, d);
    Mat<T> att(m, d);
    for (int h = 0; h < H; ++h) {
      Mat<T> S(m, start + m);
      S.noalias() = qkv.block(0, h * dh, m, dh) * K.block(0, h * dh, start + m, dh).transpose();
      S *= scale;
      causal_softmax(S, start);
      att.block(0, h * dh, m, dh).noalias() = S * V.block(0, h * dh, start + m, dh);
    }
    x += linear(att, P[I.w_o].value, P[I.b_o].value);
    const Mat<T> h2 = layernorm<T>(x, P[I.ln2_g].value, P[I.ln2_b].value, nullptr, nullptr);
    x += linear(gelu(linear(h2, P[I.w_in].value, P[I.b_in].value)), P[I.w_out].value, P[I.b_out].value);
  }
  cache.len = static_cast<int>(start + m);
  const Mat<T> hf = layernorm<T>(x, P[lnf_g_].value, P[lnf_b_].value, nullptr, nullptr);
  Mat<T> logits(m, cfg_.vocab_size);
  if (cfg_.tie_embeddings) {
    logits.noalias() = hf * P[tok_].value.transpose();
  } else {
    logits.noalias() = hf * P[head_].value;
  }
  return logits;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace isflab
