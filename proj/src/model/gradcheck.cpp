#include <cmath>

#include "isflab/error.hpp"
#include "isflab/model.hpp"

namespace isflab {

GradCheckResult grad_check(const ModelConfig& tiny, std::uint64_t seed, double h) {
  if (tiny.dropout != 0.0) throw ConfigError("grad_check needs dropout off");
  if (tiny.vocab_size < 2 || tiny.max_len < 2) throw ConfigError("grad_check needs vocab_size and max_len");
  Transformer<double> m(tiny, seed);
  CounterRng rng(derive_seed(seed, 9));
  // Move gains and biases off their init values so every term is exercised.
  for (auto& p : m.parameters()) {
    if (p.decay) continue;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.1 * rng.normal();
  }

  PackedBatch b;
  Targets t;
  const int L = tiny.max_len;
  for (int len : {L, std::max(2, L - 3), std::max(2, L / 2)}) {
    std::vector<int> seq;
    for (int i = 0; i < len; ++i) {
      seq.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(tiny.vocab_size))));
      t.ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(tiny.vocab_size))));
      t.mask.push_back(rng.uniform() < 0.5 ? 1 : 0);
    }
    b.add(seq);
  }
  t.mask[0] = 1;

  auto loss_at = [&] {
    return masked_cross_entropy(m.forward(b), t).loss;
  };
  m.zero_grad();
  Tape<double> tape;
  const auto r = masked_cross_entropy(m.forward_train(b, tape, nullptr), t);
  m.backward(tape, r.dlogits);

  GradCheckResult out;
  for (Eigen::Index i = 0; i < r.dlogits.rows(); ++i) {
    if (!t.mask[static_cast<std::size_t>(i)]) out.off_mask_max = std::max(out.off_mask_max, r.dlogits.row(i).cwiseAbs().maxCoeff());
  }
  // Relative error with an absolute floor so near-zero gradients compare on
  // absolute difference.
  constexpr double kFloor = 1e-6;
  for (auto& p : m.parameters()) {
    double worst = 0;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& w = p.value.data()[i];
      const double keep = w;
      w = keep + h;
      const double up = loss_at();
      w = keep - h;
      const double down = loss_at();
      w = keep;
      const double num = (up - down) / (2 * h);
      const double ana = p.grad.data()[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), kFloor});
      worst = std::max(worst, rel);
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_parameter = p.name;
        out.worst_index = static_cast<std::size_t>(i);
      }
      ++out.checked;
    }
    out.per_parameter[p.name] = worst;
  }
  return out;
}

}  // namespace isflab
