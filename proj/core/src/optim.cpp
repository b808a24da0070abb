#include "charm/optim.hpp"

#include <cmath>
#include <string>

namespace charm {

template <typename Real>
AdamState<Real> AdamState<Real>::zeros_like(std::span<Tensor<Real>* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.m.emplace_back(p->shape(), Real(0));
    s.v.emplace_back(p->shape(), Real(0));
  }
  return s;
}

template <typename Real>
void adam_step(std::span<Tensor<Real>* const> params, std::span<const Tensor<Real>> grads,
               AdamState<Real>& state, double lr, const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].same_shape(*params[k])) throw DimensionError("adam_step: gradient shape mismatch");
    for (Real g : grads[k].values()) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("non-finite gradient in parameter " + std::to_string(k));
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(config.beta1);
  const Real b2 = static_cast<Real>(config.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (Real(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Real(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      p[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template <typename Real>
double global_norm(std::span<const Tensor<Real>> grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (Real x : g.values()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(sq);
}

template <typename Real>
double clip_global_norm(std::span<Tensor<Real>> grads, double max_norm) {
  const double norm = global_norm<Real>(grads);
  if (norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (auto& g : grads) {
      for (auto& x : g.values()) x *= factor;
    }
  }
  return norm;
}

double linear_warmup_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio,
                              double base_lr) {
  if (total_steps == 0) return 0.0;
  const double warmup = warmup_ratio * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warmup) return base_lr * s / warmup;
  const double remaining = static_cast<double>(total_steps) - warmup;
  if (remaining <= 0.0) return base_lr;
  return base_lr * std::max(0.0, (static_cast<double>(total_steps) - s) / remaining);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                               AdamState<float>&, double, const AdamConfig&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&, double, const AdamConfig&);
template double global_norm<float>(std::span<const Tensor<float>>);
template double global_norm<double>(std::span<const Tensor<double>>);
template double clip_global_norm<float>(std::span<Tensor<float>>, double);
template double clip_global_norm<double>(std::span<Tensor<double>>, double);

}  // namespace charm
