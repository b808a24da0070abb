#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "charm/error.hpp"
#include "charm/tensor.hpp"

namespace charm {

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one tensor per parameter.
template <typename Real>
struct AdamState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::size_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(std::span<Tensor<Real>* const> params);
};

/// One bias-corrected Adam update in place. Throws NonFiniteGradient before
/// touching any parameter when a gradient entry is NaN or infinite.
template <typename Real>
void adam_step(std::span<Tensor<Real>* const> params, std::span<const Tensor<Real>> grads,
               AdamState<Real>& state, double lr, const AdamConfig& config = {});

/// Global L2 norm over all gradients.
template <typename Real>
double global_norm(std::span<const Tensor<Real>> grads);

/// Rescales all gradients by max_norm / norm iff norm > max_norm. Returns the
/// norm before clipping.
template <typename Real>
double clip_global_norm(std::span<Tensor<Real>> grads, double max_norm = 1.0);

/// Linear warmup from 0 to base_lr over warmup_ratio * total_steps steps, then
/// linear decay to 0 at total_steps.
double linear_warmup_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio,
                              double base_lr);

}  // namespace charm
