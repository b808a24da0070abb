#pragma once

#include <span>

#include "charm/autograd.hpp"
#include "charm/encoder.hpp"
#include "charm/tensor.hpp"

namespace charm {

struct LossWeights {
  double lambda_agg = 1.0;
  double lambda_fields = 1.0;
  double lambda_max = 1.0;
  double lambda_div = 0.0;
  double tau = 0.1;

  /// Throws ConfigError on a negative weight or non-positive tau.
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// -log softmax(candidates . h_q / tau)[positive], via logsumexp.
double info_nce(std::span<const double> h_q, std::size_t positive,
                const Tensor<double>& candidates, double tau);

/// Within-product softmax over field scores, scored at the best field.
double mvr_div_loss(std::span<const double> h_q, const Tensor<double>& per_field, double tau);

/// Mean over rows b of logsumexp(scores(b, :) / tau) - scores(b, positives[b]) / tau.
template <typename Real>
Var<Real> info_nce_scores(Var<Real> scores, std::span<const std::size_t> positives, Real tau);

template <typename Real>
struct CharmLossTerms {
  Var<Real> total;
  Var<Real> agg;     ///< InfoNCE on aggregated product vectors
  Var<Real> fields;  ///< mean over fields of per-field InfoNCE
  Var<Real> max;     ///< InfoNCE on each candidate's best-field score
  Var<Real> div;     ///< within-positive diversity term
};

/// queries: B x d. products: N candidates. positives[b] indexes the candidate
/// list. Terms with a zero weight are still computed for logging but are left
/// out of `total`.
template <typename Real>
CharmLossTerms<Real> charm_loss(Var<Real> queries, const RepresentationVars<Real>& products,
                                std::span<const std::size_t> positives, const LossWeights& w);

}  // namespace charm
