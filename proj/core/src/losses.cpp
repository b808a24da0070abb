#include "charm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "charm/error.hpp"

namespace charm {

void LossWeights::validate() const {
  if (lambda_agg < 0 || lambda_fields < 0 || lambda_max < 0 || lambda_div < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(tau > 0)) throw ConfigError("temperature tau must be positive");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double info_nce(std::span<const double> h_q, std::size_t positive,
                const Tensor<double>& candidates, double tau) {
  if (!(tau > 0)) throw ConfigError("info_nce: tau must be positive");
  if (positive >= candidates.rows()) throw DimensionError("info_nce: positive index out of range");
  if (candidates.cols() != h_q.size()) throw DimensionError("info_nce: dimension mismatch");
  std::vector<double> logits(candidates.rows());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dot(h_q, candidates.row(i)) / tau;
  return logsumexp<double>(logits) - logits[positive];
}

double mvr_div_loss(std::span<const double> h_q, const Tensor<double>& per_field, double tau) {
  if (per_field.rows() == 0) throw DimensionError("mvr_div_loss: no fields");
  std::vector<double> logits(per_field.rows());
  for (std::size_t f = 0; f < logits.size(); ++f) logits[f] = dot(h_q, per_field.row(f)) / tau;
  return logsumexp<double>(logits) - *std::max_element(logits.begin(), logits.end());
}

template <typename Real>
Var<Real> info_nce_scores(Var<Real> scores, std::span<const std::size_t> positives, Real tau) {
  if (scores.rows() != positives.size()) {
    throw DimensionError("info_nce: one positive index per query required");
  }
  for (auto p : positives) {
    if (p >= scores.cols()) throw DimensionError("info_nce: positive index out of range");
  }
  auto logits = ops::scale(scores, Real(1) / tau);
  return ops::mean(ops::sub(ops::logsumexp_rows(logits), ops::pick(logits, positives)));
}

template <typename Real>
CharmLossTerms<Real> charm_loss(Var<Real> queries, const RepresentationVars<Real>& products,
                                std::span<const std::size_t> positives, const LossWeights& w) {
  w.validate();
  const Real tau = static_cast<Real>(w.tau);
  const std::size_t n_fields = products.fields.size();
  if (n_fields == 0) throw DimensionError("charm_loss: products have no fields");

  CharmLossTerms<Real> t;
  t.agg = info_nce_scores(ops::matmul_nt(queries, products.aggregated), positives, tau);

  std::vector<Var<Real>> field_scores;
  for (const auto& f : products.fields) field_scores.push_back(ops::matmul_nt(queries, f));
  std::vector<Var<Real>> field_losses;
  for (const auto& s : field_scores) field_losses.push_back(info_nce_scores(s, positives, tau));
  t.fields = ops::mean(ops::concat_cols(std::span<const Var<Real>>(field_losses)));

  t.max = info_nce_scores(ops::max_elementwise(std::span<const Var<Real>>(field_scores)),
                          positives, tau);

  std::vector<Var<Real>> pos_scores;
  for (const auto& s : field_scores) pos_scores.push_back(ops::scale(ops::pick(s, positives), Real(1) / tau));
  auto pos_logits = ops::concat_cols(std::span<const Var<Real>>(pos_scores));
  auto best = ops::max_elementwise(std::span<const Var<Real>>(pos_scores));
  t.div = ops::mean(ops::sub(ops::logsumexp_rows(pos_logits), best));

  const std::pair<double, Var<Real>> terms[] = {
      {w.lambda_agg, t.agg}, {w.lambda_fields, t.fields}, {w.lambda_max, t.max}, {w.lambda_div, t.div}};
  bool any = false;
  for (const auto& [lambda, v] : terms) {
    if (lambda == 0.0) continue;
    auto term = lambda == 1.0 ? v : ops::scale(v, static_cast<Real>(lambda));
    t.total = any ? ops::add(t.total, term) : term;
    any = true;
  }
  if (!any) t.total = ops::scale(t.agg, Real(0));
  return t;
}

template Var<float> info_nce_scores(Var<float>, std::span<const std::size_t>, float);
template Var<double> info_nce_scores(Var<double>, std::span<const std::size_t>, double);
template CharmLossTerms<float> charm_loss(Var<float>, const RepresentationVars<float>&,
                                          std::span<const std::size_t>, const LossWeights&);
template CharmLossTerms<double> charm_loss(Var<double>, const RepresentationVars<double>&,
                                           std::span<const std::size_t>, const LossWeights&);

}  // namespace charm
