#include <gtest/gtest.h>

#include <cmath>

#include "charm/error.hpp"
#include "charm/losses.hpp"
#include "gradcheck.hpp"

using namespace charm;
using namespace charm::testing;

namespace {

double dotv(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

double nce(const std::vector<double>& scores, std::size_t pos, double tau) {
  double z = 0;
  for (double s : scores) z += std::exp(s / tau);
  return std::log(z) - scores[pos] / tau;
}

struct Fixture {
  Tensor<double> q, agg;
  std::vector<Tensor<double>> fields;
  std::vector<std::size_t> pos = {2, 0};
};

Fixture make(Rng& rng) {
  Fixture f;
  f.q = random_tensor(2, 4, rng, 0.5);
  f.agg = random_tensor(3, 4, rng, 0.5);
  for (int k = 0; k < 2; ++k) f.fields.push_back(random_tensor(3, 4, rng, 0.5));
  return f;
}

RepresentationVars<double> vars(Tape<double>& t, const std::vector<Var<double>>& v) {
  RepresentationVars<double> r;
  r.aggregated = v[1];
  r.fields = {v[2], v[3]};
  return r;
}

}  // namespace

TEST(InfoNce, UniformScoresGiveLogN) {
  const std::vector<double> h = {0.0, 0.0};
  Tensor<double> cands(5, 2, 1.0);
  EXPECT_NEAR(info_nce(h, 3, cands, 0.1), std::log(5.0), 1e-12);
}

TEST(InfoNce, RejectsBadInput) {
  const std::vector<double> h = {1.0, 0.0};
  Tensor<double> cands(3, 2, 0.0);
  EXPECT_THROW(info_nce(h, 3, cands, 0.1), DimensionError);
  EXPECT_THROW(info_nce(h, 0, cands, 0.0), ConfigError);
}

TEST(DivLoss, ZeroWhenOneFieldDominates) {
  const std::vector<double> h = {1.0};
  Tensor<double> f(2, 1, std::vector<double>{100.0, -100.0});
  EXPECT_NEAR(mvr_div_loss(h, f, 0.1), 0.0, 1e-12);
  Tensor<double> g(2, 1, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(mvr_div_loss(h, g, 0.1), std::log(2.0), 1e-12);
}

TEST(CharmLoss, MatchesBruteForce) {
  Rng rng(11);
  const auto fx = make(rng);
  LossWeights w;
  w.lambda_agg = 1.0;
  w.lambda_fields = 0.5;
  w.lambda_max = 2.0;
  w.lambda_div = 0.3;
  w.tau = 0.2;

  Tape<double> t;
  std::vector<Var<double>> v = {t.leaf(fx.q), t.leaf(fx.agg), t.leaf(fx.fields[0]), t.leaf(fx.fields[1])};
  const auto terms = charm_loss(v[0], vars(t, v), std::span<const std::size_t>(fx.pos), w);

  double agg = 0, fields = 0, mx = 0, div = 0;
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> sa, s0, s1, sm;
    for (std::size_t j = 0; j < 3; ++j) {
      sa.push_back(dotv(fx.q, b, fx.agg, j));
      s0.push_back(dotv(fx.q, b, fx.fields[0], j));
      s1.push_back(dotv(fx.q, b, fx.fields[1], j));
      sm.push_back(std::max(s0.back(), s1.back()));
    }
    agg += nce(sa, fx.pos[b], w.tau) / 2;
    fields += (nce(s0, fx.pos[b], w.tau) + nce(s1, fx.pos[b], w.tau)) / 4;
    mx += nce(sm, fx.pos[b], w.tau) / 2;
    const std::vector<double> own = {s0[fx.pos[b]], s1[fx.pos[b]]};
    div += nce(own, own[0] >= own[1] ? 0 : 1, w.tau) / 2;
  }
  EXPECT_NEAR(terms.agg.value()[0], agg, 1e-10);
  EXPECT_NEAR(terms.fields.value()[0], fields, 1e-10);
  EXPECT_NEAR(terms.max.value()[0], mx, 1e-10);
  EXPECT_NEAR(terms.div.value()[0], div, 1e-10);
  EXPECT_NEAR(terms.total.value()[0], agg + 0.5 * fields + 2.0 * mx + 0.3 * div, 1e-10);
}

TEST(CharmLoss, ZeroWeightsDropTerms) {
  Rng rng(12);
  const auto fx = make(rng);
  LossWeights w;
  w.lambda_agg = 0;
  w.lambda_max = 0;
  Tape<double> t;
  std::vector<Var<double>> v = {t.leaf(fx.q), t.leaf(fx.agg), t.leaf(fx.fields[0]), t.leaf(fx.fields[1])};
  const auto terms = charm_loss(v[0], vars(t, v), std::span<const std::size_t>(fx.pos), w);
  EXPECT_DOUBLE_EQ(terms.total.value()[0], terms.fields.value()[0]);
  w.lambda_fields = 0;
  const auto none = charm_loss(v[0], vars(t, v), std::span<const std::size_t>(fx.pos), w);
  EXPECT_EQ(none.total.value()[0], 0.0);
}

TEST(CharmLoss, GradientsMatchFiniteDifferences) {
  Rng rng(13);
  const auto fx = make(rng);
  LossWeights w;
  w.lambda_div = 0.5;
  const auto pos = fx.pos;
  const auto r = check_gradients({fx.q, fx.agg, fx.fields[0], fx.fields[1]},
                                 [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                                   return charm_loss(v[0], vars(t, v), std::span<const std::size_t>(pos), w).total;
                                 },
                                 rng);
  EXPECT_LT(r.max_rel, 1e-4);
  EXPECT_GE(r.probes, 20u);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  w.tau = 0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = {};
  w.lambda_max = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}
