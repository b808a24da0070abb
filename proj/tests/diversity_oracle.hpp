#pragma once

#include <cmath>
#include <vector>

#include "charm/tensor.hpp"

namespace charm::testing {

struct DiversityReference {
  double mean_euclidean = 0;
  double mean_dot = 0;
  double log_det = 0;
  double epsilon = 0;
};

// log det via a plain Cholesky factorization.
inline double cholesky_log_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double s = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    a[j][j] = std::sqrt(d);
    s += 2 * std::log(a[j][j]);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i][j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i][k] * a[j][k];
      a[i][j] = v / a[j][j];
    }
  }
  return s;
}

// All pairs, sample covariance with an M-1 denominator plus a ridge of 1e-6
// times the mean variance.
inline DiversityReference diversity_reference(const Tensor<float>& x) {
  const std::size_t m = x.rows(), d = x.cols();
  DiversityReference r;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      double sq = 0, p = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const double a = x(i, c), b = x(j, c);
        sq += (a - b) * (a - b);
        p += a * b;
      }
      r.mean_euclidean += std::sqrt(sq);
      r.mean_dot += p;
      ++n;
    }
  }
  if (n) {
    r.mean_euclidean /= double(n);
    r.mean_dot /= double(n);
  }
  std::vector<double> mu(d, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < d; ++c) mu[c] += x(i, c) / double(m);
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0));
  const double denom = m > 1 ? double(m - 1) : 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += (x(i, a) - mu[a]) * (x(i, b) - mu[b]) / denom;
    }
  }
  double diag = 0;
  for (std::size_t a = 0; a < d; ++a) diag += cov[a][a] / double(d);
  r.epsilon = diag > 0 ? 1e-6 * diag : 1e-6;
  for (std::size_t a = 0; a < d; ++a) cov[a][a] += r.epsilon;
  r.log_det = cholesky_log_det(cov);
  return r;
}

}  // namespace charm::testing
