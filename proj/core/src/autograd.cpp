#include "charm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace charm {

template <typename Real>
Var<Real> Tape<Real>::leaf(Tensor<Real> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, std::vector<std::size_t> inputs,
                             BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename Real>
const Tensor<Real>& Tape<Real>::grad(std::size_t id) {
  return grad_accumulator(id);
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad_accumulator(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor<Real>(n.value.shape(), Real(0));
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(Var<Real> loss) {
  if (loss.tape != this) throw ContractViolation("loss was recorded on a different tape");
  if (value(loss.id).numel() != 1) throw DimensionError("backward() needs a scalar loss");
  Tensor<Real> seed(value(loss.id).shape(), Real(1));
  std::pair<Var<Real>, Tensor<Real>> s{loss, std::move(seed)};
  backward(std::span<const std::pair<Var<Real>, Tensor<Real>>>(&s, 1));
}

template <typename Real>
void Tape<Real>::backward(std::span<const std::pair<Var<Real>, Tensor<Real>>> seeds) {
  if (swept_) {
    throw ContractViolation("backward() called twice without zero_grad(); gradients would double");
  }
  if (nodes_.empty()) throw ContractViolation("backward() on an empty tape");
  std::size_t last = 0;
  for (const auto& [var, g] : seeds) {
    if (var.tape != this) throw ContractViolation("seed was recorded on a different tape");
    if (!g.same_shape(value(var.id))) throw DimensionError("seed gradient shape mismatch");
    auto& acc = grad_accumulator(var.id);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    last = std::max(last, var.id);
  }
  swept_ = true;
  sweep(last);
}

template <typename Real>
void Tape<Real>::sweep(std::size_t last) {
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

template <typename Real>
void Tape<Real>::zero_grad() {
  for (auto& n : nodes_) {
    n.grad = Tensor<Real>();
    n.has_grad = false;
  }
  swept_ = false;
}

template class Tape<float>;
template class Tape<double>;

template <typename Real>
Real logsumexp(std::span<const Real> xs) {
  if (xs.empty()) return -std::numeric_limits<Real>::infinity();
  const Real m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  Real s = 0;
  for (Real x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

template float logsumexp<float>(std::span<const float>);
template double logsumexp<double>(std::span<const double>);

namespace ops {
namespace {

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a rank-2 tensor");
}

template <typename Real>
void require_same_tape(Var<Real> a, Var<Real> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw ContractViolation(std::string(op) + ": operands live on different tapes");
  }
}

// C(m x n) += A(m x k) B(k x n). Row i of C reads only row i of A, and zero
// multipliers are skipped so masked attention rows contribute nothing.
template <typename Real>
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      if (av == Real(0)) continue;
      const Real* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(m x n) += A(m x k) B(n x k)^T
template <typename Real>
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* bj = b + j * k;
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C(m x n) += A(k x m)^T B(k x n)
template <typename Real>
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a + p * m;
    const Real* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = ap[i];
      if (av == Real(0)) continue;
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename Real>
Real normal_cdf(Real x) {
  return Real(0.5) * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
Real normal_pdf(Real x) {
  return std::exp(Real(-0.5) * x * x) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
}

}  // namespace

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  require_same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.cols() != B.rows()) throw DimensionError("matmul: inner dimensions differ");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<Real> out(m, n);
  gemm_nn(A.data(), B.data(), out.data(), m, k, n);
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      gemm_nt(g.data(), t.value(b.id).data(), t.grad_accumulator(a.id).data(), m, n, k);
    }
    if (t.requires_grad(b.id)) {
      gemm_tn(t.value(a.id).data(), g.data(), t.grad_accumulator(b.id).data(), k, m, n);
    }
  });
}

template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  require_same_tape(a, b, "matmul_nt");
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.cols() != B.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor<Real> out(m, n);
  gemm_nt(A.data(), B.data(), out.data(), m, k, n);
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      gemm_nn(g.data(), t.value(b.id).data(), t.grad_accumulator(a.id).data(), m, n, k);
    }
    if (t.requires_grad(b.id)) {
      gemm_tn(g.data(), t.value(a.id).data(), t.grad_accumulator(b.id).data(), n, m, k);
    }
  });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same_tape(a, b, "add");
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) throw DimensionError("add: shape mismatch");
  Tensor<Real> out = A;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += B[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (auto id : {a.id, b.id}) {
      if (!t.requires_grad(id)) continue;
      auto& acc = t.grad_accumulator(id);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    }
  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  require_same_tape(a, b, "sub");
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) throw DimensionError("sub: shape mismatch");
  Tensor<Real> out = A;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& acc = t.grad_accumulator(a.id);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    }
    if (t.requires_grad(b.id)) {
      auto& acc = t.grad_accumulator(b.id);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] -= g[i];
    }
  });
}

template <typename Real>
Var<Real> add_row(Var<Real> a, Var<Real> row) {
  require_same_tape(a, row, "add_row");
  const auto& A = a.value();
  const auto& R = row.value();
  require_rank2(A, "add_row");
  if (R.numel() != A.cols()) throw DimensionError("add_row: row width mismatch");
  Tensor<Real> out = A;
  const std::size_t m = A.rows(), n = A.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += R[j];
  }
  return a.tape->record(std::move(out), {a.id, row.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& acc = t.grad_accumulator(a.id);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    }
    if (t.requires_grad(row.id)) {
      auto& acc = t.grad_accumulator(row.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc[j] += g(i, j);
      }
    }
  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real s) {
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return a.tape->record(std::move(out), {a.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& acc = t.grad_accumulator(a.id);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += s * g[i];
  });
}

template <typename Real>
Var<Real> masked_softmax(Var<Real> logits, std::span<const std::uint8_t> allow) {
  const auto& X = logits.value();
  require_rank2(X, "masked_softmax");
  if (allow.size() != X.numel()) throw DimensionError("masked_softmax: mask shape mismatch");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor<Real> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint8_t* mi = allow.data() + i * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mi[j]) {
        mx = any ? std::max(mx, X(i, j)) : X(i, j);
        any = true;
      }
    }
    if (!any) {
      throw ContractViolation("masked_softmax: row " + std::to_string(i) + " has no allowed key");
    }
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mi[j]) {
        const Real e = std::exp(X(i, j) - mx);
        out(i, j) = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (mi[j]) out(i, j) /= z;
    }
  }
  return logits.tape->record(std::move(out), {logits.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& acc = t.grad_accumulator(logits.id);
    for (std::size_t i = 0; i < m; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        if (y(i, j) != Real(0)) acc(i, j) += y(i, j) * (g(i, j) - dot);
      }
    }
  });
}

template <typename Real>
Var<Real> softmax_rows(Var<Real> logits) {
  std::vector<std::uint8_t> all(logits.value().numel(), 1);
  return masked_softmax(logits, std::span<const std::uint8_t>(all));
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps) {
  require_same_tape(x, gain, "layer_norm");
  require_same_tape(x, bias, "layer_norm");
  const auto& X = x.value();
  require_rank2(X, "layer_norm");
  const std::size_t m = X.rows(), n = X.cols();
  if (gain.value().numel() != n || bias.value().numel() != n) {
    throw DimensionError("layer_norm: gain/bias width mismatch");
  }
  const auto& G = gain.value();
  const auto& B = bias.value();
  Tensor<Real> out(m, n);
  Tensor<Real> xhat(m, n);
  std::vector<Real> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += X(i, j);
    mu /= Real(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Real d = X(i, j) - mu;
      var += d * d;
    }
    var /= Real(n);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (X(i, j) - mu) * inv_std[i];
      out(i, j) = xhat(i, j) * G[j] + B[j];
    }
  }
  return x.tape->record(
      std::move(out), {x.id, gain.id, bias.id},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Real>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& Gv = t.value(gain.id);
        if (t.requires_grad(gain.id)) {
          auto& acc = t.grad_accumulator(gain.id);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) acc[j] += g(i, j) * xhat(i, j);
          }
        }
        if (t.requires_grad(bias.id)) {
          auto& acc = t.grad_accumulator(bias.id);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) acc[j] += g(i, j);
          }
        }
        if (t.requires_grad(x.id)) {
          auto& acc = t.grad_accumulator(x.id);
          for (std::size_t i = 0; i < m; ++i) {
            Real mean_d = 0, mean_dx = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const Real d = g(i, j) * Gv[j];
              mean_d += d;
              mean_dx += d * xhat(i, j);
            }
            mean_d /= Real(n);
            mean_dx /= Real(n);
            for (std::size_t j = 0; j < n; ++j) {
              const Real d = g(i, j) * Gv[j];
              acc(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
      });
}

template <typename Real>
Var<Real> gelu(Var<Real> x) {
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * normal_cdf(out[i]);
  return x.tape->record(std::move(out), {x.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& X = t.value(x.id);
    auto& acc = t.grad_accumulator(x.id);
    for (std::size_t i = 0; i < acc.numel(); ++i) {
      acc[i] += g[i] * (normal_cdf(X[i]) + X[i] * normal_pdf(X[i]));
    }
  });
}

template <typename Real>
Var<Real> embedding_lookup(Var<Real> table, std::span<const std::int32_t> ids) {
  const auto& T = table.value();
  require_rank2(T, "embedding_lookup");
  const std::size_t n = T.cols();
  Tensor<Real> out(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range");
    }
    const auto src = T.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table.id},
                            [=, idv = std::move(idv)](Tape<Real>& t, std::size_t self) {
                              const auto& g = t.grad(self);
                              auto& acc = t.grad_accumulator(table.id);
                              for (std::size_t i = 0; i < idv.size(); ++i) {
                                auto dst = acc.row(static_cast<std::size_t>(idv[i]));
                                const auto src = g.row(i);
                                for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                              }
                            });
}

template <typename Real>
Var<Real> select_rows(Var<Real> x, std::span<const std::size_t> rows) {
  const auto& X = x.value();
  require_rank2(X, "select_rows");
  const std::size_t n = X.cols();
  Tensor<Real> out(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) throw DimensionError("select_rows: row out of range");
    const auto src = X.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x.id},
                        [=, rv = std::move(rv)](Tape<Real>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          auto& acc = t.grad_accumulator(x.id);
                          for (std::size_t i = 0; i < rv.size(); ++i) {
                            auto dst = acc.row(rv[i]);
                            const auto src = g.row(i);
                            for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    require_rank2(p.value(), "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column count mismatch");
    m += p.rows();
    ids.push_back(p.id);
  }
  Tensor<Real> out(m, n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value().values();
    std::copy(v.begin(), v.end(), out.data() + offset * n);
    offset += p.rows();
  }
  return parts[0].tape->record(std::move(out), ids, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t cnt = t.value(id).numel();
      if (t.requires_grad(id)) {
        auto& acc = t.grad_accumulator(id);
        for (std::size_t i = 0; i < cnt; ++i) acc[i] += g[off + i];
      }
      off += cnt;
    }
  });
}

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    require_rank2(p.value(), "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    n += p.cols();
    ids.push_back(p.id);
  }
  Tensor<Real> out(m, n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
    }
    offset += v.cols();
  }
  return parts[0].tape->record(std::move(out), ids, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        auto& acc = t.grad_accumulator(id);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) acc(i, j) += g(i, off + j);
        }
      }
      off += w;
    }
  });
}

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t begin, std::size_t count) {
  const auto& X = x.value();
  require_rank2(X, "slice_cols");
  if (begin + count > X.cols()) throw DimensionError("slice_cols: range out of bounds");
  const std::size_t m = X.rows();
  Tensor<Real> out(m, count);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = X(i, begin + j);
  }
  return x.tape->record(std::move(out), {x.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& acc = t.grad_accumulator(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < count; ++j) acc(i, begin + j) += g(i, j);
    }
  });
}

template <typename Real>
Var<Real> mean_rows(Var<Real> x) {
  const auto& X = x.value();
  require_rank2(X, "mean_rows");
  const std::size_t m = X.rows(), n = X.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  Tensor<Real> out(1, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += X(i, j);
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= Real(m);
  return x.tape->record(std::move(out), {x.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& acc = t.grad_accumulator(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) acc(i, j) += g[j] / Real(m);
    }
  });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return x.tape->record(Tensor<Real>(1, 1, s), {x.id}, [=](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    auto& acc = t.grad_accumulator(x.id);
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  const std::size_t cnt = x.value().numel();
  if (cnt == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), Real(1) / Real(cnt));
}

template <typename Real>
Var<Real> logsumexp_rows(Var<Real> x) {
  const auto& X = x.value();
  require_rank2(X, "logsumexp_rows");
  const std::size_t m = X.rows(), n = X.cols();
  if (n == 0) throw DimensionError("logsumexp_rows: no columns");
  Tensor<Real> out(m, 1);
  for (std::size_t i = 0; i < m; ++i) out[i] = logsumexp<Real>(X.row(i));
  return x.tape->record(std::move(out), {x.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& Xv = t.value(x.id);
    const auto& lse = t.value(self);
    auto& acc = t.grad_accumulator(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) acc(i, j) += g[i] * std::exp(Xv(i, j) - lse[i]);
    }
  });
}

template <typename Real>
Var<Real> pick(Var<Real> x, std::span<const std::size_t> cols) {
  const auto& X = x.value();
  require_rank2(X, "pick");
  const std::size_t m = X.rows();
  if (cols.size() != m) throw DimensionError("pick: need one column index per row");
  Tensor<Real> out(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= X.cols()) throw DimensionError("pick: column out of range");
    out[i] = X(i, cols[i]);
  }
  std::vector<std::size_t> cv(cols.begin(), cols.end());
  return x.tape->record(std::move(out), {x.id},
                        [=, cv = std::move(cv)](Tape<Real>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          auto& acc = t.grad_accumulator(x.id);
                          for (std::size_t i = 0; i < m; ++i) acc(i, cv[i]) += g[i];
                        });
}

template <typename Real>
Var<Real> max_elementwise(std::span<const Var<Real>> xs) {
  if (xs.empty()) throw DimensionError("max_elementwise: no inputs");
  std::vector<std::size_t> ids;
  for (const auto& v : xs) {
    require_same_tape(xs[0], v, "max_elementwise");
    if (!v.value().same_shape(xs[0].value())) throw DimensionError("max_elementwise: shape mismatch");
    ids.push_back(v.id);
  }
  Tensor<Real> out = xs[0].value();
  std::vector<std::uint32_t> arg(out.numel(), 0);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto& v = xs[k].value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      if (v[i] > out[i]) {
        out[i] = v[i];
        arg[i] = static_cast<std::uint32_t>(k);
      }
    }
  }
  return xs[0].tape->record(std::move(out), ids,
                            [=, arg = std::move(arg)](Tape<Real>& t, std::size_t self) {
                              const auto& g = t.grad(self);
                              for (std::size_t i = 0; i < arg.size(); ++i) {
                                const auto id = ids[arg[i]];
                                if (t.requires_grad(id)) t.grad_accumulator(id)[i] += g[i];
                              }
                            });
}

template <typename Real>
Var<Real> scale_rows(Var<Real> a, Var<Real> s) {
  require_same_tape(a, s, "scale_rows");
  const auto& A = a.value();
  const auto& S = s.value();
  require_rank2(A, "scale_rows");
  if (S.rows() != A.rows() || S.cols() != 1) throw DimensionError("scale_rows: need an m x 1 scale");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<Real> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = A(i, j) * S[i];
  }
  return a.tape->record(std::move(out), {a.id, s.id}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& Av = t.value(a.id);
    const auto& Sv = t.value(s.id);
    if (t.requires_grad(a.id)) {
      auto& acc = t.grad_accumulator(a.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) acc(i, j) += g(i, j) * Sv[i];
      }
    }
    if (t.requires_grad(s.id)) {
      auto& acc = t.grad_accumulator(s.id);
      for (std::size_t i = 0; i < m; ++i) {
        Real d = 0;
        for (std::size_t j = 0; j < n; ++j) d += g(i, j) * Av(i, j);
        acc[i] += d;
      }
    }
  });
}

template <typename Real>
Var<Real> masked_attention(Var<Real> q, Var<Real> k, Var<Real> v,
                           std::shared_ptr<const std::vector<AttentionSegment>> segments,
                           std::size_t n_heads) {
  require_same_tape(q, k, "masked_attention");
  require_same_tape(q, v, "masked_attention");
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  require_rank2(Q, "masked_attention");
  if (!Q.same_shape(K) || !Q.same_shape(V)) throw DimensionError("masked_attention: q, k, v differ");
  const std::size_t rows = Q.rows(), d = Q.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("masked_attention: width not divisible by head count");
  }
  const std::size_t dh = d / n_heads;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(dh));

  // Attention probabilities per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Real>>();
  std::vector<std::size_t> prob_offset;
  std::size_t total = 0;
  for (const auto& seg : *segments) {
    if (seg.offset + seg.length > rows) throw DimensionError("masked_attention: segment out of range");
    if (seg.allow.size() != seg.length * seg.length) {
      throw DimensionError("masked_attention: segment mask shape mismatch");
    }
    prob_offset.push_back(total);
    total += seg.length * seg.length * n_heads;
  }
  probs->assign(total, Real(0));

  Tensor<Real> out(rows, d);
  std::vector<Real> scores;
  for (std::size_t s = 0; s < segments->size(); ++s) {
    const auto& seg = (*segments)[s];
    const std::size_t L = seg.length, o = seg.offset;
    scores.resize(L);
    for (std::size_t h = 0; h < n_heads; ++h) {
      Real* P = probs->data() + prob_offset[s] + h * L * L;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const std::uint8_t* mi = seg.allow.data() + i * L;
        const Real* qi = Q.data() + (o + i) * d + c0;
        Real mx = 0;
        bool any = false;
        for (std::size_t j = 0; j < L; ++j) {
          if (!mi[j]) continue;
          const Real* kj = K.data() + (o + j) * d + c0;
          Real dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * sc;
          mx = any ? std::max(mx, scores[j]) : scores[j];
          any = true;
        }
        if (!any) {
          throw ContractViolation("masked_attention: row " + std::to_string(i) +
                                  " has no allowed key");
        }
        Real z = 0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!mi[j]) continue;
          P[i * L + j] = std::exp(scores[j] - mx);
          z += P[i * L + j];
        }
        Real* oi = out.data() + (o + i) * d + c0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!mi[j]) continue;
          P[i * L + j] /= z;
          const Real p = P[i * L + j];
          const Real* vj = V.data() + (o + j) * d + c0;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }

  return q.tape->record(
      std::move(out), {q.id, k.id, v.id},
      [=, prob_offset = std::move(prob_offset)](Tape<Real>& t, std::size_t self) {
        const auto& G = t.grad(self);
        const auto& Qv = t.value(q.id);
        const auto& Kv = t.value(k.id);
        const auto& Vv = t.value(v.id);
        Tensor<Real> dQ(rows, d), dK(rows, d), dV(rows, d);
        std::vector<Real> dS;
        for (std::size_t s = 0; s < segments->size(); ++s) {
          const auto& seg = (*segments)[s];
          const std::size_t L = seg.length, o = seg.offset;
          dS.resize(L);
          for (std::size_t h = 0; h < n_heads; ++h) {
            const Real* P = probs->data() + prob_offset[s] + h * L * L;
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < L; ++i) {
              const std::uint8_t* mi = seg.allow.data() + i * L;
              const Real* gi = G.data() + (o + i) * d + c0;
              Real dot = 0;
              for (std::size_t j = 0; j < L; ++j) {
                dS[j] = 0;
                if (!mi[j]) continue;
                const Real* vj = Vv.data() + (o + j) * d + c0;
                Real dp = 0;
                for (std::size_t c = 0; c < dh; ++c) dp += gi[c] * vj[c];
                dS[j] = dp;
                dot += P[i * L + j] * dp;
                Real* dvj = dV.data() + (o + j) * d + c0;
                const Real p = P[i * L + j];
                for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * gi[c];
              }
              const Real* qi = Qv.data() + (o + i) * d + c0;
              Real* dqi = dQ.data() + (o + i) * d + c0;
              for (std::size_t j = 0; j < L; ++j) {
                if (!mi[j]) continue;
                const Real ds = P[i * L + j] * (dS[j] - dot) * sc;
                if (ds == Real(0)) continue;
                const Real* kj = Kv.data() + (o + j) * d + c0;
                Real* dkj = dK.data() + (o + j) * d + c0;
                for (std::size_t c = 0; c < dh; ++c) {
                  dqi[c] += ds * kj[c];
                  dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
        const std::pair<std::size_t, Tensor<Real>*> parts[] = {{q.id, &dQ}, {k.id, &dK}, {v.id, &dV}};
        for (const auto& [id, g] : parts) {
          if (!t.requires_grad(id)) continue;
          auto& acc = t.grad_accumulator(id);
          for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += (*g)[i];
        }
      });
}

#define CHARM_INSTANTIATE_OPS(R)                                                         \
  template Var<R> matmul(Var<R>, Var<R>);                                                \
  template Var<R> matmul_nt(Var<R>, Var<R>);                                             \
  template Var<R> add(Var<R>, Var<R>);                                                   \
  template Var<R> sub(Var<R>, Var<R>);                                                   \
  template Var<R> add_row(Var<R>, Var<R>);                                               \
  template Var<R> scale(Var<R>, R);                                                      \
  template Var<R> scale_rows(Var<R>, Var<R>);                                            \
  template Var<R> masked_attention(Var<R>, Var<R>, Var<R>,                               \
                                   std::shared_ptr<const std::vector<AttentionSegment>>, \
                                   std::size_t);                                         \
  template Var<R> masked_softmax(Var<R>, std::span<const std::uint8_t>);                 \
  template Var<R> softmax_rows(Var<R>);                                                  \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, R);                                 \
  template Var<R> gelu(Var<R>);                                                          \
  template Var<R> embedding_lookup(Var<R>, std::span<const std::int32_t>);               \
  template Var<R> select_rows(Var<R>, std::span<const std::size_t>);                     \
  template Var<R> concat_rows(std::span<const Var<R>>);                                  \
  template Var<R> concat_cols(std::span<const Var<R>>);                                  \
  template Var<R> slice_cols(Var<R>, std::size_t, std::size_t);                          \
  template Var<R> mean_rows(Var<R>);                                                     \
  template Var<R> sum(Var<R>);                                                           \
  template Var<R> mean(Var<R>);                                                          \
  template Var<R> logsumexp_rows(Var<R>);                                                \
  template Var<R> pick(Var<R>, std::span<const std::size_t>);                            \
  template Var<R> max_elementwise(std::span<const Var<R>>);

CHARM_INSTANTIATE_OPS(float)
CHARM_INSTANTIATE_OPS(double)

#undef CHARM_INSTANTIATE_OPS

}  // namespace ops
}  // namespace charm
