#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "charm/tensor.hpp"

namespace charm {

template <typename Real>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(id); }
  const Tensor<Real>& grad() const { return tape->grad(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> leaf(Tensor<Real> value, bool requires_grad = false);

  /// Appends an op result. `backward` is dropped when no input needs gradients.
  Var<Real> record(Tensor<Real> value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Accumulated gradient; a zero tensor when nothing flowed into the node.
  const Tensor<Real>& grad(std::size_t id);
  /// Gradient accumulator of an input, allocated on first use.
  Tensor<Real>& grad_accumulator(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and sweeps. `loss` must be 1x1.
  /// Throws ContractViolation when called again before zero_grad().
  void backward(Var<Real> loss);
  /// Sweeps from arbitrary upstream gradients.
  void backward(std::span<const std::pair<Var<Real>, Tensor<Real>>> seeds);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  void sweep(std::size_t last);

  std::deque<Node> nodes_;
  bool swept_ = false;
};

namespace ops {

/// (m x k)(k x n)
template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b);
/// (m x k)(n x k)^T
template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
/// Adds a 1 x n row to every row of a.
template <typename Real>
Var<Real> add_row(Var<Real> a, Var<Real> row);
template <typename Real>
Var<Real> scale(Var<Real> a, Real s);
/// Scales row i of a (m x n) by s(i, 0); s is m x 1.
template <typename Real>
Var<Real> scale_rows(Var<Real> a, Var<Real> s);

/// Row-wise softmax restricted to allowed entries (`allow` is row-major, same
/// shape as logits). Disallowed entries are exactly zero. A row with no allowed
/// entry is a ContractViolation.
template <typename Real>
Var<Real> masked_softmax(Var<Real> logits, std::span<const std::uint8_t> allow);
template <typename Real>
Var<Real> softmax_rows(Var<Real> logits);

/// One packed sequence for masked_attention: rows [offset, offset + length)
/// of the packed inputs, with a row-major length x length allow matrix.
struct AttentionSegment {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> allow;
};

/// Multi-head scaled dot-product attention over packed sequences. q, k, v are
/// (total rows) x d; heads split the columns evenly. Each segment attends only
/// within itself and only to allowed keys. Rows outside every segment are zero.
template <typename Real>
Var<Real> masked_attention(Var<Real> q, Var<Real> k, Var<Real> v,
                           std::shared_ptr<const std::vector<AttentionSegment>> segments,
                           std::size_t n_heads);

/// Row-wise layer normalization with biased variance.
template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps);
/// Exact (erf) GELU.
template <typename Real>
Var<Real> gelu(Var<Real> x);

template <typename Real>
Var<Real> embedding_lookup(Var<Real> table, std::span<const std::int32_t> ids);
template <typename Real>
Var<Real> select_rows(Var<Real> x, std::span<const std::size_t> rows);
template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts);
template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts);
template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t begin, std::size_t count);

/// 1 x n column means.
template <typename Real>
Var<Real> mean_rows(Var<Real> x);
template <typename Real>
Var<Real> sum(Var<Real> x);
template <typename Real>
Var<Real> mean(Var<Real> x);
/// r x 1, max-shifted.
template <typename Real>
Var<Real> logsumexp_rows(Var<Real> x);
/// r x 1: x(i, cols[i]).
template <typename Real>
Var<Real> pick(Var<Real> x, std::span<const std::size_t> cols);
/// Element-wise maximum over same-shaped inputs; ties go to the earliest input.
template <typename Real>
Var<Real> max_elementwise(std::span<const Var<Real>> xs);

}  // namespace ops

/// Value-level helpers used outside the tape.
template <typename Real>
Real logsumexp(std::span<const Real> xs);

}  // namespace charm
