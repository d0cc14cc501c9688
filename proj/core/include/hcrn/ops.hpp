#pragma once

// Differentiable tensor operations.
//
// Broadcasting is limited to singleton extents between tensors of equal rank:
// an extent of 1 on one side stretches to match the other. There is no
// implicit rank promotion; reshape first when ranks differ.

#include <cstdint>
#include <span>
#include <vector>

#include "hcrn/tensor.hpp"

namespace hcrn::ops {

// Affine map on the last axis: out[..., j] = sum_i x[..., i] * w[i, j] + b[j].
// `b` may be undefined for a bias-free map.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

enum class Activation { kElu, kSigmoid, kTanh, kRelu };
Tensor apply_activation(const Tensor& x, Activation kind);
Tensor elu(const Tensor& x);  // alpha = 1
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
// Elementwise arithmetic mean of equally shaped tensors.
Tensor reduce_mean(std::span<const Tensor> parts);

Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor hadamard(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// Natural log; throws std::domain_error on non-positive input.
Tensor log(const Tensor& x);

// Full reductions to a rank-0 tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reductions that drop `axis`.
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Singleton-extent broadcast to `shape` (equal rank).
Tensor expand(const Tensor& x, const Shape& shape);

// Rows of `table` [V, e] selected by `ids`, giving [ids.size(), e].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
// out[b] = x[b, index[b]] for x of shape [B, A].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

// Multiply-accumulate accounting, used by the cost benchmark.
enum class CostCategory : int { kOther = 0, kRelationAggregate = 1, kRelationLinear = 2 };
inline constexpr int kCostCategoryCount = 3;

struct CostCounters {
  std::uint64_t macs[kCostCategoryCount] = {0, 0, 0};
  std::uint64_t of(CostCategory c) const { return macs[static_cast<int>(c)]; }
  std::uint64_t total() const { return macs[0] + macs[1] + macs[2]; }
};

// Per-thread counters that linear and reduce_mean charge to the current category.
CostCounters& cost_counters();
void reset_cost_counters();

class CostScope {
 public:
  explicit CostScope(CostCategory category);
  ~CostScope();
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;

 private:
  CostCategory previous_;
};

}  // namespace hcrn::ops
