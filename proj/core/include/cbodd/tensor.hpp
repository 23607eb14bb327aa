#pragma once

// Dense float64 arrays with a recorded computation graph for reverse-mode
// gradients. A Tensor is a cheap handle: copies share the same node, so a
// parameter can be referenced from a module and from an optimizer at once.
// Forward ops never modify their inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cbodd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

struct BackwardResult {
  /// False when the loss was not produced from any gradient-requiring input.
  /// The call is then a no-op.
  bool graph_connected = true;
  std::size_t nodes_visited = 0;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Mutable view for in-place updates of leaf values (initialization,
  /// optimizer steps, finite-difference probes). Does not record anything.
  std::span<double> data();
  double item() const;
  double value(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  /// Marks a leaf as a trainable parameter and allocates a zero gradient.
  void set_requires_grad(bool flag);
  /// Gradient buffer. Empty span when the tensor does not require grad.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires
  /// grad. `this` must be rank 0.
  BackwardResult backward() const;

  const void* id() const { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Sentinel used by gather(): the output element is zero.
inline constexpr std::size_t kZeroIndex = std::numeric_limits<std::size_t>::max();

// --- elementwise ---------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// Adds a vector of extent a.shape().back() to every row of `a`.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// --- linear algebra ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: a [G,m,k] x b [G,k,n], or b [G,n,k] when transpose_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& a);

// --- layout --------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
/// out.flat[i] = a.flat[indices[i]] (or 0 for kZeroIndex). Gradients are
/// scatter-added back.
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat_last(const std::vector<Tensor>& parts);

// --- reductions ----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_axis(const Tensor& a, std::size_t axis);
Tensor frobenius_sq(const Tensor& a);

// --- neural ops ----------------------------------------------------------
/// Softmax over the last axis, stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& a);
/// Zero-mean unit-variance normalization over the last axis (no affine).
Tensor layer_norm_last(const Tensor& a, double eps = 1e-5);
/// Cross-correlation. x [N,C,H,W], weight [O,C,kh,kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// x [N,C,H,W] -> [N,C,out_h,out_w]; window (i,j) covers rows
/// floor(i*H/out_h) .. floor((i+1)*H/out_h) - 1, and likewise for columns.
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// Mean binary cross-entropy; probabilities clamped to [1e-12, 1 - 1e-12].
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets);
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace cbodd
