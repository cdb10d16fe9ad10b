#pragma once

// Reverse-mode differentiation over dense double tensors.
//
// Every op on a Var that needs a gradient appends a node to the calling
// thread's tape. backward() replays the tape in reverse once and then
// discards it; a second backward() on the same result throws. Vars that do
// not require a gradient are plain values and never touch the tape, which is
// how frozen networks and difficulty maps stay constant.

#include "rdd/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>

namespace rdd::ad {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t generation = 0;
  std::size_t position = 0;
  // Propagates (grad, value) of this node into its inputs.
  std::function<void(const Tensor&, const Tensor&)> backward;
};

}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Leaves only.
  void set_requires_grad(bool requires_grad);

  bool has_grad() const;
  const Tensor& grad() const;
  void zero_grad();

  /// Mutable storage of a leaf, for optimizers and finite differences.
  Tensor& leaf_value();

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Var from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) { return Var(std::move(value), false); }
inline Var parameter(Tensor value) { return Var(std::move(value), true); }

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Seeds d(scalar)/d(scalar) = 1 and accumulates into every reachable leaf
/// that requires a gradient. Consumes the tape.
void backward(const Var& scalar);

/// Drops everything recorded on this thread's tape without running it.
void reset_tape();
std::size_t tape_size();

// Elementwise arithmetic with numpy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
/// Gradient is taken as 0 where the output is 0.
Var sqrt(const Var& x);

/// [m, k] x [k, n] -> [m, n].
Var matmul(const Var& a, const Var& b);

/// x: [B, Cin, H, W], weight: [Cout, Cin, K, K], bias: [Cout] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

/// Nearest-neighbour resampling of [B, C, H, W] to [B, C, out_h, out_w];
/// source index = floor(dst * in / out).
Var resize_nearest(const Var& x, Index out_h, Index out_w);

Var reshape(const Var& x, Shape shape);

Var sum(const Var& x);
Var sum(const Var& x, int axis, bool keepdim = false);
Var mean(const Var& x);
Var mean(const Var& x, int axis, bool keepdim = false);
/// Gradient flows to the first maximal entry along `axis`.
Var max_over_axis(const Var& x, int axis, bool keepdim = false);

/// Stable log(softmax(x)) along `axis` via max subtraction.
Var log_softmax(const Var& x, int axis);

/// Picks x[b, labels[b, ...], ...] along axis 1: [B, C, ...] -> [B, ...].
Var gather_class_channel(const Var& x, const LabelMap& labels);

/// Rows of [N, D] divided by max(||row||_2, eps).
Var normalize_rows(const Var& x, double eps = 1e-12);
/// ||row||_2 of [N, D] -> [N]; gradient 0 for zero rows.
Var row_norms(const Var& x);

/// Same value, no gradient path.
Var detach(const Var& x);

}  // namespace rdd::ad
