#include "rdd/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace rdd::ad {

using detail::Node;
using Storage = Tensor::Storage;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

namespace {

struct Tape {
  std::vector<std::shared_ptr<Node>> nodes;
  std::uint64_t generation = 1;
};

thread_local Tape g_tape;
thread_local int g_no_grad_depth = 0;

bool tracks(const Var& v) { return grad_enabled() && v.defined() && v.requires_grad(); }

Storage& grad_buffer(Node& n) {
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad.data();
}

template <typename Fn>
Var record(Tensor value, bool needs_grad, Fn&& backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs_grad) {
    node->requires_grad = true;
    node->leaf = false;
    node->generation = g_tape.generation;
    node->position = g_tape.nodes.size();
    node->backward = std::forward<Fn>(backward_fn);
    g_tape.nodes.push_back(node);
  }
  return Var::from_node(std::move(node));
}

void require_defined(const Var& v, const char* op) {
  if (!v.defined()) throw std::invalid_argument(std::string(op) + ": undefined input");
}

void require_rank(const Var& v, int rank, const char* op) {
  if (v.value().ndim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got shape " +
                     to_string(v.shape()));
  }
}

// Right-aligned broadcasting. Maps are empty when the operand already has the
// output shape.
struct BroadcastPlan {
  Shape out;
  std::vector<Index> a_map;
  std::vector<Index> b_map;
  Index a_at(Index i) const { return a_map.empty() ? i : a_map[static_cast<std::size_t>(i)]; }
  Index b_at(Index i) const { return b_map.empty() ? i : b_map[static_cast<std::size_t>(i)]; }
};

std::vector<Index> broadcast_map(const Shape& in, const Shape& out) {
  const std::size_t nd = out.size();
  const std::size_t offset = nd - in.size();
  std::vector<Index> in_strides(nd, 0);
  Index stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_strides[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  const Index n = numel(out);
  std::vector<Index> map(static_cast<std::size_t>(n));
  std::vector<Index> counter(nd, 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    map[static_cast<std::size_t>(i)] = src;
    for (std::size_t k = nd; k-- > 0;) {
      ++counter[k];
      src += in_strides[k];
      if (counter[k] < out[k]) break;
      src -= in_strides[k] * out[k];
      counter[k] = 0;
    }
  }
  return map;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  const std::size_t nd = std::max(a.size(), b.size());
  plan.out.assign(nd, 1);
  for (std::size_t k = 0; k < nd; ++k) {
    const Index da = k < nd - a.size() ? 1 : a[k - (nd - a.size())];
    const Index db = k < nd - b.size() ? 1 : b[k - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + to_string(a) + " and " + to_string(b) +
                       " (dimension " + std::to_string(k) + ": " + std::to_string(da) + " vs " +
                       std::to_string(db) + ")");
    }
    plan.out[k] = std::max(da, db);
  }
  if (a != plan.out) plan.a_map = broadcast_map(a, plan.out);
  if (b != plan.out) plan.b_map = broadcast_map(b, plan.out);
  return plan;
}

template <typename Fwd, typename Partials>
Var elementwise_binary(const Var& a, const Var& b, const char* op, Fwd fwd, Partials partials) {
  require_defined(a, op);
  require_defined(b, op);
  auto plan = std::make_shared<const BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), op));
  Tensor out(plan->out);
  const Storage& av = a.value().data();
  const Storage& bv = b.value().data();
  for (Index i = 0; i < out.size(); ++i) out[i] = fwd(av[plan->a_at(i)], bv[plan->b_at(i)]);
  return record(std::move(out), tracks(a) || tracks(b),
                [an = a.node(), bn = b.node(), plan, partials](const Tensor& g, const Tensor&) {
                  Storage* ga = an->requires_grad ? &grad_buffer(*an) : nullptr;
                  Storage* gb = bn->requires_grad ? &grad_buffer(*bn) : nullptr;
                  const Storage& av = an->value.data();
                  const Storage& bv = bn->value.data();
                  for (Index i = 0; i < g.size(); ++i) {
                    const Index ia = plan->a_at(i);
                    const Index ib = plan->b_at(i);
                    const auto [da, db] = partials(av[ia], bv[ib]);
                    if (ga) (*ga)[ia] += g[i] * da;
                    if (gb) (*gb)[ib] += g[i] * db;
                  }
                });
}

// Unary op whose derivative depends on (input, output).
template <typename Fwd, typename Deriv>
Var elementwise_unary(const Var& x, const char* op, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  Tensor out(x.shape());
  const Storage& xv = x.value().data();
  for (Index i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return record(std::move(out), tracks(x), [xn = x.node(), deriv](const Tensor& g, const Tensor& out) {
    Storage& gx = grad_buffer(*xn);
    const Storage& xv = xn->value.data();
    const Storage& ov = out.data();
    for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], ov[i]);
  });
}

Shape reduced_shape(const Shape& shape, int axis, bool keepdim) {
  const int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  Shape out = shape;
  if (keepdim) {
    out[static_cast<std::size_t>(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
    if (out.empty()) out.push_back(1);
  }
  return out;
}

struct ConvGeometry {
  Index batch, in_ch, in_h, in_w;
  Index out_ch, kernel;
  Index out_h, out_w;
  int stride, padding;
  Index patch() const { return in_ch * kernel * kernel; }
  Index out_pixels() const { return out_h * out_w; }
  bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

// cols: [Cin*K*K, Ho*Wo] row-major.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const Index op = g.out_pixels();
  for (Index c = 0; c < g.in_ch; ++c) {
    for (Index kh = 0; kh < g.kernel; ++kh) {
      for (Index kw = 0; kw < g.kernel; ++kw) {
        double* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * op;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.in_h + ih) * g.in_w;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  const Index op = g.out_pixels();
  for (Index c = 0; c < g.in_ch; ++c) {
    for (Index kh = 0; kh < g.kernel; ++kh) {
      for (Index kw = 0; kw < g.kernel; ++kw) {
        const double* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * op;
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          const double* src = row + oh * g.out_w;
          double* dst = x + (c * g.in_h + ih) * g.in_w;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::from_node(std::shared_ptr<detail::Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("access to undefined Var");
  return node_->value;
}

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar of shape " + to_string(v.shape()));
  return v[0];
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
bool Var::is_leaf() const { return !node_ || node_->leaf; }

void Var::set_requires_grad(bool requires_grad) {
  if (!is_leaf()) throw TapeError("set_requires_grad on a non-leaf Var");
  node_->requires_grad = requires_grad;
}

bool Var::has_grad() const { return node_ && node_->has_grad; }

const Tensor& Var::grad() const {
  if (!has_grad()) throw TapeError("Var has no gradient; run backward() first");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) {
    node_->grad = Tensor();
    node_->has_grad = false;
  }
}

Tensor& Var::leaf_value() {
  if (!is_leaf()) throw TapeError("leaf_value() on a recorded intermediate");
  if (!node_) throw std::logic_error("access to undefined Var");
  return node_->value;
}

// ---------------------------------------------------------------------------
// Tape control

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void reset_tape() {
  g_tape.nodes.clear();
  ++g_tape.generation;
}

std::size_t tape_size() { return g_tape.nodes.size(); }

void backward(const Var& scalar) {
  if (!scalar.defined()) throw TapeError("backward() on undefined Var");
  if (scalar.size() != 1) {
    throw TapeError("backward() needs a scalar, got shape " + to_string(scalar.shape()));
  }
  Node& root = *scalar.node();
  if (root.leaf) throw TapeError("backward() target was not recorded on the tape");
  if (root.generation != g_tape.generation || root.position >= g_tape.nodes.size() ||
      g_tape.nodes[root.position].get() != &root) {
    throw TapeError("tape already consumed; re-record the computation before calling backward() again");
  }
  grad_buffer(root)[0] += 1.0;
  for (std::size_t i = root.position + 1; i-- > 0;) {
    Node& n = *g_tape.nodes[i];
    if (n.has_grad && n.backward) n.backward(n.grad, n.value);
    n.backward = nullptr;
    n.grad = Tensor();
    n.has_grad = false;
  }
  reset_tape();
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(const Var& a, const Var& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(const Var& a, const Var& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Var div(const Var& a, const Var& b) {
  return elementwise_binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var scale(const Var& a, double factor) {
  return elementwise_unary(
      a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return elementwise_unary(
      a, "add_scalar", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var relu(const Var& x) {
  return elementwise_unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& x) {
  return elementwise_unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Var log(const Var& x) {
  return elementwise_unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
  return elementwise_unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  MatrixMap(out.raw(), m, n).noalias() =
      ConstMatrixMap(a.value().raw(), m, k) * ConstMatrixMap(b.value().raw(), k, n);
  return record(std::move(out), tracks(a) || tracks(b), [an = a.node(), bn = b.node(), m, k, n](const Tensor& g, const Tensor&) {
    ConstMatrixMap gm(g.raw(), m, n);
    if (an->requires_grad) {
      MatrixMap(grad_buffer(*an).data(), m, k).noalias() += gm * ConstMatrixMap(bn->value.raw(), k, n).transpose();
    }
    if (bn->requires_grad) {
      MatrixMap(grad_buffer(*bn).data(), k, n).noalias() += ConstMatrixMap(an->value.raw(), m, k).transpose() * gm;
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  require_defined(x, "conv2d");
  require_defined(weight, "conv2d");
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[2] != ws[3]) throw ShapeError("conv2d: kernel must be square, got " + to_string(ws));
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels but weight expects " +
                     std::to_string(ws[1]) + " (weight shape " + to_string(ws) + ")");
  }
  if (bias.defined() && (bias.value().ndim() != 1 || bias.shape()[0] != ws[0])) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match " +
                     std::to_string(ws[0]) + " output channels");
  }
  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, padding};
  const Index span_h = xs[2] + 2 * padding - ws[2];
  const Index span_w = xs[3] + 2 * padding - ws[2];
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(ws[2]) + " larger than padded input " + to_string(xs));
  }
  geo.out_h = span_h / stride + 1;
  geo.out_w = span_w / stride + 1;

  const Index patch = geo.patch();
  const Index op = geo.out_pixels();
  Tensor out(Shape{geo.batch, geo.out_ch, geo.out_h, geo.out_w});
  ConstMatrixMap wm(weight.value().raw(), geo.out_ch, patch);
  RowMatrix cols(patch, op);
  for (Index b = 0; b < geo.batch; ++b) {
    const double* xb = x.value().raw() + b * geo.in_ch * geo.in_h * geo.in_w;
    MatrixMap ob(out.raw() + b * geo.out_ch * op, geo.out_ch, op);
    if (geo.pointwise()) {
      ob.noalias() = wm * ConstMatrixMap(xb, patch, op);
    } else {
      im2col(xb, geo, cols.data());
      ob.noalias() = wm * cols;
    }
    if (bias.defined()) ob.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().raw(), geo.out_ch);
  }

  const bool needs = tracks(x) || tracks(weight) || tracks(bias);
  std::shared_ptr<Node> bn = bias.defined() ? bias.node() : nullptr;
  return record(std::move(out), needs, [xn = x.node(), wn = weight.node(), bn, geo](const Tensor& g, const Tensor&) {
    const Index patch = geo.patch();
    const Index op = geo.out_pixels();
    const Index in_size = geo.in_ch * geo.in_h * geo.in_w;
    ConstMatrixMap wm(wn->value.raw(), geo.out_ch, patch);
    RowMatrix cols(patch, op);
    RowMatrix dcols(patch, op);
    for (Index b = 0; b < geo.batch; ++b) {
      ConstMatrixMap gb(g.raw() + b * geo.out_ch * op, geo.out_ch, op);
      const double* xb = xn->value.raw() + b * in_size;
      if (wn->requires_grad) {
        MatrixMap gw(grad_buffer(*wn).data(), geo.out_ch, patch);
        if (geo.pointwise()) {
          gw.noalias() += gb * ConstMatrixMap(xb, patch, op).transpose();
        } else {
          im2col(xb, geo, cols.data());
          gw.noalias() += gb * cols.transpose();
        }
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::VectorXd>(grad_buffer(*bn).data(), geo.out_ch) += gb.rowwise().sum();
      }
      if (xn->requires_grad) {
        double* gx = grad_buffer(*xn).data() + b * in_size;
        if (geo.pointwise()) {
          MatrixMap(gx, patch, op).noalias() += wm.transpose() * gb;
        } else {
          dcols.noalias() = wm.transpose() * gb;
          col2im_add(dcols.data(), geo, gx);
        }
      }
    }
  });
}

Var resize_nearest(const Var& x, Index out_h, Index out_w) {
  require_defined(x, "resize_nearest");
  require_rank(x, 4, "resize_nearest");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_nearest: non-positive output size");
  const Shape& s = x.shape();
  const Index planes = s[0] * s[1], in_h = s[2], in_w = s[3];
  if (in_h == out_h && in_w == out_w) return x;
  auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out_h * out_w));
  for (Index oh = 0; oh < out_h; ++oh) {
    for (Index ow = 0; ow < out_w; ++ow) {
      (*src)[static_cast<std::size_t>(oh * out_w + ow)] = (oh * in_h / out_h) * in_w + (ow * in_w / out_w);
    }
  }
  Tensor out(Shape{s[0], s[1], out_h, out_w});
  const Index in_plane = in_h * in_w, out_plane = out_h * out_w;
  for (Index p = 0; p < planes; ++p) {
    const double* xi = x.value().raw() + p * in_plane;
    double* oi = out.raw() + p * out_plane;
    for (Index i = 0; i < out_plane; ++i) oi[i] = xi[(*src)[static_cast<std::size_t>(i)]];
  }
  return record(std::move(out), tracks(x), [xn = x.node(), src, planes, in_plane, out_plane](const Tensor& g, const Tensor&) {
    Storage& gx = grad_buffer(*xn);
    for (Index p = 0; p < planes; ++p) {
      for (Index i = 0; i < out_plane; ++i) {
        gx[p * in_plane + (*src)[static_cast<std::size_t>(i)]] += g[p * out_plane + i];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return record(x.value().reshaped(std::move(shape)), tracks(x),
                [xn = x.node()](const Tensor& g, const Tensor&) { grad_buffer(*xn) += g.data(); });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
  require_defined(x, "sum");
  return record(Tensor::scalar(x.value().data().sum()), tracks(x),
                [xn = x.node()](const Tensor& g, const Tensor&) { grad_buffer(*xn) += g[0]; });
}

Var mean(const Var& x) {
  require_defined(x, "mean");
  const double n = static_cast<double>(x.size());
  return record(Tensor::scalar(x.value().data().sum() / n), tracks(x),
                [xn = x.node(), n](const Tensor& g, const Tensor&) { grad_buffer(*xn) += g[0] / n; });
}

Var sum(const Var& x, int axis, bool keepdim) {
  require_defined(x, "sum");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor out(reduced_shape(x.shape(), axis < 0 ? axis + x.value().ndim() : axis, keepdim));
  const double* xv = x.value().raw();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index k = 0; k < sp.extent; ++k) {
      const double* row = xv + (o * sp.extent + k) * sp.inner;
      double* dst = out.raw() + o * sp.inner;
      for (Index i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  return record(std::move(out), tracks(x), [xn = x.node(), sp](const Tensor& g, const Tensor&) {
    Storage& gx = grad_buffer(*xn);
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index k = 0; k < sp.extent; ++k) {
        for (Index i = 0; i < sp.inner; ++i) gx[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
      }
    }
  });
}

Var mean(const Var& x, int axis, bool keepdim) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(sp.extent));
}

Var max_over_axis(const Var& x, int axis, bool keepdim) {
  require_defined(x, "max_over_axis");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor out(reduced_shape(x.shape(), axis < 0 ? axis + x.value().ndim() : axis, keepdim));
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(sp.outer * sp.inner));
  const double* xv = x.value().raw();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      Index best = o * sp.extent * sp.inner + i;
      for (Index k = 1; k < sp.extent; ++k) {
        const Index at = (o * sp.extent + k) * sp.inner + i;
        if (xv[at] > xv[best] || std::isnan(xv[at])) best = at;
      }
      (*argmax)[static_cast<std::size_t>(o * sp.inner + i)] = best;
      out[o * sp.inner + i] = xv[best];
    }
  }
  return record(std::move(out), tracks(x), [xn = x.node(), argmax](const Tensor& g, const Tensor&) {
    Storage& gx = grad_buffer(*xn);
    for (Index j = 0; j < g.size(); ++j) gx[(*argmax)[static_cast<std::size_t>(j)]] += g[j];
  });
}

Var log_softmax(const Var& x, int axis) {
  require_defined(x, "log_softmax");
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (sp.extent < 2) throw ShapeError("log_softmax: need at least 2 classes along the axis, got " + to_string(x.shape()));
  Tensor out(x.shape());
  const double* xv = x.value().raw();
  for (Index o = 0; o < sp.outer; ++o) {
    const Index base = o * sp.extent * sp.inner;
    for (Index i = 0; i < sp.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < sp.extent; ++k) mx = std::max(mx, xv[base + k * sp.inner + i]);
      double acc = 0.0;
      for (Index k = 0; k < sp.extent; ++k) acc += std::exp(xv[base + k * sp.inner + i] - mx);
      const double lse = mx + std::log(acc);
      for (Index k = 0; k < sp.extent; ++k) out[base + k * sp.inner + i] = xv[base + k * sp.inner + i] - lse;
    }
  }
  return record(std::move(out), tracks(x), [xn = x.node(), sp](const Tensor& g, const Tensor& out) {
    Storage& gx = grad_buffer(*xn);
    for (Index o = 0; o < sp.outer; ++o) {
      const Index base = o * sp.extent * sp.inner;
      for (Index i = 0; i < sp.inner; ++i) {
        double gsum = 0.0;
        for (Index k = 0; k < sp.extent; ++k) gsum += g[base + k * sp.inner + i];
        for (Index k = 0; k < sp.extent; ++k) {
          const Index at = base + k * sp.inner + i;
          gx[at] += g[at] - std::exp(out[at]) * gsum;
        }
      }
    }
  });
}

Var gather_class_channel(const Var& x, const LabelMap& labels) {
  require_defined(x, "gather_class_channel");
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("gather_class_channel: input needs a class axis, got " + to_string(xs));
  Shape expected{xs[0]};
  expected.insert(expected.end(), xs.begin() + 2, xs.end());
  if (labels.shape() != expected) {
    throw ShapeError("gather_class_channel: labels shape " + to_string(labels.shape()) + " does not match logits " +
                     to_string(xs) + " (expected " + to_string(expected) + ")");
  }
  const Index classes = xs[1];
  const Index inner = numel(expected) / xs[0];
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(labels.size()));
  Tensor out(expected);
  for (Index b = 0; b < xs[0]; ++b) {
    for (Index i = 0; i < inner; ++i) {
      const Index y = labels[b * inner + i];
      if (y < 0 || y >= classes) {
        throw std::out_of_range("gather_class_channel: label " + std::to_string(y) + " outside [0, " +
                                std::to_string(classes) + ") at batch " + std::to_string(b) + ", flat pixel " +
                                std::to_string(i));
      }
      const Index at = (b * classes + y) * inner + i;
      (*index)[static_cast<std::size_t>(b * inner + i)] = at;
      out[b * inner + i] = x.value()[at];
    }
  }
  return record(std::move(out), tracks(x), [xn = x.node(), index](const Tensor& g, const Tensor&) {
    Storage& gx = grad_buffer(*xn);
    for (Index j = 0; j < g.size(); ++j) gx[(*index)[static_cast<std::size_t>(j)]] += g[j];
  });
}

Var normalize_rows(const Var& x, double eps) {
  require_defined(x, "normalize_rows");
  require_rank(x, 2, "normalize_rows");
  const Index n = x.shape()[0], d = x.shape()[1];
  Tensor out(x.shape());
  auto norms = std::make_shared<Eigen::VectorXd>(n);
  ConstMatrixMap xm(x.value().raw(), n, d);
  MatrixMap om(out.raw(), n, d);
  for (Index r = 0; r < n; ++r) {
    (*norms)[r] = xm.row(r).norm();
    om.row(r) = xm.row(r) / std::max((*norms)[r], eps);
  }
  return record(std::move(out), tracks(x), [xn = x.node(), norms, n, d, eps](const Tensor& g, const Tensor& out) {
    MatrixMap gx(grad_buffer(*xn).data(), n, d);
    ConstMatrixMap gm(g.raw(), n, d);
    ConstMatrixMap ym(out.raw(), n, d);
    for (Index r = 0; r < n; ++r) {
      const double norm = (*norms)[r];
      if (norm > eps) {
        gx.row(r) += (gm.row(r) - ym.row(r) * ym.row(r).dot(gm.row(r))) / norm;
      } else {
        gx.row(r) += gm.row(r) / eps;
      }
    }
  });
}

Var row_norms(const Var& x) {
  require_defined(x, "row_norms");
  require_rank(x, 2, "row_norms");
  const Index n = x.shape()[0], d = x.shape()[1];
  Tensor out(Shape{n});
  ConstMatrixMap xm(x.value().raw(), n, d);
  for (Index r = 0; r < n; ++r) out[r] = xm.row(r).norm();
  return record(std::move(out), tracks(x), [xn = x.node(), n, d](const Tensor& g, const Tensor& out) {
    MatrixMap gx(grad_buffer(*xn).data(), n, d);
    ConstMatrixMap xm(xn->value.raw(), n, d);
    for (Index r = 0; r < n; ++r) {
      const double norm = out[r];
      if (norm > 0.0) gx.row(r) += g[r] / norm * xm.row(r);
    }
  });
}

Var detach(const Var& x) {
  require_defined(x, "detach");
  return constant(x.value());
}

}  // namespace rdd::ad
