#include "support.hpp"

#include "rdd/model.hpp"
#include "rdd/rdd.hpp"

#include <algorithm>

namespace rdd::support {

using ad::Var;

Tensor random_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

LabelMap random_labels(Rng& rng, const Shape& shape, int num_classes) {
  LabelMap l(shape);
  for (Index i = 0; i < l.size(); ++i) l[i] = static_cast<std::int32_t>(rng.integer(0, num_classes - 1));
  return l;
}

namespace {

using Leaves = std::vector<Tensor>;
using Made = std::pair<Leaves, ad::ScalarFunction>;

// Contracts an op's output with fixed random weights, so every output
// element reaches the scalar with a distinct coefficient.
Var contract(const Var& y, const Tensor& weights) { return ad::sum(ad::mul(y, ad::constant(weights))); }

GradCase unary(std::string name, Shape shape, double lo, double hi, std::function<Var(const Var&)> op) {
  return {std::move(name), [=](Rng& rng) -> Made {
            Tensor x = random_tensor(rng, shape, lo, hi);
            Var probe = op(ad::constant(x));
            Tensor w = random_tensor(rng, probe.shape());
            return {{x}, [=](std::span<const Var> v) { return contract(op(v[0]), w); }};
          }};
}

GradCase binary(std::string name, Shape a, Shape b, double blo, double bhi,
                std::function<Var(const Var&, const Var&)> op) {
  return {std::move(name), [=](Rng& rng) -> Made {
            Tensor x = random_tensor(rng, a);
            Tensor y = random_tensor(rng, b, blo, bhi);
            Var probe = op(ad::constant(x), ad::constant(y));
            Tensor w = random_tensor(rng, probe.shape());
            return {{x, y}, [=](std::span<const Var> v) { return contract(op(v[0], v[1]), w); }};
          }};
}

GradCase conv_case(std::string name, Shape x_shape, Shape w_shape, bool bias, int stride, int padding) {
  return {std::move(name), [=](Rng& rng) -> Made {
            Leaves leaves{random_tensor(rng, x_shape), random_tensor(rng, w_shape)};
            if (bias) leaves.push_back(random_tensor(rng, {w_shape[0]}));
            auto op = [=](std::span<const Var> v) {
              return ad::conv2d(v[0], v[1], bias ? v[2] : Var(), stride, padding);
            };
            std::vector<Var> probe_in;
            for (const Tensor& t : leaves) probe_in.push_back(ad::constant(t));
            Tensor w = random_tensor(rng, op(probe_in).shape());
            return {leaves, [=](std::span<const Var> v) { return contract(op(v), w); }};
          }};
}

Tensor random_tfe(Rng& rng, const Shape& shape) { return random_tensor(rng, shape, 0.05, 1.0); }

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.stages = {{2, 1, 1}, {3, 1, 2}, {3, 1, 1}};
  spec.num_classes = 3;
  spec.has_aux_head = true;
  spec.input_channels = 2;
  return spec;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> c;
  c.push_back(binary("add_broadcast", {3, 4}, {4}, -2, 2, [](const Var& a, const Var& b) { return a + b; }));
  c.push_back(binary("sub_broadcast", {2, 3, 1}, {3, 4}, -2, 2, [](const Var& a, const Var& b) { return a - b; }));
  c.push_back(binary("mul_broadcast", {2, 1, 4}, {3, 1}, -2, 2, [](const Var& a, const Var& b) { return a * b; }));
  c.push_back(binary("div", {3, 4}, {3, 4}, 0.5, 2, [](const Var& a, const Var& b) { return a / b; }));
  c.push_back(unary("scale", {3, 5}, -2, 2, [](const Var& x) { return ad::scale(x, -1.7); }));
  c.push_back(unary("add_scalar", {3, 5}, -2, 2, [](const Var& x) { return ad::add_scalar(x, 0.3); }));
  c.push_back(unary("relu", {4, 5}, -2, 2, [](const Var& x) { return ad::relu(x); }));
  c.push_back(unary("exp", {4, 5}, -2, 2, [](const Var& x) { return ad::exp(x); }));
  c.push_back(unary("log", {4, 5}, 0.1, 2, [](const Var& x) { return ad::log(x); }));
  c.push_back(unary("sqrt", {4, 5}, 0.1, 2, [](const Var& x) { return ad::sqrt(x); }));
  c.push_back(binary("matmul", {3, 4}, {4, 2}, -2, 2, [](const Var& a, const Var& b) { return ad::matmul(a, b); }));
  c.push_back(conv_case("conv2d_3x3_s1_p1_bias", {2, 2, 5, 5}, {3, 2, 3, 3}, true, 1, 1));
  c.push_back(conv_case("conv2d_3x3_s2_p1", {1, 2, 6, 6}, {2, 2, 3, 3}, false, 2, 1));
  c.push_back(conv_case("conv2d_3x3_s2_p0_bias", {2, 1, 7, 7}, {2, 1, 3, 3}, true, 2, 0));
  c.push_back(conv_case("conv2d_1x1_bias", {2, 3, 4, 4}, {2, 3, 1, 1}, true, 1, 0));
  c.push_back(unary("resize_nearest_up", {2, 2, 3, 3}, -2, 2, [](const Var& x) { return ad::resize_nearest(x, 6, 9); }));
  c.push_back(unary("resize_nearest_down", {1, 2, 6, 6}, -2, 2, [](const Var& x) { return ad::resize_nearest(x, 3, 2); }));
  c.push_back(unary("reshape", {2, 3, 4}, -2, 2, [](const Var& x) { return ad::reshape(x, {6, 4}); }));
  c.push_back(unary("sum_all", {3, 4}, -2, 2, [](const Var& x) { return ad::sum(x); }));
  c.push_back(unary("sum_axis", {2, 3, 4}, -2, 2, [](const Var& x) { return ad::sum(x, 1); }));
  c.push_back(unary("mean_all", {3, 4}, -2, 2, [](const Var& x) { return ad::mean(x); }));
  c.push_back(unary("mean_axis_keepdim", {2, 3, 4}, -2, 2, [](const Var& x) { return ad::mean(x, -1, true); }));
  c.push_back(unary("max_over_axis", {2, 5, 3}, -2, 2, [](const Var& x) { return ad::max_over_axis(x, 1); }));
  c.push_back(unary("log_softmax", {2, 4, 3, 3}, -2, 2, [](const Var& x) { return ad::log_softmax(x, 1); }));
  c.push_back({"gather_class_channel", [](Rng& rng) -> Made {
                 Tensor x = random_tensor(rng, {2, 4, 3, 3});
                 LabelMap labels = random_labels(rng, {2, 3, 3}, 4);
                 Tensor w = random_tensor(rng, {2, 3, 3});
                 return {{x}, [=](std::span<const Var> v) { return contract(ad::gather_class_channel(v[0], labels), w); }};
               }});
  c.push_back(unary("normalize_rows", {3, 5}, -2, 2, [](const Var& x) { return ad::normalize_rows(x); }));
  c.push_back(unary("row_norms", {3, 5}, -2, 2, [](const Var& x) { return ad::row_norms(x); }));

  c.push_back({"cross_entropy", [](Rng& rng) -> Made {
                 Tensor x = random_tensor(rng, {2, 4, 4, 4});
                 LabelMap labels = random_labels(rng, {2, 4, 4}, 4);
                 return {{x}, [=](std::span<const Var> v) { return cross_entropy(v[0], labels); }};
               }});
  for (LossNormalization n : {LossNormalization::Pixels, LossNormalization::Weights}) {
    c.push_back({"weighted_task_loss_" + std::string(to_string(n)), [n](Rng& rng) -> Made {
                   Tensor x = random_tensor(rng, {2, 4, 4, 4});
                   LabelMap labels = random_labels(rng, {2, 4, 4}, 4);
                   DifficultyMap rd{random_tfe(rng, {2, 4, 4}), DifficultyKind::TFE};
                   return {{x}, [=](std::span<const Var> v) { return weighted_task_loss(v[0], labels, rd, n); }};
                 }});
  }
  for (double T : {1.0, 2.0}) {
    c.push_back({"pixelwise_kd_T" + std::to_string(static_cast<int>(T)), [T](Rng& rng) -> Made {
                   Tensor s = random_tensor(rng, {2, 5, 3, 3});
                   Tensor t = random_tensor(rng, {2, 5, 3, 3});
                   return {{s}, [=](std::span<const Var> v) { return pixelwise_kd_loss(v[0], t, T); }};
                 }});
  }
  c.push_back({"at_hook", [](Rng& rng) -> Made {
                 Tensor s0 = random_tensor(rng, {2, 3, 4, 4});
                 Tensor s1 = random_tensor(rng, {2, 2, 2, 2});
                 std::vector<Tensor> teacher{random_tensor(rng, {2, 5, 4, 4}), random_tensor(rng, {2, 4, 4, 4})};
                 return {{s0, s1}, [=](std::span<const Var> v) {
                           const std::vector<Var> student{v[0], v[1]};
                           const std::vector<double> betas{3.0, 7.0};
                           return at_hook(student, teacher, betas);
                         }};
               }});
  for (Index iter : {Index{1}, Index{10}}) {
    c.push_back({iter == 1 ? "rdd_total_loss_tfe" : "rdd_total_loss_tse", [iter](Rng& rng) -> Made {
                   Tensor s = random_tensor(rng, {2, 3, 4, 4}, -3, 3);
                   Tensor tp = random_tensor(rng, {2, 3, 4, 4}, -3, 3);
                   Tensor ta = random_tensor(rng, {2, 3, 4, 4}, -3, 3);
                   LabelMap labels = random_labels(rng, {2, 4, 4}, 3);
                   DistillConfig cfg;
                   cfg.total_iters = 10;
                   cfg.t = 0.6;
                   return {{s}, [=](std::span<const Var> v) {
                             const LogitPair student{v[0], std::nullopt};
                             const LogitPair teacher{ad::constant(tp), ad::constant(ta)};
                             return rdd_total_loss(iter, cfg, student, teacher, labels).total;
                           }};
                 }});
  }
  c.push_back({"three_stage_network", [](Rng& rng) -> Made {
                 const ModelSpec spec = tiny_spec();
                 const Params init = build(spec, rng.bits());
                 Leaves leaves;
                 std::vector<std::string> names;
                 for (const auto& p : init) {
                   names.push_back(p.name);
                   // Non-zero biases so that no relu sits exactly at its kink.
                   Tensor v = p.var.value();
                   for (Index i = 0; i < v.size(); ++i) v[i] += rng.uniform(-0.3, 0.3);
                   leaves.push_back(v);
                 }
                 Tensor images = random_tensor(rng, {2, 2, 4, 4}, 0, 1);
                 LabelMap labels = random_labels(rng, {2, 4, 4}, 3);
                 return {leaves, [=](std::span<const Var> v) {
                           Params params = init.clone();
                           for (std::size_t i = 0; i < names.size(); ++i) params.at(names[i]) = v[i];
                           const LogitPair out = forward(params, ad::constant(images), true);
                           return ad::add(cross_entropy(out.primary, labels),
                                          ad::scale(cross_entropy(*out.auxiliary, labels), 0.4));
                         }};
               }});
  return c;
}

std::vector<GradCaseResult> run_gradient_suite(int instances, std::uint64_t seed) {
  std::vector<GradCaseResult> out;
  for (const GradCase& gc : gradient_cases()) {
    GradCaseResult r{gc.name};
    Rng rng(derive_seed({seed, std::hash<std::string>{}(gc.name)}));
    for (int i = 0; i < instances; ++i) {
      auto [leaves, f] = gc.make(rng);
      const ad::GradCheckReport rep = ad::grad_check(f, leaves, 1e-5, 1e-4);
      ++r.instances;
      if (!rep.passed) ++r.failures;
      r.worst_error = std::max(r.worst_error, rep.max_error);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace rdd::support
