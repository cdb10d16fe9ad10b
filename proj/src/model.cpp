#include "rdd/model.hpp"

#include "rdd/random.hpp"

#include <cmath>
#include <stdexcept>

namespace rdd {

void ModelSpec::validate() const {
  if (stages.size() < 2) {
    throw std::invalid_argument("model spec needs at least 2 stages, got " + std::to_string(stages.size()));
  }
  if (num_classes < 2) throw std::invalid_argument("model spec needs num_classes >= 2");
  if (input_channels < 1) throw std::invalid_argument("model spec needs input_channels >= 1");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.channels < 1 || s.convs < 1 || s.stride < 1) {
      throw std::invalid_argument("stage " + std::to_string(i) +
                                  ": channels, convs and stride must all be >= 1");
    }
  }
}

Index ModelSpec::downsampling() const {
  Index f = 1;
  for (const auto& s : stages) f *= s.stride;
  return f;
}

ModelSpec ModelSpec::default_teacher(int num_classes) {
  return ModelSpec{{{16, 2, 1}, {32, 2, 2}, {64, 2, 2}, {64, 2, 1}}, num_classes, true, 3};
}

ModelSpec ModelSpec::default_student(int num_classes) {
  return ModelSpec{{{8, 1, 1}, {16, 1, 2}, {16, 1, 2}}, num_classes, false, 3};
}

// ---------------------------------------------------------------------------

Params::Params(ModelSpec spec) : spec_(std::move(spec)) {}

void Params::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), ad::parameter(std::move(init))});
}

bool Params::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const ad::Var& Params::at(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].var;
}

ad::Var& Params::at(std::string_view name) {
  return const_cast<ad::Var&>(std::as_const(*this).at(name));
}

Index Params::count() const {
  Index n = 0;
  for (const auto& p : entries_) n += p.var.size();
  return n;
}

void Params::set_trainable(bool trainable) {
  for (auto& p : entries_) p.var.set_requires_grad(trainable);
}

Params Params::clone() const {
  Params out(spec_);
  for (const auto& p : entries_) {
    out.add(p.name, p.var.value());
    out.at(p.name).set_requires_grad(p.var.requires_grad());
  }
  return out;
}

bool operator==(const Params& a, const Params& b) {
  if (!(a.spec_ == b.spec_) || a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name) return false;
    if (!(a.entries_[i].var.value() == b.entries_[i].var.value())) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

std::string conv_name(std::size_t stage, int conv) {
  return "stage" + std::to_string(stage) + ".conv" + std::to_string(conv);
}

Tensor he_normal(Rng& rng, Index out_ch, Index in_ch, Index kernel) {
  Tensor w(Shape{out_ch, in_ch, kernel, kernel});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * kernel * kernel));
  for (Index i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
  return w;
}

ad::Var classify(const Params& params, const std::string& head, const ad::Var& features, Index h, Index w) {
  const ad::Var logits = ad::conv2d(features, params.at(head + ".weight"), params.at(head + ".bias"), 1, 0);
  return ad::resize_nearest(logits, h, w);
}

}  // namespace

Params build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  Params params(spec);
  Index in_ch = spec.input_channels;
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const StageSpec& st = spec.stages[s];
    for (int c = 0; c < st.convs; ++c) {
      params.add(conv_name(s, c) + ".weight", he_normal(rng, st.channels, in_ch, 3));
      params.add(conv_name(s, c) + ".bias", Tensor(Shape{st.channels}, 0.0));
      in_ch = st.channels;
    }
  }
  const int C = spec.num_classes;
  params.add("head.weight", he_normal(rng, C, spec.stages.back().channels, 1));
  params.add("head.bias", Tensor(Shape{C}, 0.0));
  if (spec.has_aux_head) {
    params.add("aux_head.weight", he_normal(rng, C, spec.stages[spec.stages.size() - 2].channels, 1));
    params.add("aux_head.bias", Tensor(Shape{C}, 0.0));
  }
  return params;
}

LogitPair forward(const Params& params, const ad::Var& images, bool want_aux,
                  std::vector<ad::Var>* stage_features) {
  const ModelSpec& spec = params.spec();
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != spec.input_channels) {
    throw ShapeError("forward: expected images [B, " + std::to_string(spec.input_channels) + ", H, W], got " +
                     to_string(s));
  }
  const Index factor = spec.downsampling();
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ShapeError("forward: image size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                     " is not divisible by the network downsampling factor " + std::to_string(factor));
  }
  if (stage_features) stage_features->clear();

  ad::Var x = images;
  ad::Var penultimate;
  for (std::size_t st = 0; st < spec.stages.size(); ++st) {
    for (int c = 0; c < spec.stages[st].convs; ++c) {
      const std::string name = conv_name(st, c);
      const int stride = c == 0 ? spec.stages[st].stride : 1;
      x = ad::relu(ad::conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"), stride, 1));
    }
    if (stage_features) stage_features->push_back(x);
    if (st + 2 == spec.stages.size()) penultimate = x;
  }

  LogitPair out;
  out.primary = classify(params, "head", x, s[2], s[3]);
  if (want_aux && spec.has_aux_head) out.auxiliary = classify(params, "aux_head", penultimate, s[2], s[3]);
  return out;
}

// ---------------------------------------------------------------------------

void Sgd::step(Params& params, double lr) {
  for (auto& p : params) {
    if (!p.var.has_grad()) throw std::runtime_error("sgd step: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : params) {
    Tensor& w = p.var.leaf_value();
    auto [it, inserted] = velocity_.try_emplace(p.name, w.shape(), 0.0);
    Tensor& v = it->second;
    v.data() = momentum_ * v.data() + p.var.grad().data() + weight_decay_ * w.data();
    w.data() -= lr * v.data();
    p.var.zero_grad();
  }
}

double poly_lr(Index iter, Index total_iters, double base_lr, double power) {
  if (total_iters <= 0) throw std::invalid_argument("poly_lr: total_iters must be positive");
  if (iter < 0 || iter > total_iters) {
    throw std::out_of_range("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                            std::to_string(total_iters) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total_iters), power);
}

}  // namespace rdd
