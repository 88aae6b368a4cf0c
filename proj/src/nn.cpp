// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/nn.hpp"

#include <cmath>
#include <numbers>

namespace mlff {

int Rng::uniform_int(int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ParamEntry& ParamStore::add(std::string name, Shape shape, std::vector<Scalar> value,
                            bool trainable) {
  if (contains(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  if (value.size() != shape.numel()) {
    throw ContractError("parameter '" + name + "' has " + std::to_string(value.size()) +
                        " values for shape " + shape.str());
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), shape, std::move(value), trainable});
  return entries_.back();
}

ParamEntry& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

const ParamEntry& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) {
      n += e.value.size();
    }
  }
  return n;
}

ForwardContext::ForwardContext(ParamStore& store, Mode mode, bool update_running_stats,
                               bool track_gradients)
    : store_(store),
      mode_(mode),
      update_running_stats_(update_running_stats),
      track_gradients_(track_gradients) {}

Tensor ForwardContext::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) {
    return it->second;
  }
  const ParamEntry& e = store_.get(name);
  Tensor value(e.shape, e.value);
  Tensor t = track_gradients_ && e.trainable ? tape_.leaf(value) : value;
  bound_.emplace(name, t);
  return t;
}

std::optional<ops::RunningStats> ForwardContext::running(const std::string& prefix) {
  ParamEntry& mean = store_.get(prefix + ".running_mean");
  ParamEntry& var = store_.get(prefix + ".running_var");
  return ops::RunningStats{mean.value, var.value};
}

ops::BatchNormOptions ForwardContext::bn_options() const {
  ops::BatchNormOptions opt;
  opt.training = mode_ == Mode::train;
  opt.update_running = update_running_stats_;
  return opt;
}

Tensor conv(const Tensor& x, const ConvParams& p) {
  return ops::conv2d(x, p.weight, p.bias.defined() ? &p.bias : nullptr, p.geo);
}

Tensor conv_bn_relu(const Tensor& x, const ConvBnParams& p) {
  Tensor y = ops::conv2d(x, p.weight, p.bias.defined() ? &p.bias : nullptr, p.geo);
  if (p.bn) {
    y = ops::batch_norm(y, p.bn->gamma, p.bn->beta, p.bn->running, p.bn->options);
  }
  return ops::relu(y);
}

ops::ConvGeometry same_geometry(int kh, int kw, int dilation) {
  return {1, 1, dilation * (kh - 1) / 2, dilation * (kw - 1) / 2, dilation, dilation};
}

void declare_conv(ParamStore& store, Rng& rng, const std::string& name, int in, int out, int kh,
                  int kw, bool bias, double gain) {
  const Shape ws{out, in, kh, kw};
  const double stddev = gain / std::sqrt(static_cast<double>(in) * kh * kw);
  std::vector<Scalar> w(ws.numel());
  for (Scalar& v : w) {
    v = static_cast<Scalar>(stddev * rng.normal());
  }
  store.add(name + ".weight", ws, std::move(w));
  if (bias) {
    store.add(name + ".bias", Shape{1, out, 1, 1}, std::vector<Scalar>(out, Scalar(0)));
  }
}

void declare_conv_bn(ParamStore& store, Rng& rng, const std::string& name, int in, int out, int kh,
                     int kw, Norm norm) {
  declare_conv(store, rng, name, in, out, kh, kw, norm == Norm::none, std::sqrt(2.0));
  if (norm == Norm::batch) {
    const Shape cs{1, out, 1, 1};
    store.add(name + ".bn.gamma", cs, std::vector<Scalar>(out, Scalar(1)));
    store.add(name + ".bn.beta", cs, std::vector<Scalar>(out, Scalar(0)));
    store.add(name + ".bn.running_mean", cs, std::vector<Scalar>(out, Scalar(0)), false);
    store.add(name + ".bn.running_var", cs, std::vector<Scalar>(out, Scalar(1)), false);
  }
}

ConvParams bind_conv(ForwardContext& ctx, const std::string& name, ops::ConvGeometry geo) {
  ConvParams p;
  p.weight = ctx.param(name + ".weight");
  if (ctx.store().contains(name + ".bias")) {
    p.bias = ctx.param(name + ".bias");
  }
  p.geo = geo;
  return p;
}

ConvBnParams bind_conv_bn(ForwardContext& ctx, const std::string& name, ops::ConvGeometry geo,
                          Norm norm) {
  ConvBnParams p;
  p.weight = ctx.param(name + ".weight");
  p.geo = geo;
  if (norm == Norm::batch) {
    BatchNormParams bn;
    bn.gamma = ctx.param(name + ".bn.gamma");
    bn.beta = ctx.param(name + ".bn.beta");
    bn.running = ctx.running(name + ".bn");
    bn.options = ctx.bn_options();
    p.bn = bn;
  } else {
    p.bias = ctx.param(name + ".bias");
  }
  return p;
}

}  // namespace mlff
