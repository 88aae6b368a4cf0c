// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter storage, forward-pass context and the conv / conv-bn-relu layer
// shared by every network module.

#ifndef MLFF_NN_HPP
#define MLFF_NN_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlff/ops.hpp"
#include "mlff/tensor.hpp"

namespace mlff {

/// Seeded generator with platform-independent uniform and normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi_inclusive);
  double normal();

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

enum class Norm { batch, none };
enum class Mode { train, eval };

struct ParamEntry {
  std::string name;
  Shape shape;
  std::vector<Scalar> value;
  bool trainable = true;
};

/// Named parameters and non-trainable buffers (batch-norm running statistics)
/// in declaration order.
class ParamStore {
 public:
  ParamEntry& add(std::string name, Shape shape, std::vector<Scalar> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamEntry& get(const std::string& name);
  const ParamEntry& get(const std::string& name) const;

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  /// Number of trainable scalars.
  std::size_t trainable_count() const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// State of one forward pass: the tape, the mode and the leaf tensor bound to
/// each parameter name.
class ForwardContext {
 public:
  /// With track_gradients = false parameters are bound as constants and no
  /// backward rules are recorded.
  ForwardContext(ParamStore& store, Mode mode, bool update_running_stats = true,
                 bool track_gradients = true);

  Tape& tape() { return tape_; }
  Mode mode() const { return mode_; }
  ParamStore& store() { return store_; }

  Tensor param(const std::string& name);
  std::optional<ops::RunningStats> running(const std::string& prefix);
  ops::BatchNormOptions bn_options() const;

  const std::unordered_map<std::string, Tensor>& bound() const { return bound_; }

 private:
  ParamStore& store_;
  Mode mode_;
  bool update_running_stats_;
  bool track_gradients_;
  Tape tape_;
  std::unordered_map<std::string, Tensor> bound_;
};

struct ConvParams {
  Tensor weight;
  Tensor bias;  // may be undefined
  ops::ConvGeometry geo;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  std::optional<ops::RunningStats> running;
  ops::BatchNormOptions options;
};

struct ConvBnParams {
  Tensor weight;
  Tensor bias;  // used when bn is absent
  std::optional<BatchNormParams> bn;
  ops::ConvGeometry geo;
};

Tensor conv(const Tensor& x, const ConvParams& p);

/// conv -> per-channel normalization -> relu.
Tensor conv_bn_relu(const Tensor& x, const ConvBnParams& p);

/// Same-size geometry for a kh x kw kernel.
ops::ConvGeometry same_geometry(int kh, int kw, int dilation = 1);

// Declaration helpers: parameters named "<name>.weight", "<name>.bias",
// "<name>.bn.gamma", ... Weights are zero-mean normal with standard deviation
// gain / sqrt(fan_in).
void declare_conv(ParamStore& store, Rng& rng, const std::string& name, int in, int out, int kh,
                  int kw, bool bias, double gain);
void declare_conv_bn(ParamStore& store, Rng& rng, const std::string& name, int in, int out, int kh,
                     int kw, Norm norm);

ConvParams bind_conv(ForwardContext& ctx, const std::string& name, ops::ConvGeometry geo);
ConvBnParams bind_conv_bn(ForwardContext& ctx, const std::string& name, ops::ConvGeometry geo,
                          Norm norm);

}  // namespace mlff

#endif  // MLFF_NN_HPP
