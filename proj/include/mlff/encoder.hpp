// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Four-stage convolutional encoder producing the X1..X4 feature pyramid at
// strides 4, 8, 16 and 32.

#ifndef MLFF_ENCODER_HPP
#define MLFF_ENCODER_HPP

#include <array>
#include <string>
#include <vector>

#include "mlff/nn.hpp"

namespace mlff {

struct EncoderConfig {
  std::array<int, 4> channels{8, 16, 24, 32};
  int blocks_per_stage = 1;
  Norm norm = Norm::batch;

  /// Throws ConfigError unless c1 >= 2, widths are non-decreasing and
  /// blocks_per_stage >= 1.
  void validate() const;
};

struct FeaturePyramid {
  static constexpr std::array<int, 4> kStrides{4, 8, 16, 32};

  Tensor x1;
  Tensor x2;
  Tensor x3;
  Tensor x4;

  const Tensor& level(int i) const;
};

struct EncoderParams {
  /// Blocks of each stage; the first block of every stage has stride 2 and
  /// stage 1 opens with two of them.
  std::array<std::vector<ConvBnParams>, 4> stages;
};

void declare_encoder(ParamStore& store, Rng& rng, const EncoderConfig& cfg,
                     const std::string& prefix = "encoder");
EncoderParams bind_encoder(ForwardContext& ctx, const EncoderConfig& cfg,
                           const std::string& prefix = "encoder");

/// Throws ContractError when H or W is not a multiple of 32, the input does
/// not have 3 channels, or pixel values leave [0, 1].
void check_encoder_input(const Shape& image);

FeaturePyramid encode(const Tensor& image, const EncoderParams& params);

}  // namespace mlff

#endif  // MLFF_ENCODER_HPP
