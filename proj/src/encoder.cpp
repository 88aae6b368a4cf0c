// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/encoder.hpp"

namespace mlff {

namespace {

std::string block_name(const std::string& prefix, int stage, int block) {
  return prefix + ".s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
}

int strided_blocks(int stage) { return stage == 0 ? 2 : 1; }

}  // namespace

void EncoderConfig::validate() const {
  if (channels[0] < 2) {
    throw ConfigError("encoder: c1 must be >= 2, got " + std::to_string(channels[0]));
  }
  for (int i = 1; i < 4; ++i) {
    if (channels[i] < channels[i - 1]) {
      throw ConfigError("encoder: channel widths must be non-decreasing");
    }
  }
  if (blocks_per_stage < 1) {
    throw ConfigError("encoder: blocks_per_stage must be >= 1");
  }
}

const Tensor& FeaturePyramid::level(int i) const {
  switch (i) {
    case 1: return x1;
    case 2: return x2;
    case 3: return x3;
    case 4: return x4;
    default: break;
  }
  throw ContractError("pyramid level must be 1..4, got " + std::to_string(i));
}

void declare_encoder(ParamStore& store, Rng& rng, const EncoderConfig& cfg,
                     const std::string& prefix) {
  cfg.validate();
  int in = 3;
  for (int s = 0; s < 4; ++s) {
    const int out = cfg.channels[s];
    const int blocks = strided_blocks(s) + cfg.blocks_per_stage - 1;
    for (int b = 0; b < blocks; ++b) {
      declare_conv_bn(store, rng, block_name(prefix, s, b), in, out, 3, 3, cfg.norm);
      in = out;
    }
  }
}

EncoderParams bind_encoder(ForwardContext& ctx, const EncoderConfig& cfg,
                           const std::string& prefix) {
  EncoderParams p;
  for (int s = 0; s < 4; ++s) {
    const int blocks = strided_blocks(s) + cfg.blocks_per_stage - 1;
    for (int b = 0; b < blocks; ++b) {
      const int stride = b < strided_blocks(s) ? 2 : 1;
      p.stages[s].push_back(bind_conv_bn(ctx, block_name(prefix, s, b),
                                         ops::ConvGeometry::uniform(stride, 1, 1), cfg.norm));
    }
  }
  return p;
}

void check_encoder_input(const Shape& image) {
  if (image.c != 3) {
    throw ContractError("encode: expected an RGB image [n,3,H,W], got " + image.str());
  }
  if (image.h % 32 != 0 || image.w % 32 != 0) {
    throw ContractError("encode: input extents must be multiples of 32, got " +
                        std::to_string(image.h) + "x" + std::to_string(image.w));
  }
}

FeaturePyramid encode(const Tensor& image, const EncoderParams& params) {
  check_encoder_input(image.shape());
  for (const Scalar v : image.data()) {
    if (!(v >= 0 && v <= 1)) {
      throw ContractError("encode: pixel values must lie in [0, 1]");
    }
  }
  std::array<Tensor, 4> levels;
  Tensor x = image;
  for (int s = 0; s < 4; ++s) {
    for (const ConvBnParams& block : params.stages[s]) {
      x = conv_bn_relu(x, block);
    }
    levels[s] = x;
  }
  return {levels[0], levels[1], levels[2], levels[3]};
}

}  // namespace mlff
