// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/model.hpp"

namespace mlff {

Variant parse_variant(std::string_view name) {
  for (const Variant v : kAllVariants) {
    if (variant_name(v) == name) {
      return v;
    }
  }
  throw ContractError("unknown variant '" + std::string(name) +
                      "' (expected bas, mam, mam_hfem or full)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::bas: return "bas";
    case Variant::mam: return "mam";
    case Variant::mam_hfem: return "mam_hfem";
    case Variant::full: return "full";
  }
  return "?";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::bas: return "Bas.";
    case Variant::mam: return "+MAM";
    case Variant::mam_hfem: return "+MAM+HFEM";
    case Variant::full: return "Ours";
  }
  return "?";
}

bool has_mam(Variant v) { return v != Variant::bas; }
bool has_hfem(Variant v) { return v == Variant::mam_hfem || v == Variant::full; }
bool has_gam(Variant v) { return v == Variant::full; }

void ModelConfig::validate(Variant v) const {
  encoder.validate();
  if (has_mam(v) && encoder.channels[0] % 4 != 0) {
    throw ConfigError("MAM needs c1 divisible by 4, got " + std::to_string(encoder.channels[0]));
  }
  if (hfem_width < 1 || attn_width < 1 || decoder_width < 1) {
    throw ConfigError("hfem, attention and decoder widths must be >= 1");
  }
}

Model::Model(Variant variant, ModelConfig config, std::uint64_t seed)
    : variant_(variant), config_(config) {
  config_.validate(variant_);
  Rng rng(seed);
  const auto& c = config_.encoder.channels;
  const Norm norm = config_.encoder.norm;
  declare_encoder(params_, rng, config_.encoder);
  if (has_mam(variant_)) {
    declare_mam(params_, rng, c[0], norm);
  }
  std::array<int, 4> t_channels = c;
  if (has_hfem(variant_)) {
    declare_hfem(params_, rng, {c[1], c[2], c[3]}, config_.hfem_width, norm);
    t_channels = {c[0], config_.hfem_width, config_.hfem_width, config_.hfem_width};
  }
  declare_decoder(params_, rng, t_channels, config_.decoder_width, config_.attn_width,
                  has_gam(variant_), variant_ == Variant::bas, norm);
}

PredictionSet Model::forward(ForwardContext& ctx, const Tensor& image, ForwardTrace* trace) const {
  check_encoder_input(image.shape());
  const Norm norm = config_.encoder.norm;
  const FeaturePyramid pyr = encode(image, bind_encoder(ctx, config_.encoder));

  FusedPyramid fused{pyr.x1, pyr.x2, pyr.x3, pyr.x4};
  if (has_mam(variant_)) {
    fused.t1 = mam_forward(pyr.x1, bind_mam(ctx, norm));
  }
  HfemOutput hfem;
  if (has_hfem(variant_)) {
    hfem = hfem_forward(pyr.x2, pyr.x3, pyr.x4, bind_hfem(ctx, norm));
    fused.t2 = hfem.t2;
    fused.t3 = hfem.t3;
    fused.t4 = hfem.t4;
  }
  const DecoderParams dec =
      bind_decoder(ctx, has_gam(variant_), variant_ == Variant::bas, norm);
  DecoderTrace dtrace;
  PredictionSet out = decode(fused, dec, image.shape().h, image.shape().w, &dtrace);
  if (trace != nullptr) {
    trace->pyramid = pyr;
    trace->fused = fused;
    trace->decoder = dtrace;
    trace->hfem = hfem;
  }
  return out;
}

Model build_model(Variant variant, const ModelConfig& config, std::uint64_t seed) {
  return Model(variant, config, seed);
}

Model build_model(std::string_view variant, const ModelConfig& config, std::uint64_t seed) {
  return Model(parse_variant(variant), config, seed);
}

}  // namespace mlff
