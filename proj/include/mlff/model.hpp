// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network assembly for the four ablation variants:
//   bas      encoder + skip-concat decoder, single head copied to P1..P3
//   mam      + MAM on X1
//   mam_hfem + HFEM on X2..X4
//   full     + GAM in every decoder stage

#ifndef MLFF_MODEL_HPP
#define MLFF_MODEL_HPP

#include <cstdint>
#include <string>
#include <string_view>

#include "mlff/encoder.hpp"
#include "mlff/fusion.hpp"

namespace mlff {

enum class Variant { bas, mam, mam_hfem, full };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::bas, Variant::mam, Variant::mam_hfem,
                                                     Variant::full};

/// Throws ContractError for unknown names.
Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
/// Row label of the ablation table.
std::string_view variant_label(Variant v);

bool has_mam(Variant v);
bool has_hfem(Variant v);
bool has_gam(Variant v);

struct ModelConfig {
  EncoderConfig encoder;
  int hfem_width = 16;
  int attn_width = 8;
  int decoder_width = 16;

  void validate(Variant v) const;
};

struct ForwardTrace {
  FeaturePyramid pyramid;
  FusedPyramid fused;
  DecoderTrace decoder;
  HfemOutput hfem;
};

class Model {
 public:
  Model(Variant variant, ModelConfig config, std::uint64_t seed);

  Variant variant() const { return variant_; }
  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Number of trainable scalars.
  std::size_t parameter_count() const { return params_.trainable_count(); }

  PredictionSet forward(ForwardContext& ctx, const Tensor& image,
                        ForwardTrace* trace = nullptr) const;

 private:
  Variant variant_;
  ModelConfig config_;
  ParamStore params_;
};

Model build_model(Variant variant, const ModelConfig& config, std::uint64_t seed);
Model build_model(std::string_view variant, const ModelConfig& config, std::uint64_t seed);

}  // namespace mlff

#endif  // MLFF_MODEL_HPP
