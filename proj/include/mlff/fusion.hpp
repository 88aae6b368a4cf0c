// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature fusion modules and the decoder:
//   MAM  - multi-scale attention on the shallow level X1 (output T1)
//   HFEM - deep-to-shallow aggregation of X2..X4 followed by channel and
//          spatial attention (outputs T2..T4)
//   GAM  - non-local attention whose keys and values come from the fusion of
//          a decoder feature with the same-level encoder feature
//   decode - U-Net style decoder emitting the prediction maps P1, P2, P3

#ifndef MLFF_FUSION_HPP
#define MLFF_FUSION_HPP

#include <array>
#include <optional>
#include <string>

#include "mlff/nn.hpp"

namespace mlff {

// ------------------------------------------------------------------- MAM

inline constexpr std::array<int, 4> kMamKernels{1, 3, 5, 7};

/// Dilation of the 3x3 conv closing the branch with kernel size k.
constexpr int mam_dilation(int k) { return (k + 1) / 2 > 1 ? (k + 1) / 2 : 1; }

struct MamBranch {
  ConvBnParams reduce;   // 1x1, c1 -> c1/4
  ConvBnParams tall;     // k x 1
  ConvBnParams wide;     // 1 x k
  ConvBnParams dilated;  // 3x3, dilation mam_dilation(k)
};

struct MamParams {
  std::array<MamBranch, 4> branches;
  ConvParams fuse;               // 1x1, c1 -> c1
  ConvParams spatial_attention;  // 1x1, c1 -> 1
};

struct MamTrace {
  Tensor fused;  // fuse(concat(branches))
  Tensor gate;   // sigmoid spatial gate [n,1,h,w]
};

void declare_mam(ParamStore& store, Rng& rng, int c1, Norm norm, const std::string& prefix = "mam");
MamParams bind_mam(ForwardContext& ctx, Norm norm, const std::string& prefix = "mam");

/// T1 = gate * (fuse(concat(branch_k(x1))) + x1), gate = sigmoid(1x1 conv).
Tensor mam_forward(const Tensor& x1, const MamParams& params, MamTrace* trace = nullptr);

// ------------------------------------------------------------------ HFEM

/// Squeeze-excite channel gate followed by a 1x1 spatial gate.
struct AttentionParams {
  ConvParams se_reduce;  // 1x1, c -> max(1, c/4), followed by relu
  ConvParams se_expand;  // 1x1, back to c, followed by sigmoid
  ConvParams spatial;    // 1x1, c -> 1, followed by sigmoid
};

struct HfemParams {
  ConvParams align2;
  ConvParams align3;
  ConvParams align4;
  ConvBnParams aggregate3;  // 3x3 over concat(align3(x3), up(A4))
  ConvBnParams aggregate2;  // 3x3 over concat(align2(x2), up(X3'))
  AttentionParams attend2;
  AttentionParams attend3;
  AttentionParams attend4;
};

struct HfemOutput {
  Tensor t2;
  Tensor t3;
  Tensor t4;
  Tensor a4;        // aligned x4
  Tensor x3_prime;  // aggregated level 3
  Tensor x2_prime;  // aggregated level 2
};

void declare_hfem(ParamStore& store, Rng& rng, const std::array<int, 3>& in_channels, int width,
                  Norm norm, const std::string& prefix = "hfem");
HfemParams bind_hfem(ForwardContext& ctx, Norm norm, const std::string& prefix = "hfem");

Tensor channel_spatial_attention(const Tensor& x, const AttentionParams& params);

HfemOutput hfem_forward(const Tensor& x2, const Tensor& x3, const Tensor& x4,
                        const HfemParams& params);

// ------------------------------------------------------------------- GAM

struct GamParams {
  ConvBnParams fuse;  // 3x3 over concat(decoder, encoder)
  ConvParams query;   // 1x1 on the decoder feature, -> c_a
  ConvParams key;     // 1x1 on the fused map, -> c_a
  ConvParams value;   // 1x1 on the fused map, -> c_a
  ConvParams project; // 1x1, c_a -> decoder channels
};

struct GamTrace {
  Tensor fused;      // F
  Tensor attention;  // [n,1,hw,hw], rows sum to 1
  Tensor values;     // V as [n,c_a,h,w]
  Tensor attended;   // A V as [n,c_a,h,w]
};

void declare_gam(ParamStore& store, Rng& rng, int decoder_channels, int encoder_channels,
                 int attn_width, Norm norm, const std::string& prefix);
GamParams bind_gam(ForwardContext& ctx, Norm norm, const std::string& prefix);

/// out = decoder + project(softmax(Q K^T / sqrt(c_a)) V).
Tensor gam_forward(const Tensor& decoder_feat, const Tensor& encoder_feat,
                   const GamParams& params, GamTrace* trace = nullptr);

// --------------------------------------------------------------- decoder

struct PredictionSet {
  Tensor p1;
  Tensor p2;
  Tensor p3;
};

/// Lower and upper clamp of every prediction map.
inline constexpr Scalar kPredictionEps = Scalar(1e-7);

struct DecoderStage {
  ConvBnParams block;             // 3x3 over concat(up2(D_{i+1}), T_i)
  std::optional<GamParams> gam;
};

struct DecoderParams {
  std::array<DecoderStage, 3> stages;  // levels 3, 2, 1
  std::array<ConvParams, 3> heads;     // P1 <- D1, P2 <- D2, P3 <- D3
  bool single_head = false;            // P1 = P2 = P3 from D1
};

struct FusedPyramid {
  Tensor t1;
  Tensor t2;
  Tensor t3;
  Tensor t4;
};

struct DecoderTrace {
  std::array<Tensor, 4> d;  // D1..D4
};

void declare_decoder(ParamStore& store, Rng& rng, const std::array<int, 4>& t_channels,
                     int width, int attn_width, bool with_gam, bool single_head, Norm norm,
                     const std::string& prefix = "decoder");
DecoderParams bind_decoder(ForwardContext& ctx, bool with_gam, bool single_head, Norm norm,
                           const std::string& prefix = "decoder");

/// Prediction head: sigmoid of the 1x1 logits resized to out_h x out_w,
/// clamped to [eps, 1 - eps].
Tensor prediction_head(const Tensor& feature, const ConvParams& head, int out_h, int out_w);

PredictionSet decode(const FusedPyramid& t, const DecoderParams& params, int out_h, int out_w,
                     DecoderTrace* trace = nullptr);

}  // namespace mlff

#endif  // MLFF_FUSION_HPP
