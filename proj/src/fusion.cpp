// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/fusion.hpp"

#include <cmath>
#include <vector>

namespace mlff {

namespace {

std::string branch_name(const std::string& prefix, int k) {
  return prefix + ".k" + std::to_string(k);
}

Tensor resize_to(const Tensor& x, const Tensor& like) {
  return ops::upsample_bilinear(x, like.shape().h, like.shape().w);
}

Tensor concat2(const Tensor& a, const Tensor& b) {
  const std::array<Tensor, 2> parts{a, b};
  return ops::concat_channels(parts);
}

const ops::ConvGeometry kPointwise{};

}  // namespace

// ------------------------------------------------------------------- MAM

void declare_mam(ParamStore& store, Rng& rng, int c1, Norm norm, const std::string& prefix) {
  if (c1 % 4 != 0) {
    throw ConfigError("MAM needs the shallow width c1 to be divisible by 4, got " +
                      std::to_string(c1));
  }
  const int cb = c1 / 4;
  for (const int k : kMamKernels) {
    const std::string b = branch_name(prefix, k);
    declare_conv_bn(store, rng, b + ".reduce", c1, cb, 1, 1, norm);
    declare_conv_bn(store, rng, b + ".tall", cb, cb, k, 1, norm);
    declare_conv_bn(store, rng, b + ".wide", cb, cb, 1, k, norm);
    declare_conv_bn(store, rng, b + ".dilated", cb, cb, 3, 3, norm);
  }
  declare_conv(store, rng, prefix + ".fuse", c1, c1, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".spatial", c1, 1, 1, 1, true, 1.0);
}

MamParams bind_mam(ForwardContext& ctx, Norm norm, const std::string& prefix) {
  MamParams p;
  for (std::size_t i = 0; i < kMamKernels.size(); ++i) {
    const int k = kMamKernels[i];
    const std::string b = branch_name(prefix, k);
    MamBranch& br = p.branches[i];
    br.reduce = bind_conv_bn(ctx, b + ".reduce", kPointwise, norm);
    br.tall = bind_conv_bn(ctx, b + ".tall", same_geometry(k, 1), norm);
    br.wide = bind_conv_bn(ctx, b + ".wide", same_geometry(1, k), norm);
    br.dilated = bind_conv_bn(ctx, b + ".dilated", same_geometry(3, 3, mam_dilation(k)), norm);
  }
  p.fuse = bind_conv(ctx, prefix + ".fuse", kPointwise);
  p.spatial_attention = bind_conv(ctx, prefix + ".spatial", kPointwise);
  return p;
}

Tensor mam_forward(const Tensor& x1, const MamParams& params, MamTrace* trace) {
  if (x1.shape().c % 4 != 0) {
    throw ConfigError("MAM input channels must be divisible by 4, got " + x1.shape().str());
  }
  std::vector<Tensor> branches;
  branches.reserve(params.branches.size());
  for (const MamBranch& br : params.branches) {
    Tensor y = conv_bn_relu(x1, br.reduce);
    y = conv_bn_relu(y, br.tall);
    y = conv_bn_relu(y, br.wide);
    y = conv_bn_relu(y, br.dilated);
    branches.push_back(y);
  }
  const Tensor fused = conv(ops::concat_channels(branches), params.fuse);
  const Tensor residual = ops::add(fused, x1);
  const Tensor gate = ops::sigmoid(conv(residual, params.spatial_attention));
  if (trace != nullptr) {
    trace->fused = fused;
    trace->gate = gate;
  }
  return ops::scale_spatial(residual, gate);
}

// ------------------------------------------------------------------ HFEM

namespace {

void declare_attention(ParamStore& store, Rng& rng, const std::string& name, int c) {
  const int hidden = c / 4 > 1 ? c / 4 : 1;
  declare_conv(store, rng, name + ".se_reduce", c, hidden, 1, 1, true, std::sqrt(2.0));
  declare_conv(store, rng, name + ".se_expand", hidden, c, 1, 1, true, 1.0);
  declare_conv(store, rng, name + ".spatial", c, 1, 1, 1, true, 1.0);
}

AttentionParams bind_attention(ForwardContext& ctx, const std::string& name) {
  return {bind_conv(ctx, name + ".se_reduce", kPointwise),
          bind_conv(ctx, name + ".se_expand", kPointwise),
          bind_conv(ctx, name + ".spatial", kPointwise)};
}

}  // namespace

void declare_hfem(ParamStore& store, Rng& rng, const std::array<int, 3>& in_channels, int width,
                  Norm norm, const std::string& prefix) {
  if (width < 1) {
    throw ConfigError("HFEM width must be >= 1");
  }
  declare_conv(store, rng, prefix + ".align2", in_channels[0], width, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".align3", in_channels[1], width, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".align4", in_channels[2], width, 1, 1, true, 1.0);
  declare_conv_bn(store, rng, prefix + ".aggregate3", 2 * width, width, 3, 3, norm);
  declare_conv_bn(store, rng, prefix + ".aggregate2", 2 * width, width, 3, 3, norm);
  declare_attention(store, rng, prefix + ".attend2", width);
  declare_attention(store, rng, prefix + ".attend3", width);
  declare_attention(store, rng, prefix + ".attend4", width);
}

HfemParams bind_hfem(ForwardContext& ctx, Norm norm, const std::string& prefix) {
  HfemParams p;
  p.align2 = bind_conv(ctx, prefix + ".align2", kPointwise);
  p.align3 = bind_conv(ctx, prefix + ".align3", kPointwise);
  p.align4 = bind_conv(ctx, prefix + ".align4", kPointwise);
  p.aggregate3 = bind_conv_bn(ctx, prefix + ".aggregate3", same_geometry(3, 3), norm);
  p.aggregate2 = bind_conv_bn(ctx, prefix + ".aggregate2", same_geometry(3, 3), norm);
  p.attend2 = bind_attention(ctx, prefix + ".attend2");
  p.attend3 = bind_attention(ctx, prefix + ".attend3");
  p.attend4 = bind_attention(ctx, prefix + ".attend4");
  return p;
}

Tensor channel_spatial_attention(const Tensor& x, const AttentionParams& params) {
  const Tensor squeezed = ops::reduce(x, ops::Reduce::mean, ops::Axes::spatial);
  const Tensor hidden = ops::relu(conv(squeezed, params.se_reduce));
  const Tensor channel_gate = ops::sigmoid(conv(hidden, params.se_expand));
  const Tensor y = ops::scale_channels(x, channel_gate);
  const Tensor spatial_gate = ops::sigmoid(conv(y, params.spatial));
  return ops::scale_spatial(y, spatial_gate);
}

HfemOutput hfem_forward(const Tensor& x2, const Tensor& x3, const Tensor& x4,
                        const HfemParams& params) {
  const Shape& s2 = x2.shape();
  const Shape& s3 = x3.shape();
  const Shape& s4 = x4.shape();
  if (s2.n != s3.n || s3.n != s4.n || s2.h != 2 * s3.h || s2.w != 2 * s3.w ||
      s3.h != 2 * s4.h || s3.w != 2 * s4.w) {
    throw ContractError("HFEM: pyramid levels " + s2.str() + ", " + s3.str() + ", " + s4.str() +
                        " are not successive halvings");
  }
  HfemOutput out;
  out.a4 = conv(x4, params.align4);
  out.x3_prime = conv_bn_relu(concat2(conv(x3, params.align3), resize_to(out.a4, x3)),
                              params.aggregate3);
  out.x2_prime = conv_bn_relu(concat2(conv(x2, params.align2), resize_to(out.x3_prime, x2)),
                              params.aggregate2);
  out.t4 = channel_spatial_attention(out.a4, params.attend4);
  out.t3 = channel_spatial_attention(out.x3_prime, params.attend3);
  out.t2 = channel_spatial_attention(out.x2_prime, params.attend2);
  return out;
}

// ------------------------------------------------------------------- GAM

void declare_gam(ParamStore& store, Rng& rng, int decoder_channels, int encoder_channels,
                 int attn_width, Norm norm, const std::string& prefix) {
  if (attn_width < 1) {
    throw ConfigError("GAM attention width must be >= 1");
  }
  declare_conv_bn(store, rng, prefix + ".fuse", decoder_channels + encoder_channels,
                  decoder_channels, 3, 3, norm);
  declare_conv(store, rng, prefix + ".query", decoder_channels, attn_width, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".key", decoder_channels, attn_width, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".value", decoder_channels, attn_width, 1, 1, true, 1.0);
  declare_conv(store, rng, prefix + ".project", attn_width, decoder_channels, 1, 1, true, 1.0);
}

GamParams bind_gam(ForwardContext& ctx, Norm norm, const std::string& prefix) {
  GamParams p;
  p.fuse = bind_conv_bn(ctx, prefix + ".fuse", same_geometry(3, 3), norm);
  p.query = bind_conv(ctx, prefix + ".query", kPointwise);
  p.key = bind_conv(ctx, prefix + ".key", kPointwise);
  p.value = bind_conv(ctx, prefix + ".value", kPointwise);
  p.project = bind_conv(ctx, prefix + ".project", kPointwise);
  return p;
}

Tensor gam_forward(const Tensor& decoder_feat, const Tensor& encoder_feat,
                   const GamParams& params, GamTrace* trace) {
  const Shape& ds = decoder_feat.shape();
  const Shape& es = encoder_feat.shape();
  if (ds.n != es.n || ds.h != es.h || ds.w != es.w) {
    throw ContractError("GAM: decoder " + ds.str() + " and encoder " + es.str() +
                        " features differ in n, h or w");
  }
  const Tensor fused = conv_bn_relu(concat2(decoder_feat, encoder_feat), params.fuse);
  const Tensor q = conv(decoder_feat, params.query);
  const Tensor k = conv(fused, params.key);
  const Tensor v = conv(fused, params.value);
  const int ca = q.shape().c;
  const int hw = ds.h * ds.w;

  // Tokens: positions along rows, attention channels along columns.
  const Tensor q_tokens = ops::transpose_last2(ops::reshape(q, {ds.n, 1, ca, hw}));
  const Tensor k_cols = ops::reshape(k, {ds.n, 1, ca, hw});
  const Tensor v_tokens = ops::transpose_last2(ops::reshape(v, {ds.n, 1, ca, hw}));

  const Tensor scores = ops::affine(ops::matmul_batched(q_tokens, k_cols),
                                    Scalar(1) / std::sqrt(static_cast<Scalar>(ca)), Scalar(0));
  const Tensor attention = ops::softmax_lastdim(scores);
  const Tensor gathered = ops::matmul_batched(attention, v_tokens);  // [n,1,hw,ca]
  const Tensor attended = ops::reshape(ops::transpose_last2(gathered), {ds.n, ca, ds.h, ds.w});
  if (trace != nullptr) {
    trace->fused = fused;
    trace->attention = attention;
    trace->values = v;
    trace->attended = attended;
  }
  return ops::add(decoder_feat, conv(attended, params.project));
}

// --------------------------------------------------------------- decoder

namespace {

std::string stage_name(const std::string& prefix, int level) {
  return prefix + ".d" + std::to_string(level);
}

std::string head_name(const std::string& prefix, int head) {
  return prefix + ".head" + std::to_string(head);
}

}  // namespace

void declare_decoder(ParamStore& store, Rng& rng, const std::array<int, 4>& t_channels,
                     int width, int attn_width, bool with_gam, bool single_head, Norm norm,
                     const std::string& prefix) {
  if (width < 1) {
    throw ConfigError("decoder width must be >= 1");
  }
  int below = t_channels[3];
  for (int level = 3; level >= 1; --level) {
    const int skip = t_channels[static_cast<std::size_t>(level - 1)];
    const std::string s = stage_name(prefix, level);
    declare_conv_bn(store, rng, s + ".block", below + skip, width, 3, 3, norm);
    if (with_gam) {
      declare_gam(store, rng, width, skip, attn_width, norm, s + ".gam");
    }
    below = width;
  }
  const int heads = single_head ? 1 : 3;
  for (int h = 1; h <= heads; ++h) {
    declare_conv(store, rng, head_name(prefix, h), width, 1, 1, 1, true, 1.0);
  }
}

DecoderParams bind_decoder(ForwardContext& ctx, bool with_gam, bool single_head, Norm norm,
                           const std::string& prefix) {
  DecoderParams p;
  p.single_head = single_head;
  for (int level = 3; level >= 1; --level) {
    DecoderStage& st = p.stages[static_cast<std::size_t>(3 - level)];
    const std::string s = stage_name(prefix, level);
    st.block = bind_conv_bn(ctx, s + ".block", same_geometry(3, 3), norm);
    if (with_gam) {
      st.gam = bind_gam(ctx, norm, s + ".gam");
    }
  }
  const int heads = single_head ? 1 : 3;
  for (int h = 1; h <= heads; ++h) {
    p.heads[static_cast<std::size_t>(h - 1)] = bind_conv(ctx, head_name(prefix, h), kPointwise);
  }
  return p;
}

Tensor prediction_head(const Tensor& feature, const ConvParams& head, int out_h, int out_w) {
  const Tensor logits = ops::upsample_bilinear(conv(feature, head), out_h, out_w);
  return ops::clamp(ops::sigmoid(logits), kPredictionEps, 1 - kPredictionEps);
}

PredictionSet decode(const FusedPyramid& t, const DecoderParams& params, int out_h, int out_w,
                     DecoderTrace* trace) {
  const std::array<const Tensor*, 4> skips{&t.t1, &t.t2, &t.t3, &t.t4};
  for (int level = 3; level >= 1; --level) {
    const Shape& hi = skips[static_cast<std::size_t>(level - 1)]->shape();
    const Shape& lo = skips[static_cast<std::size_t>(level)]->shape();
    if (hi.n != lo.n || hi.h != 2 * lo.h || hi.w != 2 * lo.w) {
      throw ContractError("decode: T" + std::to_string(level) + " " + hi.str() + " is not twice T" +
                          std::to_string(level + 1) + " " + lo.str());
    }
  }
  std::array<Tensor, 4> d;
  d[3] = t.t4;
  for (int level = 3; level >= 1; --level) {
    const auto li = static_cast<std::size_t>(level - 1);
    const DecoderStage& st = params.stages[static_cast<std::size_t>(3 - level)];
    const Tensor& skip = *skips[li];
    const Tensor up = resize_to(d[li + 1], skip);
    const Tensor u = conv_bn_relu(concat2(up, skip), st.block);
    d[li] = st.gam ? gam_forward(u, skip, *st.gam) : u;
  }
  if (trace != nullptr) {
    trace->d = d;
  }
  PredictionSet out;
  out.p1 = prediction_head(d[0], params.heads[0], out_h, out_w);
  if (params.single_head) {
    out.p2 = out.p1;
    out.p3 = out.p1;
  } else {
    out.p2 = prediction_head(d[1], params.heads[1], out_h, out_w);
    out.p3 = prediction_head(d[2], params.heads[2], out_h, out_w);
  }
  return out;
}

}  // namespace mlff
