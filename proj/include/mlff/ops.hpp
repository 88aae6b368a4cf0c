// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Each op validates its shapes, computes
// the result eagerly and, when any input lives on a tape, records a backward
// rule. There is no implicit broadcasting: the only broadcasts are
// single-element operands in elementwise ops and the explicit
// scale_channels / scale_spatial gates.

#ifndef MLFF_OPS_HPP
#define MLFF_OPS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlff/tensor.hpp"

namespace mlff::ops {

struct ConvGeometry {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation_h = 1;
  int dilation_w = 1;

  static ConvGeometry uniform(int stride, int padding, int dilation) {
    return {stride, stride, padding, padding, dilation, dilation};
  }
};

/// Output extent of a convolution along one axis:
/// floor((in + 2p - d(k-1) - 1) / s) + 1, or <= 0 when degenerate.
int conv_out_extent(int in, int kernel, int stride, int pad, int dilation);

/// weight: [out_c, in_c, kh, kw]; bias: any shape holding out_c values.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const ConvGeometry& geo);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int stride,
              int padding, int dilation);

/// Bilinear resize with half-pixel centres (align_corners = false).
Tensor upsample_bilinear(const Tensor& input, int target_h, int target_w);

Tensor concat_channels(std::span<const Tensor> parts);

/// Batched product over the last two axes: [n,c,m,k] x [n,c,k,p] -> [n,c,m,p].
Tensor matmul_batched(const Tensor& a, const Tensor& b);

/// Swaps the last two axes: [n,c,h,w] -> [n,c,w,h].
Tensor transpose_last2(const Tensor& x);

/// Reinterprets the row-major buffer with a new shape of equal size.
Tensor reshape(const Tensor& x, Shape shape);

enum class Activation { relu, sigmoid, softmax_lastdim };

Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor softmax_lastdim(const Tensor& x) { return activation(x, Activation::softmax_lastdim); }

/// While alive, accumulates on this thread a hash of which branch every relu
/// and clamp element takes. Two evaluations with equal signatures lie on the
/// same linear piece of those functions.
class BranchProbe {
 public:
  BranchProbe();
  ~BranchProbe();
  BranchProbe(const BranchProbe&) = delete;
  BranchProbe& operator=(const BranchProbe&) = delete;

  std::uint64_t signature() const { return hash_; }

  static void note(int branch);

 private:
  std::uint64_t hash_;
  BranchProbe* outer_;
};

/// Natural logarithm; inputs must be strictly positive.
Tensor log(const Tensor& x);

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
Tensor clamp(const Tensor& x, Scalar lo, Scalar hi);

enum class Elementwise { add, sub, mul, div };

/// Shapes must match exactly, unless one operand has a single element.
Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::div); }

/// a * x + b elementwise with constant coefficients.
Tensor affine(const Tensor& x, Scalar a, Scalar b);

enum class Reduce { sum, mean };
enum class Axes { none, all, spatial, channel };

Tensor reduce(const Tensor& x, Reduce kind, Axes axes);

/// x[n,c,h,w] * gate[n,c,1,1].
Tensor scale_channels(const Tensor& x, const Tensor& gate);
/// x[n,c,h,w] * gate[n,1,h,w].
Tensor scale_spatial(const Tensor& x, const Tensor& gate);

/// Per-channel statistics tracked across training steps.
struct RunningStats {
  std::span<Scalar> mean;
  std::span<Scalar> var;
};

struct BatchNormOptions {
  bool training = true;
  bool update_running = true;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
};

/// Per-channel normalization. Training mode normalizes with the biased batch
/// statistics over (n, h, w) and, when asked, folds them into `running` with
/// the given momentum. Eval mode normalizes with `running`.
/// gamma and beta hold c values each.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::optional<RunningStats> running, const BatchNormOptions& opt);

}  // namespace mlff::ops

#endif  // MLFF_OPS_HPP
