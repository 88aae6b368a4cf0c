// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Boundary-weighted BCE + IoU loss and the three-head deep-supervision total.

#ifndef MLFF_LOSS_HPP
#define MLFF_LOSS_HPP

#include <string>

#include "mlff/fusion.hpp"
#include "mlff/tensor.hpp"

namespace mlff {

inline constexpr int kWeightWindow = 31;
inline constexpr Scalar kWeightGain = 5;

/// w = 1 + 5 |avgpool31(g) - g|, zero padding counted in the window mean.
/// g must be binary [n,1,H,W].
Tensor pixel_weights(const Tensor& g);

/// Per image sum(w * bce) / sum(w), averaged over the batch.
Tensor weighted_bce(const Tensor& p, const Tensor& g, const Tensor& w);

/// Per image 1 - (I + 1) / (U - I + 1) with I = sum(w p g), U = sum(w (p + g)),
/// averaged over the batch.
Tensor weighted_iou(const Tensor& p, const Tensor& g, const Tensor& w);

/// weighted_iou + weighted_bce with pixel_weights(g).
Tensor basic_loss(const Tensor& p, const Tensor& g);

struct LossTerms {
  Scalar wbce = 0;
  Scalar wiou = 0;
  Scalar value = 0;  // wiou + wbce
};

struct LossBreakdown {
  LossTerms p1;
  LossTerms p2;
  LossTerms p3;
  Scalar total = 0;
  Tensor total_tensor;  // on the tape when the predictions are

  /// "total,lb_p1,lb_p2,lb_p3" with round-trip precision.
  std::string csv_fields() const;
};

/// L_b(P1, G) + L_b(P2, G) + 0.5 L_b(P3, G).
LossBreakdown total_loss(const PredictionSet& preds, const Tensor& g);

}  // namespace mlff

#endif  // MLFF_LOSS_HPP
