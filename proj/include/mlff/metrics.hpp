// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics for a probability map p in [0, 1] against a binary mask
// g, both shaped [1, 1, H, W]: Dice / IoU, weighted F-measure, S-measure,
// E-measure (mean and max over thresholds) and MAE.

#ifndef MLFF_METRICS_HPP
#define MLFF_METRICS_HPP

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "mlff/tensor.hpp"

namespace mlff::metrics {

inline constexpr double kOverlapThreshold = 0.5;
inline constexpr double kOverlapEps = 1e-8;
inline constexpr int kEThresholds = 256;

struct Overlap {
  double dice = 0;
  double iou = 0;
};

/// Binarizes p at p >= threshold. dice = 2|P∩G| / (|P|+|G|+eps),
/// iou = |P∩G| / (|P∪G|+eps).
Overlap dice_iou(const Tensor& p, const Tensor& g, double threshold = kOverlapThreshold);

struct WeightedF {
  double value = 0;
  bool degenerate = false;  // empty mask; value is defined as 0
};

/// Weighted F-measure (beta^2 = 1) with a 7x7, sigma 5 Gaussian dependency
/// term and distance-decayed background importance.
WeightedF weighted_fmeasure(const Tensor& p, const Tensor& g);

/// Structure measure, 0.5 object-aware + 0.5 region-aware similarity.
double s_measure(const Tensor& p, const Tensor& g);

struct EMeasure {
  double mean = 0;
  double max = 0;
  std::array<double, kEThresholds> curve{};  // score at threshold k/256, p > t
};

/// Enhanced-alignment measure over the thresholds t_k = k/256, k = 0..255,
/// with foreground p > t_k.
EMeasure e_measure(const Tensor& p, const Tensor& g);

double mae(const Tensor& p, const Tensor& g);

struct MetricReport {
  double m_dice = 0;
  double m_iou = 0;
  double wfm = 0;
  double s_measure = 0;
  double mean_e = 0;
  double max_e = 0;
  double mae = 0;
  int images = 0;
  int degenerate = 0;  // images with an empty mask
};

MetricReport evaluate_image(const Tensor& p, const Tensor& g);

/// Unweighted mean over images, accumulated in list order.
MetricReport evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs);

std::string csv_header();
/// One row, three decimals per metric.
std::string csv_row(const std::string& dataset, const std::string& model, const MetricReport& r);

}  // namespace mlff::metrics

#endif  // MLFF_METRICS_HPP
