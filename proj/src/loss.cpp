// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "mlff/ops.hpp"

namespace mlff {

namespace {

void require_mask(const Tensor& g, const char* op) {
  if (g.shape().c != 1) {
    throw ContractError(std::string(op) + ": mask must have one channel, got " + g.shape().str());
  }
  for (const Scalar v : g.data()) {
    if (v != 0 && v != 1) {
      throw ContractError(std::string(op) + ": mask values must be 0 or 1");
    }
  }
}

void require_pair(const Tensor& p, const Tensor& g, const Tensor& w, const char* op) {
  if (p.shape() != g.shape() || w.shape() != g.shape()) {
    throw ContractError(std::string(op) + ": shapes " + p.shape().str() + ", " + g.shape().str() +
                        ", " + w.shape().str() + " differ");
  }
}

Tensor batch_mean(const Tensor& per_image) {
  return ops::reduce(per_image, ops::Reduce::mean, ops::Axes::all);
}

Tensor spatial_sum(const Tensor& x) { return ops::reduce(x, ops::Reduce::sum, ops::Axes::spatial); }

}  // namespace

Tensor pixel_weights(const Tensor& g) {
  require_mask(g, "pixel_weights");
  const Shape s = g.shape();
  const int r = kWeightWindow / 2;
  const auto area = static_cast<Scalar>(kWeightWindow * kWeightWindow);
  const auto gd = g.data();
  std::vector<Scalar> out(s.numel());
  // Integral image per plane, (h+1) x (w+1).
  std::vector<Scalar> integral(static_cast<std::size_t>(s.h + 1) * (s.w + 1));
  const auto at = [&](int y, int x) -> Scalar& {
    return integral[static_cast<std::size_t>(y) * (s.w + 1) + x];
  };
  for (int n = 0; n < s.n; ++n) {
    const Scalar* plane = gd.data() + static_cast<std::size_t>(n) * s.plane();
    std::fill(integral.begin(), integral.end(), Scalar(0));
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        at(y + 1, x + 1) = plane[static_cast<std::size_t>(y) * s.w + x] + at(y, x + 1) +
                           at(y + 1, x) - at(y, x);
      }
    }
    for (int y = 0; y < s.h; ++y) {
      const int y0 = std::max(0, y - r);
      const int y1 = std::min(s.h, y + r + 1);
      for (int x = 0; x < s.w; ++x) {
        const int x0 = std::max(0, x - r);
        const int x1 = std::min(s.w, x + r + 1);
        const Scalar box = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
        const std::size_t i = static_cast<std::size_t>(n) * s.plane() +
                              static_cast<std::size_t>(y) * s.w + x;
        out[i] = 1 + kWeightGain * std::abs(box / area - gd[i]);
      }
    }
  }
  return Tensor(s, std::move(out));
}

Tensor weighted_bce(const Tensor& p, const Tensor& g, const Tensor& w) {
  require_pair(p, g, w, "weighted_bce");
  const Tensor g_const = g.detach();
  const Tensor w_const = w.detach();
  const Tensor not_g = ops::affine(g_const, -1, 1);
  const Tensor log_p = ops::log(p);
  const Tensor log_not_p = ops::log(ops::affine(p, -1, 1));
  const Tensor bce =
      ops::affine(ops::add(ops::mul(g_const, log_p), ops::mul(not_g, log_not_p)), -1, 0);
  const Tensor per_image = ops::div(spatial_sum(ops::mul(w_const, bce)), spatial_sum(w_const));
  return batch_mean(per_image);
}

Tensor weighted_iou(const Tensor& p, const Tensor& g, const Tensor& w) {
  require_pair(p, g, w, "weighted_iou");
  const Tensor g_const = g.detach();
  const Tensor w_const = w.detach();
  const Tensor inter = spatial_sum(ops::mul(ops::mul(w_const, g_const), p));
  const Tensor uni = spatial_sum(ops::mul(w_const, ops::add(p, g_const)));
  const Tensor ratio =
      ops::div(ops::affine(inter, 1, 1), ops::affine(ops::sub(uni, inter), 1, 1));
  return batch_mean(ops::affine(ratio, -1, 1));
}

namespace {

struct BasicParts {
  Tensor value;
  LossTerms terms;
};

BasicParts basic_parts(const Tensor& p, const Tensor& g, const Tensor& w) {
  const Tensor iou = weighted_iou(p, g, w);
  const Tensor bce = weighted_bce(p, g, w);
  const Tensor value = ops::add(iou, bce);
  return {value, {bce.item(), iou.item(), value.item()}};
}

}  // namespace

Tensor basic_loss(const Tensor& p, const Tensor& g) {
  return basic_parts(p, g, pixel_weights(g)).value;
}

std::string LossBreakdown::csv_fields() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g", static_cast<double>(total),
                static_cast<double>(p1.value), static_cast<double>(p2.value),
                static_cast<double>(p3.value));
  return buf;
}

LossBreakdown total_loss(const PredictionSet& preds, const Tensor& g) {
  const Tensor w = pixel_weights(g);
  const BasicParts l1 = basic_parts(preds.p1, g, w);
  const BasicParts l2 = basic_parts(preds.p2, g, w);
  const BasicParts l3 = basic_parts(preds.p3, g, w);
  LossBreakdown out;
  out.p1 = l1.terms;
  out.p2 = l2.terms;
  out.p3 = l3.terms;
  out.total_tensor = ops::add(ops::add(l1.value, l2.value), ops::affine(l3.value, 0.5, 0));
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace mlff
