// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>

namespace mlff::metrics {

namespace {

constexpr double kEps = DBL_EPSILON;

struct Map {
  int h = 0;
  int w = 0;
  std::vector<double> p;
  std::vector<double> g;  // 0 or 1

  std::size_t size() const { return p.size(); }
};

Map to_map(const Tensor& p, const Tensor& g) {
  const Shape& ps = p.shape();
  if (ps != g.shape()) {
    throw ContractError("metrics: prediction " + ps.str() + " and mask " + g.shape().str() +
                        " differ");
  }
  if (ps.n != 1 || ps.c != 1) {
    throw ContractError("metrics: expected single maps [1,1,H,W], got " + ps.str());
  }
  Map m;
  m.h = ps.h;
  m.w = ps.w;
  m.p.assign(p.data().begin(), p.data().end());
  m.g.reserve(m.p.size());
  for (const Scalar v : g.data()) {
    if (v != 0 && v != 1) {
      throw ContractError("metrics: mask values must be 0 or 1");
    }
    m.g.push_back(static_cast<double>(v));
  }
  for (const double v : m.p) {
    if (!(v >= 0 && v <= 1)) {
      throw ContractError("metrics: prediction values must lie in [0, 1]");
    }
  }
  return m;
}

// For every pixel, the squared distance to and flat index of the nearest
// foreground pixel; ties go to the smallest (row, col). Foreground pixels map
// to themselves. Column pass with two sweeps, then a scan over columns.
void nearest_foreground(const Map& m, std::vector<double>& dist, std::vector<std::size_t>& idx) {
  const int H = m.h;
  const int W = m.w;
  constexpr int kNone = -1;
  std::vector<int> col_near(static_cast<std::size_t>(H) * W, kNone);
  std::vector<bool> col_has(static_cast<std::size_t>(W), false);
  for (int x = 0; x < W; ++x) {
    std::vector<int> up(static_cast<std::size_t>(H), kNone);
    std::vector<int> down(static_cast<std::size_t>(H), kNone);
    int last = kNone;
    for (int y = 0; y < H; ++y) {
      if (m.g[static_cast<std::size_t>(y) * W + x] > 0) {
        last = y;
      }
      up[static_cast<std::size_t>(y)] = last;
    }
    last = kNone;
    for (int y = H - 1; y >= 0; --y) {
      if (m.g[static_cast<std::size_t>(y) * W + x] > 0) {
        last = y;
      }
      down[static_cast<std::size_t>(y)] = last;
    }
    for (int y = 0; y < H; ++y) {
      const int a = up[static_cast<std::size_t>(y)];
      const int b = down[static_cast<std::size_t>(y)];
      int best = a;
      if (a == kNone || (b != kNone && (b - y) < (y - a))) {
        best = b;
      }
      col_near[static_cast<std::size_t>(y) * W + x] = best;
      if (best != kNone) {
        col_has[static_cast<std::size_t>(x)] = true;
      }
    }
  }
  dist.assign(m.size(), 0);
  idx.assign(m.size(), 0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (m.g[i] > 0) {
        idx[i] = i;
        continue;
      }
      long best_d = std::numeric_limits<long>::max();
      int best_r = 0;
      int best_c = 0;
      for (int c = 0; c < W; ++c) {
        if (!col_has[static_cast<std::size_t>(c)]) {
          continue;
        }
        const int r = col_near[static_cast<std::size_t>(y) * W + c];
        const long d = static_cast<long>(c - x) * (c - x) + static_cast<long>(r - y) * (r - y);
        if (d < best_d || (d == best_d && (r < best_r || (r == best_r && c < best_c)))) {
          best_d = d;
          best_r = r;
          best_c = c;
        }
      }
      dist[i] = std::sqrt(static_cast<double>(best_d));
      idx[i] = static_cast<std::size_t>(best_r) * W + best_c;
    }
  }
}

// 7-tap normalized Gaussian, sigma 5; the 2-D kernel is its outer product.
std::array<double, 7> gaussian_taps() {
  std::array<double, 7> k{};
  double sum = 0;
  for (int i = 0; i < 7; ++i) {
    const double d = i - 3;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 25.0));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) {
    v /= sum;
  }
  return k;
}

// Same-size correlation with zero padding, separable.
std::vector<double> gaussian_filter(const std::vector<double>& in, int H, int W) {
  const auto k = gaussian_taps();
  std::vector<double> tmp(in.size(), 0);
  std::vector<double> out(in.size(), 0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int t = -3; t <= 3; ++t) {
        const int xx = x + t;
        if (xx >= 0 && xx < W) {
          s += k[static_cast<std::size_t>(t + 3)] * in[static_cast<std::size_t>(y) * W + xx];
        }
      }
      tmp[static_cast<std::size_t>(y) * W + x] = s;
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int t = -3; t <= 3; ++t) {
        const int yy = y + t;
        if (yy >= 0 && yy < H) {
          s += k[static_cast<std::size_t>(t + 3)] * tmp[static_cast<std::size_t>(yy) * W + x];
        }
      }
      out[static_cast<std::size_t>(y) * W + x] = s;
    }
  }
  return out;
}

struct Moments {
  double count = 0;
  double sum = 0;
  double sum_sq = 0;
};

// 2 mean / (mean^2 + 1 + std + eps), std with the n-1 normalization (0 for a
// single sample).
double object_similarity(const Moments& m) {
  if (m.count == 0) {
    return 0;
  }
  const double mean = m.sum / m.count;
  double var = 0;
  if (m.count > 1) {
    var = std::max(0.0, (m.sum_sq - m.count * mean * mean) / (m.count - 1));
  }
  return 2.0 * mean / (mean * mean + 1.0 + std::sqrt(var) + kEps);
}

double region_ssim(const Map& m, int y0, int y1, int x0, int x1) {
  const double n = static_cast<double>(y1 - y0) * (x1 - x0);
  double sp = 0;
  double sg = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
      sp += m.p[i];
      sg += m.g[i];
    }
  }
  const double mx = sp / n;
  const double my = sg / n;
  double vx = 0;
  double vy = 0;
  double cxy = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
      const double dx = m.p[i] - mx;
      const double dy = m.g[i] - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double norm = n - 1 + kEps;
  vx /= norm;
  vy /= norm;
  cxy /= norm;
  const double alpha = 4 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0) {
    return alpha / (beta + kEps);
  }
  return beta == 0 ? 1.0 : 0.0;
}

double threshold_at(int k) { return static_cast<double>(k) / kEThresholds; }

}  // namespace

Overlap dice_iou(const Tensor& p, const Tensor& g, double threshold) {
  const Map m = to_map(p, g);
  double inter = 0;
  double pred = 0;
  double gt = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double b = m.p[i] >= threshold ? 1.0 : 0.0;
    inter += b * m.g[i];
    pred += b;
    gt += m.g[i];
  }
  Overlap o;
  o.dice = 2 * inter / (pred + gt + kOverlapEps);
  o.iou = inter / (pred + gt - inter + kOverlapEps);
  return o;
}

WeightedF weighted_fmeasure(const Tensor& p, const Tensor& g) {
  const Map m = to_map(p, g);
  double fg_count = 0;
  for (const double v : m.g) {
    fg_count += v;
  }
  if (fg_count == 0) {
    return {0.0, true};
  }
  const std::size_t N = m.size();
  std::vector<double> err(N);
  for (std::size_t i = 0; i < N; ++i) {
    err[i] = std::abs(m.p[i] - m.g[i]);
  }
  std::vector<double> dist;
  std::vector<std::size_t> nearest;
  nearest_foreground(m, dist, nearest);

  // Background pixels inherit the error of their nearest foreground pixel.
  std::vector<double> err_t(N);
  for (std::size_t i = 0; i < N; ++i) {
    err_t[i] = m.g[i] > 0 ? err[i] : err[nearest[i]];
  }
  const std::vector<double> err_a = gaussian_filter(err_t, m.h, m.w);

  const double decay = std::log(1 - 0.5) / 5;
  double ew_fg = 0;
  double ew_bg = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double e = err[i];
    double importance = 1;
    if (m.g[i] > 0) {
      if (err_a[i] < e) {
        e = err_a[i];
      }
    } else {
      importance = 2 - std::exp(decay * dist[i]);
    }
    const double ew = e * importance;
    (m.g[i] > 0 ? ew_fg : ew_bg) += ew;
  }
  const double tp = fg_count - ew_fg;
  const double fp = ew_bg;
  const double recall = 1 - ew_fg / fg_count;
  const double precision = tp / (kEps + tp + fp);
  return {2 * recall * precision / (kEps + recall + precision), false};
}

double s_measure(const Tensor& p, const Tensor& g) {
  const Map m = to_map(p, g);
  const std::size_t N = m.size();
  double fg = 0;
  double p_sum = 0;
  for (std::size_t i = 0; i < N; ++i) {
    fg += m.g[i];
    p_sum += m.p[i];
  }
  const double mean_g = fg / static_cast<double>(N);
  if (fg == 0) {
    return 1 - p_sum / static_cast<double>(N);
  }
  if (fg == static_cast<double>(N)) {
    return p_sum / static_cast<double>(N);
  }

  // Object-aware term.
  Moments fg_m;
  Moments bg_m;
  for (std::size_t i = 0; i < N; ++i) {
    if (m.g[i] > 0) {
      fg_m.count += 1;
      fg_m.sum += m.p[i];
      fg_m.sum_sq += m.p[i] * m.p[i];
    } else {
      const double q = 1 - m.p[i];
      bg_m.count += 1;
      bg_m.sum += q;
      bg_m.sum_sq += q * q;
    }
  }
  const double s_object =
      mean_g * object_similarity(fg_m) + (1 - mean_g) * object_similarity(bg_m);

  // Region-aware term: split at the (1-based, rounded) mask centroid.
  double cx = 0;
  double cy = 0;
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      const double v = m.g[static_cast<std::size_t>(y) * m.w + x];
      cx += v * (x + 1);
      cy += v * (y + 1);
    }
  }
  const int X = static_cast<int>(std::round(cx / fg));
  const int Y = static_cast<int>(std::round(cy / fg));
  const double area = static_cast<double>(N);
  const double w1 = static_cast<double>(X) * Y / area;
  const double w2 = static_cast<double>(m.w - X) * Y / area;
  const double w3 = static_cast<double>(X) * (m.h - Y) / area;
  const double w4 = 1 - w1 - w2 - w3;
  auto part = [&](double weight, int y0, int y1, int x0, int x1) {
    if (y1 <= y0 || x1 <= x0) {
      return 0.0;
    }
    return weight * region_ssim(m, y0, y1, x0, x1);
  };
  const double s_region = part(w1, 0, Y, 0, X) + part(w2, 0, Y, X, m.w) +
                          part(w3, Y, m.h, 0, X) + part(w4, Y, m.h, X, m.w);

  const double s = 0.5 * s_object + 0.5 * s_region;
  return s < 0 ? 0.0 : s;
}

EMeasure e_measure(const Tensor& p, const Tensor& g) {
  const Map m = to_map(p, g);
  const auto N = static_cast<double>(m.size());
  std::vector<double> fg_vals;
  std::vector<double> bg_vals;
  for (std::size_t i = 0; i < m.size(); ++i) {
    (m.g[i] > 0 ? fg_vals : bg_vals).push_back(m.p[i]);
  }
  std::sort(fg_vals.begin(), fg_vals.end());
  std::sort(bg_vals.begin(), bg_vals.end());
  const auto G = static_cast<double>(fg_vals.size());
  auto above = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
  };
  auto enhanced = [](double ag, double af) {
    const double align = 2 * ag * af / (ag * ag + af * af + kEps);
    return (align + 1) * (align + 1) / 4;
  };

  EMeasure out;
  double sum = 0;
  double best = -1;
  for (int k = 0; k < kEThresholds; ++k) {
    const double t = threshold_at(k);
    const double tp = above(fg_vals, t);
    const double fp = above(bg_vals, t);
    const double pos = tp + fp;
    double score = 0;
    if (G == 0) {
      score = (N - pos) / N;
    } else if (G == N) {
      score = pos / N;
    } else {
      const double mu_f = pos / N;
      const double mu_g = G / N;
      score = (tp * enhanced(1 - mu_g, 1 - mu_f) + fp * enhanced(-mu_g, 1 - mu_f) +
               (G - tp) * enhanced(1 - mu_g, -mu_f) + (N - G - fp) * enhanced(-mu_g, -mu_f)) /
              N;
    }
    out.curve[static_cast<std::size_t>(k)] = score;
    sum += score;
    best = std::max(best, score);
  }
  out.mean = sum / kEThresholds;
  out.max = best;
  return out;
}

double mae(const Tensor& p, const Tensor& g) {
  const Map m = to_map(p, g);
  double s = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    s += std::abs(m.p[i] - m.g[i]);
  }
  return s / static_cast<double>(m.size());
}

MetricReport evaluate_image(const Tensor& p, const Tensor& g) {
  MetricReport r;
  const Overlap o = dice_iou(p, g);
  const WeightedF f = weighted_fmeasure(p, g);
  const EMeasure e = e_measure(p, g);
  r.m_dice = o.dice;
  r.m_iou = o.iou;
  r.wfm = f.value;
  r.s_measure = s_measure(p, g);
  r.mean_e = e.mean;
  r.max_e = e.max;
  r.mae = mae(p, g);
  r.images = 1;
  r.degenerate = f.degenerate ? 1 : 0;
  return r;
}

MetricReport evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
  if (pairs.empty()) {
    throw ContractError("evaluate_dataset: empty dataset");
  }
  MetricReport acc;
  for (const auto& [p, g] : pairs) {
    const MetricReport r = evaluate_image(p, g);
    acc.m_dice += r.m_dice;
    acc.m_iou += r.m_iou;
    acc.wfm += r.wfm;
    acc.s_measure += r.s_measure;
    acc.mean_e += r.mean_e;
    acc.max_e += r.max_e;
    acc.mae += r.mae;
    acc.degenerate += r.degenerate;
  }
  const auto n = static_cast<double>(pairs.size());
  acc.m_dice /= n;
  acc.m_iou /= n;
  acc.wfm /= n;
  acc.s_measure /= n;
  acc.mean_e /= n;
  acc.max_e /= n;
  acc.mae /= n;
  acc.images = static_cast<int>(pairs.size());
  return acc;
}

std::string csv_header() { return "dataset,model,mDic,mIoU,wFm,Smeasure,meanE,maxE,MAE"; }

std::string csv_row(const std::string& dataset, const std::string& model, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f", r.m_dice, r.m_iou, r.wfm,
                r.s_measure, r.mean_e, r.max_e, r.mae);
  return dataset + "," + model + "," + buf;
}

}  // namespace mlff::metrics
