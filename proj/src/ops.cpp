// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mlff::ops {

namespace {

using Data = std::shared_ptr<const std::vector<Scalar>>;

// Backward closures hold the input buffers, never the tensors, so the tape
// does not own itself.
Data share(const Tensor& t) { return t.buffer(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                        b.shape().str());
  }
}

// Range [lo, hi) of output positions o for which o*stride + offset lies in
// [0, extent).
void valid_range(int out_extent, int extent, int stride, int offset, int& lo, int& hi) {
  lo = 0;
  if (offset < 0) {
    lo = (-offset + stride - 1) / stride;
  }
  const int last = extent - 1 - offset;
  hi = last < 0 ? 0 : last / stride + 1;
  hi = std::min(hi, out_extent);
  if (hi < lo) {
    hi = lo;
  }
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int pad, int dilation) {
  const int span = in + 2 * pad - dilation * (kernel - 1) - 1;
  if (span < 0) {
    return 0;
  }
  return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const ConvGeometry& geo) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c) {
    throw ContractError("conv2d: weight " + ws.str() + " expects " + std::to_string(ws.c) +
                        " input channels, input is " + xs.str());
  }
  if (bias != nullptr && bias->numel() != static_cast<std::size_t>(ws.n)) {
    throw ContractError("conv2d: bias " + bias->shape().str() + " does not match weight " +
                        ws.str());
  }
  if (geo.stride_h < 1 || geo.stride_w < 1 || geo.dilation_h < 1 || geo.dilation_w < 1 ||
      geo.pad_h < 0 || geo.pad_w < 0) {
    throw ContractError("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  const int oh = conv_out_extent(xs.h, ws.h, geo.stride_h, geo.pad_h, geo.dilation_h);
  const int ow = conv_out_extent(xs.w, ws.w, geo.stride_w, geo.pad_w, geo.dilation_w);
  if (oh < 1 || ow < 1) {
    throw DegenerateShapeError("conv2d: kernel " + ws.str() + " with dilation (" +
                               std::to_string(geo.dilation_h) + "," +
                               std::to_string(geo.dilation_w) + ") exceeds padded input " +
                               xs.str());
  }
  const Shape os{xs.n, ws.n, oh, ow};
  const int cin = xs.c;
  const int cout = ws.n;
  const int kh = ws.h;
  const int kw = ws.w;

  // Valid output ranges per kernel tap.
  std::vector<int> ylo(kh), yhi(kh), xlo(kw), xhi(kw);
  for (int ky = 0; ky < kh; ++ky) {
    valid_range(oh, xs.h, geo.stride_h, ky * geo.dilation_h - geo.pad_h, ylo[ky], yhi[ky]);
  }
  for (int kx = 0; kx < kw; ++kx) {
    valid_range(ow, xs.w, geo.stride_w, kx * geo.dilation_w - geo.pad_w, xlo[kx], xhi[kx]);
  }

  const auto x = input.data();
  const auto wt = weight.data();
  std::vector<Scalar> out(os.numel(), Scalar(0));
  const std::size_t in_plane = xs.plane();
  const std::size_t out_plane = os.plane();
  const int sh = geo.stride_h;
  const int sw = geo.stride_w;

  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      Scalar* op = out.data() + (static_cast<std::size_t>(n) * cout + co) * out_plane;
      if (bias != nullptr) {
        std::fill(op, op + out_plane, bias->data()[static_cast<std::size_t>(co)]);
      }
      for (int ci = 0; ci < cin; ++ci) {
        const Scalar* ip = x.data() + (static_cast<std::size_t>(n) * cin + ci) * in_plane;
        const Scalar* wp = wt.data() + (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          const int yoff = ky * geo.dilation_h - geo.pad_h;
          for (int kx = 0; kx < kw; ++kx) {
            const Scalar wv = wp[ky * kw + kx];
            const int xoff = kx * geo.dilation_w - geo.pad_w;
            for (int oy = ylo[ky]; oy < yhi[ky]; ++oy) {
              const Scalar* irow = ip + static_cast<std::size_t>(oy * sh + yoff) * xs.w;
              Scalar* orow = op + static_cast<std::size_t>(oy) * ow;
              if (sw == 1) {
                for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) {
                  orow[ox] += wv * irow[ox + xoff];
                }
              } else {
                for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) {
                  orow[ox] += wv * irow[ox * sw + xoff];
                }
              }
            }
          }
        }
      }
    }
  }

  const Data xd = share(input);
  const Data wd = share(weight);
  const bool has_bias = bias != nullptr;
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    Scalar* gx = gin[0];
    Scalar* gw = gin[1];
    Scalar* gb = has_bias ? gin[2] : nullptr;
    for (int n = 0; n < xs.n; ++n) {
      for (int co = 0; co < cout; ++co) {
        const Scalar* gp = g.data() + (static_cast<std::size_t>(n) * cout + co) * out_plane;
        if (gb != nullptr) {
          Scalar s = 0;
          for (std::size_t i = 0; i < out_plane; ++i) {
            s += gp[i];
          }
          gb[co] += s;
        }
        for (int ci = 0; ci < cin; ++ci) {
          const std::size_t in_off = (static_cast<std::size_t>(n) * cin + ci) * in_plane;
          const Scalar* ip = xd->data() + in_off;
          const std::size_t w_off = (static_cast<std::size_t>(co) * cin + ci) * kh * kw;
          const Scalar* wp = wd->data() + w_off;
          for (int ky = 0; ky < kh; ++ky) {
            const int yoff = ky * geo.dilation_h - geo.pad_h;
            for (int kx = 0; kx < kw; ++kx) {
              const int xoff = kx * geo.dilation_w - geo.pad_w;
              const Scalar wv = wp[ky * kw + kx];
              Scalar acc = 0;
              for (int oy = ylo[ky]; oy < yhi[ky]; ++oy) {
                const std::size_t irow = static_cast<std::size_t>(oy * sh + yoff) * xs.w;
                const Scalar* grow = gp + static_cast<std::size_t>(oy) * ow;
                if (gx != nullptr) {
                  Scalar* gxrow = gx + in_off + irow;
                  for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) {
                    gxrow[ox * sw + xoff] += wv * grow[ox];
                  }
                }
                if (gw != nullptr) {
                  const Scalar* xrow = ip + irow;
                  for (int ox = xlo[kx]; ox < xhi[kx]; ++ox) {
                    acc += grow[ox] * xrow[ox * sw + xoff];
                  }
                }
              }
              if (gw != nullptr) {
                gw[w_off + static_cast<std::size_t>(ky * kw + kx)] += acc;
              }
            }
          }
        }
      }
    }
  };
  if (bias != nullptr) {
    return detail::record(os, std::move(out), {&input, &weight, bias}, std::move(back));
  }
  return detail::record(os, std::move(out), {&input, &weight}, std::move(back));
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, int stride,
              int padding, int dilation) {
  return conv2d(input, weight, bias, ConvGeometry::uniform(stride, padding, dilation));
}

namespace {

struct Tap {
  int i0;
  int i1;
  Scalar frac;
};

// Source taps for each destination index, half-pixel convention.
std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) {
      src = 0;
    }
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) {
      i0 = in - 1;
    }
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<Scalar>(src - i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw DegenerateShapeError("upsample_bilinear: target extents must be >= 1, got " +
                               std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  const Shape xs = input.shape();
  const Shape os{xs.n, xs.c, target_h, target_w};
  const auto ty = bilinear_taps(xs.h, target_h);
  const auto tx = bilinear_taps(xs.w, target_w);
  const auto x = input.data();
  std::vector<Scalar> out(os.numel());
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const Scalar* ip = x.data() + p * xs.plane();
    Scalar* op = out.data() + p * os.plane();
    for (int oy = 0; oy < target_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      const Scalar* r0 = ip + static_cast<std::size_t>(a.i0) * xs.w;
      const Scalar* r1 = ip + static_cast<std::size_t>(a.i1) * xs.w;
      for (int ox = 0; ox < target_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const Scalar top = r0[b.i0] * (1 - b.frac) + r0[b.i1] * b.frac;
        const Scalar bot = r1[b.i0] * (1 - b.frac) + r1[b.i1] * b.frac;
        op[static_cast<std::size_t>(oy) * target_w + ox] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    Scalar* gx = gin[0];
    for (std::size_t p = 0; p < planes; ++p) {
      Scalar* gp = gx + p * xs.plane();
      const Scalar* go = g.data() + p * os.plane();
      for (int oy = 0; oy < target_h; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        Scalar* r0 = gp + static_cast<std::size_t>(a.i0) * xs.w;
        Scalar* r1 = gp + static_cast<std::size_t>(a.i1) * xs.w;
        for (int ox = 0; ox < target_w; ++ox) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          const Scalar v = go[static_cast<std::size_t>(oy) * target_w + ox];
          const Scalar top = v * (1 - a.frac);
          const Scalar bot = v * a.frac;
          r0[b.i0] += top * (1 - b.frac);
          r0[b.i1] += top * b.frac;
          r1[b.i0] += bot * (1 - b.frac);
          r1[b.i1] += bot * b.frac;
        }
      }
    }
  };
  return detail::record(os, std::move(out), {&input}, std::move(back));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ContractError("concat_channels: no parts");
  }
  const Shape first = parts[0].shape();
  int channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ContractError("concat_channels: part " + s.str() + " does not match " + first.str() +
                          " in n, h, w");
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  std::vector<Scalar> out(os.numel());
  std::vector<int> widths;
  std::vector<const Tensor*> inputs;
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    Scalar* dst = out.data() + static_cast<std::size_t>(n) * channels * plane;
    for (const Tensor& p : parts) {
      const std::size_t block = static_cast<std::size_t>(p.shape().c) * plane;
      const Scalar* src = p.data().data() + static_cast<std::size_t>(n) * block;
      dst = std::copy(src, src + block, dst);
    }
  }
  for (const Tensor& p : parts) {
    widths.push_back(p.shape().c);
    inputs.push_back(&p);
  }
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (int n = 0; n < first.n; ++n) {
      const Scalar* src = g.data() + static_cast<std::size_t>(n) * channels * plane;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::size_t block = static_cast<std::size_t>(widths[i]) * plane;
        if (gin[i] != nullptr) {
          Scalar* dst = gin[i] + static_cast<std::size_t>(n) * block;
          for (std::size_t k = 0; k < block; ++k) {
            dst[k] += src[k];
          }
        }
        src += block;
      }
    }
  };
  return detail::record(os, std::move(out), std::span<const Tensor* const>(inputs), std::move(back));
}

Tensor matmul_batched(const Tensor& a, const Tensor& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.c != bs.c || as.w != bs.h) {
    throw ContractError("matmul_batched: cannot multiply " + as.str() + " by " + bs.str());
  }
  const int m = as.h;
  const int k = as.w;
  const int p = bs.w;
  const Shape os{as.n, as.c, m, p};
  const std::size_t batches = static_cast<std::size_t>(as.n) * as.c;
  std::vector<Scalar> out(os.numel(), Scalar(0));
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const Scalar* A = ad.data() + bi * m * k;
    const Scalar* B = bd.data() + bi * k * p;
    Scalar* C = out.data() + bi * m * p;
    for (int i = 0; i < m; ++i) {
      Scalar* crow = C + static_cast<std::size_t>(i) * p;
      for (int kk = 0; kk < k; ++kk) {
        const Scalar av = A[static_cast<std::size_t>(i) * k + kk];
        const Scalar* brow = B + static_cast<std::size_t>(kk) * p;
        for (int j = 0; j < p; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  }
  const Data A_all = share(a);
  const Data B_all = share(b);
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const Scalar* A = A_all->data() + bi * m * k;
      const Scalar* B = B_all->data() + bi * k * p;
      const Scalar* G = g.data() + bi * m * p;
      if (gin[0] != nullptr) {
        // dA = G B^T
        Scalar* gA = gin[0] + bi * m * k;
        for (int i = 0; i < m; ++i) {
          const Scalar* grow = G + static_cast<std::size_t>(i) * p;
          for (int kk = 0; kk < k; ++kk) {
            const Scalar* brow = B + static_cast<std::size_t>(kk) * p;
            Scalar s = 0;
            for (int j = 0; j < p; ++j) {
              s += grow[j] * brow[j];
            }
            gA[static_cast<std::size_t>(i) * k + kk] += s;
          }
        }
      }
      if (gin[1] != nullptr) {
        // dB = A^T G
        Scalar* gB = gin[1] + bi * k * p;
        for (int i = 0; i < m; ++i) {
          const Scalar* grow = G + static_cast<std::size_t>(i) * p;
          for (int kk = 0; kk < k; ++kk) {
            const Scalar av = A[static_cast<std::size_t>(i) * k + kk];
            Scalar* brow = gB + static_cast<std::size_t>(kk) * p;
            for (int j = 0; j < p; ++j) {
              brow[j] += av * grow[j];
            }
          }
        }
      }
    }
  };
  return detail::record(os, std::move(out), {&a, &b}, std::move(back));
}

Tensor transpose_last2(const Tensor& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, xs.w, xs.h};
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  std::vector<Scalar> out(os.numel());
  const auto d = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Scalar* ip = d.data() + p * xs.plane();
    Scalar* op = out.data() + p * xs.plane();
    for (int i = 0; i < xs.h; ++i) {
      for (int j = 0; j < xs.w; ++j) {
        op[static_cast<std::size_t>(j) * xs.h + i] = ip[static_cast<std::size_t>(i) * xs.w + j];
      }
    }
  }
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (std::size_t p = 0; p < planes; ++p) {
      Scalar* gp = gin[0] + p * xs.plane();
      const Scalar* go = g.data() + p * xs.plane();
      for (int i = 0; i < xs.h; ++i) {
        for (int j = 0; j < xs.w; ++j) {
          gp[static_cast<std::size_t>(i) * xs.w + j] += go[static_cast<std::size_t>(j) * xs.h + i];
        }
      }
    }
  };
  return detail::record(os, std::move(out), {&x}, std::move(back));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw ContractError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  BackwardFn back = [](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      gin[0][i] += g[i];
    }
  };
  return detail::record(shape, x.to_vector(), {&x}, std::move(back));
}

namespace {
thread_local BranchProbe* t_probe = nullptr;
}  // namespace

BranchProbe::BranchProbe() : hash_(1469598103934665603ULL), outer_(t_probe) { t_probe = this; }

BranchProbe::~BranchProbe() { t_probe = outer_; }

void BranchProbe::note(int branch) {
  if (t_probe != nullptr) {
    // FNV-1a step.
    t_probe->hash_ = (t_probe->hash_ ^ static_cast<std::uint64_t>(branch + 1)) * 1099511628211ULL;
  }
}

Tensor activation(const Tensor& x, Activation kind) {
  const auto d = x.data();
  std::vector<Scalar> out(d.size());
  switch (kind) {
    case Activation::relu: {
      const bool probing = t_probe != nullptr;
      for (std::size_t i = 0; i < d.size(); ++i) {
        out[i] = d[i] > 0 ? d[i] : Scalar(0);
        if (probing) {
          BranchProbe::note(d[i] > 0 ? 1 : 0);
        }
      }
      const Data xd = share(x);
      return detail::record(x.shape(), std::move(out), {&x},
                            [xd](std::span<const Scalar> g, std::span<Scalar* const> gin) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                if ((*xd)[i] > 0) {
                                  gin[0][i] += g[i];
                                }
                              }
                            });
    }
    case Activation::sigmoid: {
      for (std::size_t i = 0; i < d.size(); ++i) {
        out[i] = d[i] >= 0 ? 1 / (1 + std::exp(-d[i])) : std::exp(d[i]) / (1 + std::exp(d[i]));
      }
      const auto yd = std::make_shared<const std::vector<Scalar>>(out);
      return detail::record(x.shape(), std::move(out), {&x},
                            [yd](std::span<const Scalar> g, std::span<Scalar* const> gin) {
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                const Scalar y = (*yd)[i];
                                gin[0][i] += g[i] * y * (1 - y);
                              }
                            });
    }
    case Activation::softmax_lastdim: {
      const std::size_t len = static_cast<std::size_t>(x.shape().w);
      const std::size_t rows = d.size() / len;
      for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* in = d.data() + r * len;
        Scalar* o = out.data() + r * len;
        const Scalar mx = *std::max_element(in, in + len);
        Scalar sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
          o[j] = std::exp(in[j] - mx);
          sum += o[j];
        }
        for (std::size_t j = 0; j < len; ++j) {
          o[j] /= sum;
        }
      }
      const auto yd = std::make_shared<const std::vector<Scalar>>(out);
      return detail::record(
          x.shape(), std::move(out), {&x},
          [yd, len, rows](std::span<const Scalar> g, std::span<Scalar* const> gin) {
            for (std::size_t r = 0; r < rows; ++r) {
              const Scalar* y = yd->data() + r * len;
              const Scalar* go = g.data() + r * len;
              Scalar dot = 0;
              for (std::size_t j = 0; j < len; ++j) {
                dot += go[j] * y[j];
              }
              Scalar* gx = gin[0] + r * len;
              for (std::size_t j = 0; j < len; ++j) {
                gx[j] += y[j] * (go[j] - dot);
              }
            }
          });
    }
  }
  throw ContractError("activation: unknown kind");
}

Tensor log(const Tensor& x) {
  const auto d = x.data();
  std::vector<Scalar> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    // NaN passes through so the trainer can report it as a numeric failure.
    if (d[i] <= 0) {
      throw ContractError("log: non-positive input " + std::to_string(d[i]));
    }
    out[i] = std::log(d[i]);
  }
  const Data xd = share(x);
  return detail::record(x.shape(), std::move(out), {&x},
                        [xd](std::span<const Scalar> g, std::span<Scalar* const> gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gin[0][i] += g[i] / (*xd)[i];
                          }
                        });
}

Tensor clamp(const Tensor& x, Scalar lo, Scalar hi) {
  const auto d = x.data();
  std::vector<Scalar> out(d.size());
  const bool probing = t_probe != nullptr;
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = std::clamp(d[i], lo, hi);
    if (probing) {
      BranchProbe::note(d[i] < lo ? 0 : d[i] > hi ? 2 : 1);
    }
  }
  const Data xd = share(x);
  return detail::record(x.shape(), std::move(out), {&x},
                        [xd, lo, hi](std::span<const Scalar> g, std::span<Scalar* const> gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const Scalar v = (*xd)[i];
                            if (v >= lo && v <= hi) {
                              gin[0][i] += g[i];
                            }
                          }
                        });
}

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) {
    require_same_shape(a, b, "elementwise");
  }
  const Shape os = a_scalar ? b.shape() : a.shape();
  const std::size_t count = os.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  auto av = [&](std::size_t i) { return a_scalar ? ad[0] : ad[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? bd[0] : bd[i]; };
  std::vector<Scalar> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (kind) {
      case Elementwise::add: out[i] = av(i) + bv(i); break;
      case Elementwise::sub: out[i] = av(i) - bv(i); break;
      case Elementwise::mul: out[i] = av(i) * bv(i); break;
      case Elementwise::div: out[i] = av(i) / bv(i); break;
    }
  }
  const Data A = share(a);
  const Data B = share(b);
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    Scalar* ga = gin[0];
    Scalar* gb = gin[1];
    for (std::size_t i = 0; i < count; ++i) {
      const Scalar x = a_scalar ? (*A)[0] : (*A)[i];
      const Scalar y = b_scalar ? (*B)[0] : (*B)[i];
      Scalar da = 0;
      Scalar db = 0;
      switch (kind) {
        case Elementwise::add: da = g[i]; db = g[i]; break;
        case Elementwise::sub: da = g[i]; db = -g[i]; break;
        case Elementwise::mul: da = g[i] * y; db = g[i] * x; break;
        case Elementwise::div: da = g[i] / y; db = -g[i] * x / (y * y); break;
      }
      if (ga != nullptr) {
        ga[a_scalar ? 0 : i] += da;
      }
      if (gb != nullptr) {
        gb[b_scalar ? 0 : i] += db;
      }
    }
  };
  return detail::record(os, std::move(out), {&a, &b}, std::move(back));
}

Tensor affine(const Tensor& x, Scalar a, Scalar b) {
  const auto d = x.data();
  std::vector<Scalar> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = a * d[i] + b;
  }
  return detail::record(x.shape(), std::move(out), {&x},
                        [a](std::span<const Scalar> g, std::span<Scalar* const> gin) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            gin[0][i] += a * g[i];
                          }
                        });
}

Tensor reduce(const Tensor& x, Reduce kind, Axes axes) {
  const Shape xs = x.shape();
  if (axes == Axes::none) {
    return reshape(x, xs);
  }
  Shape os = xs;
  switch (axes) {
    case Axes::all: os = Shape{}; break;
    case Axes::spatial: os.h = 1; os.w = 1; break;
    case Axes::channel: os.c = 1; break;
    case Axes::none: break;
  }
  // Maps each input index onto its output slot.
  auto slot = [xs, axes](int n, int c, int y, int w) -> std::size_t {
    switch (axes) {
      case Axes::all: return 0;
      case Axes::spatial: return static_cast<std::size_t>(n) * xs.c + c;
      case Axes::channel:
        return (static_cast<std::size_t>(n) * xs.h + y) * xs.w + w;
      case Axes::none: break;
    }
    return 0;
  };
  const std::size_t count = xs.numel() / os.numel();
  const Scalar scale = kind == Reduce::mean ? Scalar(1) / static_cast<Scalar>(count) : Scalar(1);
  std::vector<Scalar> out(os.numel(), Scalar(0));
  const auto d = x.data();
  std::size_t i = 0;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int y = 0; y < xs.h; ++y) {
        for (int w = 0; w < xs.w; ++w) {
          out[slot(n, c, y, w)] += d[i++];
        }
      }
    }
  }
  if (kind == Reduce::mean) {
    for (Scalar& v : out) {
      v *= scale;
    }
  }
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    std::size_t j = 0;
    for (int n = 0; n < xs.n; ++n) {
      for (int c = 0; c < xs.c; ++c) {
        for (int y = 0; y < xs.h; ++y) {
          for (int w = 0; w < xs.w; ++w) {
            gin[0][j++] += g[slot(n, c, y, w)] * scale;
          }
        }
      }
    }
  };
  return detail::record(os, std::move(out), {&x}, std::move(back));
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  const Shape xs = x.shape();
  const Shape gs = gate.shape();
  if (gs != Shape{xs.n, xs.c, 1, 1}) {
    throw ContractError("scale_channels: gate " + gs.str() + " does not match " + xs.str());
  }
  const std::size_t plane = xs.plane();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  std::vector<Scalar> out(xs.numel());
  const auto d = x.data();
  const auto gd = gate.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[p * plane + i] = d[p * plane + i] * gd[p];
    }
  }
  const Data X = share(x);
  const Data G = share(gate);
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (std::size_t p = 0; p < planes; ++p) {
      Scalar s = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        if (gin[0] != nullptr) {
          gin[0][p * plane + i] += g[p * plane + i] * (*G)[p];
        }
        s += g[p * plane + i] * (*X)[p * plane + i];
      }
      if (gin[1] != nullptr) {
        gin[1][p] += s;
      }
    }
  };
  return detail::record(xs, std::move(out), {&x, &gate}, std::move(back));
}

Tensor scale_spatial(const Tensor& x, const Tensor& gate) {
  const Shape xs = x.shape();
  const Shape gs = gate.shape();
  if (gs != Shape{xs.n, 1, xs.h, xs.w}) {
    throw ContractError("scale_spatial: gate " + gs.str() + " does not match " + xs.str());
  }
  const std::size_t plane = xs.plane();
  std::vector<Scalar> out(xs.numel());
  const auto d = x.data();
  const auto gd = gate.data();
  for (int n = 0; n < xs.n; ++n) {
    const Scalar* gp = gd.data() + static_cast<std::size_t>(n) * plane;
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[off + i] = d[off + i] * gp[i];
      }
    }
  }
  const Data X = share(x);
  const Data G = share(gate);
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    for (int n = 0; n < xs.n; ++n) {
      const std::size_t goff = static_cast<std::size_t>(n) * plane;
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (gin[0] != nullptr) {
            gin[0][off + i] += g[off + i] * (*G)[goff + i];
          }
          if (gin[1] != nullptr) {
            gin[1][goff + i] += g[off + i] * (*X)[off + i];
          }
        }
      }
    }
  };
  return detail::record(xs, std::move(out), {&x, &gate}, std::move(back));
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::optional<RunningStats> running, const BatchNormOptions& opt) {
  const Shape xs = x.shape();
  const auto C = static_cast<std::size_t>(xs.c);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ContractError("batch_norm: gamma/beta " + gamma.shape().str() + "/" +
                        beta.shape().str() + " do not match channels of " + xs.str());
  }
  if (running && (running->mean.size() != C || running->var.size() != C)) {
    throw ContractError("batch_norm: running statistics have wrong length");
  }
  if (!opt.training && !running) {
    throw ContractError("batch_norm: eval mode needs running statistics");
  }
  const std::size_t plane = xs.plane();
  const std::size_t count = static_cast<std::size_t>(xs.n) * plane;
  const auto d = x.data();
  std::vector<Scalar> mean(C, 0);
  std::vector<Scalar> var(C, 0);
  if (opt.training) {
    for (std::size_t c = 0; c < C; ++c) {
      Scalar s = 0;
      for (int n = 0; n < xs.n; ++n) {
        const Scalar* p = d.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
        }
      }
      mean[c] = s / static_cast<Scalar>(count);
      Scalar v = 0;
      for (int n = 0; n < xs.n; ++n) {
        const Scalar* p = d.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const Scalar t = p[i] - mean[c];
          v += t * t;
        }
      }
      var[c] = v / static_cast<Scalar>(count);
    }
    if (running && opt.update_running) {
      for (std::size_t c = 0; c < C; ++c) {
        running->mean[c] = (1 - opt.momentum) * running->mean[c] + opt.momentum * mean[c];
        running->var[c] = (1 - opt.momentum) * running->var[c] + opt.momentum * var[c];
      }
    }
  } else {
    std::copy(running->mean.begin(), running->mean.end(), mean.begin());
    std::copy(running->var.begin(), running->var.end(), var.begin());
  }
  std::vector<Scalar> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    inv_std[c] = 1 / std::sqrt(var[c] + opt.eps);
  }
  auto xhat = std::make_shared<std::vector<Scalar>>(xs.numel());
  std::vector<Scalar> out(xs.numel());
  const auto gm = gamma.data();
  const auto bt = beta.data();
  for (int n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const Scalar h = (d[off + i] - mean[c]) * inv_std[c];
        (*xhat)[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }
  }
  const Data G = share(gamma);
  const bool training = opt.training;
  BackwardFn back = [=](std::span<const Scalar> g, std::span<Scalar* const> gin) {
    std::vector<Scalar> sum_g(C, 0);
    std::vector<Scalar> sum_gx(C, 0);
    for (int n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g[c] += g[off + i];
          sum_gx[c] += g[off + i] * (*xhat)[off + i];
        }
      }
    }
    if (gin[1] != nullptr) {
      for (std::size_t c = 0; c < C; ++c) {
        gin[1][c] += sum_gx[c];
      }
    }
    if (gin[2] != nullptr) {
      for (std::size_t c = 0; c < C; ++c) {
        gin[2][c] += sum_g[c];
      }
    }
    if (gin[0] == nullptr) {
      return;
    }
    const auto m = static_cast<Scalar>(count);
    for (int n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        const Scalar k = (*G)[c] * inv_std[c];
        for (std::size_t i = 0; i < plane; ++i) {
          if (training) {
            gin[0][off + i] +=
                k * (g[off + i] - sum_g[c] / m - (*xhat)[off + i] * sum_gx[c] / m);
          } else {
            gin[0][off + i] += k * g[off + i];
          }
        }
      }
    }
  };
  return detail::record(xs, std::move(out), {&x, &gamma, &beta}, std::move(back));
}

}  // namespace mlff::ops
