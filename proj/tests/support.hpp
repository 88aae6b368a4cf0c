// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests: random tensors and a central-difference
// gradient checker independent of the library's own gradcheck.

#ifndef MLFF_TESTS_SUPPORT_HPP
#define MLFF_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mlff/ops.hpp"
#include "mlff/tensor.hpp"

namespace mlff::test {

inline std::vector<Scalar> random_values(std::size_t n, std::mt19937_64& gen, double lo = -1,
                                         double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Scalar> v(n);
  for (Scalar& x : v) {
    x = static_cast<Scalar>(d(gen));
  }
  return v;
}

inline Tensor random_tensor(Shape s, std::mt19937_64& gen, double lo = -1, double hi = 1) {
  return Tensor(s, random_values(s.numel(), gen, lo, hi));
}

inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using GraphFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Reduces f(inputs) to a scalar with fixed random weights, then compares the
/// tape gradient of every input element against central differences.
/// Returns the largest relative error.
inline double max_gradient_error(const GraphFn& f, const std::vector<Tensor>& inputs,
                                 std::uint64_t seed, double h = 1e-5, double floor = 1e-6) {
  std::mt19937_64 gen(seed);
  Tensor probe_out = f(inputs);
  const std::vector<Scalar> weights = random_values(probe_out.numel(), gen, 0.5, 1.5);
  const Shape ws = probe_out.shape();

  const auto scalar_loss = [&](const std::vector<Tensor>& xs) {
    const Tensor out = f(xs);
    return ops::reduce(ops::mul(out, Tensor(ws, weights)), ops::Reduce::sum, ops::Axes::all);
  };

  Tape tape;
  std::vector<Tensor> leaves;
  for (const Tensor& x : inputs) {
    leaves.push_back(tape.leaf(x));
  }
  tape.backward(scalar_loss(leaves));

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<Scalar> analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      std::vector<Tensor> plus = inputs;
      std::vector<Tensor> minus = inputs;
      std::vector<Scalar> vp = inputs[k].to_vector();
      std::vector<Scalar> vm = vp;
      vp[i] += static_cast<Scalar>(h);
      vm[i] -= static_cast<Scalar>(h);
      plus[k] = Tensor(inputs[k].shape(), vp);
      minus[k] = Tensor(inputs[k].shape(), vm);
      const double numeric =
          (static_cast<double>(scalar_loss(plus).item()) - scalar_loss(minus).item()) / (2 * h);
      worst = std::max(worst, rel_error(analytic[i], numeric, floor));
    }
  }
  return worst;
}

/// Single-image map [1,1,h,w] from row-major values.
inline Tensor map2d(int h, int w, std::vector<Scalar> v) {
  return Tensor(Shape{1, 1, h, w}, std::move(v));
}

}  // namespace mlff::test

#endif  // MLFF_TESTS_SUPPORT_HPP
