#pragma once

// Finite-difference gradient oracle shared by the test suites. It only sees
// a loss as a black-box function of a tensor, so it is independent of the
// tape it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>

#include "fedlog/rng.hpp"
#include "fedlog/tensor.hpp"

namespace fedlog::testing {

using tensor::Tensor;

inline Tensor central_difference(const std::function<double(const Tensor&)>& f, Tensor x,
                                 double h = 1e-5) {
  Tensor g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Largest elementwise error, where an entry passes if it is within
/// `abs_floor` absolutely; otherwise the relative error is reported.
inline double max_rel_error(const Tensor& a, const Tensor& b, double abs_floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double diff = std::abs(a[i] - b[i]);
    if (diff <= abs_floor) continue;
    double denom = std::max(std::abs(a[i]), std::abs(b[i]));
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

}  // namespace fedlog::testing
