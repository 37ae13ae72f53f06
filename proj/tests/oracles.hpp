#pragma once

// Test-only oracles, kept independent of the library's execution paths:
// a direct-loop convolution and a central finite-difference harness.

#include <cmath>
#include <functional>
#include <vector>

#include "vrap/tensor.hpp"

namespace vrap::testing {

// Direct quadruple-loop cross-correlation, no im2col, no GEMM.
inline std::vector<float> conv2d_direct(
    const std::vector<float>& x, int n, int cin, int h, int w,
    const std::vector<float>& k, int cout, int kh, int kw,
    const std::vector<float>& bias, int stride, int pad) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<float> out(static_cast<size_t>(n) * cout * oh * ow, 0.0f);
  for (int bi = 0; bi < n; ++bi)
    for (int oc = 0; oc < cout; ++oc)
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          float acc = bias[oc];
          for (int ic = 0; ic < cin; ++ic)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const int si = oi * stride + ki - pad;
                const int sj = oj * stride + kj - pad;
                if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
                acc += x[((static_cast<size_t>(bi) * cin + ic) * h + si) * w + sj] *
                       k[((static_cast<size_t>(oc) * cin + ic) * kh + ki) * kw + kj];
              }
          out[((static_cast<size_t>(bi) * cout + oc) * oh + oi) * ow + oj] = acc;
        }
  return out;
}

struct FdResult {
  int total = 0;
  int passed = 0;
  double pass_rate() const { return total == 0 ? 1.0 : double(passed) / total; }
};

// Central finite differences on `param` against an already-populated autodiff
// gradient. `loss_fn` must recompute the forward pass (no tape) from the
// current parameter values.
inline FdResult fd_compare(const std::function<double()>& loss_fn,
                           const Tensor& param,
                           const std::vector<float>& autodiff_grad,
                           float eps = 1e-3f, double rel_tol = 1e-2,
                           double abs_floor = 1e-4) {
  FdResult res;
  for (size_t i = 0; i < param->values.size(); ++i) {
    const float keep = param->values[i];
    param->values[i] = keep + eps;
    const double lp = loss_fn();
    param->values[i] = keep - eps;
    const double lm = loss_fn();
    param->values[i] = keep;
    const double fd = (lp - lm) / (2.0 * eps);
    const double ad = autodiff_grad[i];
    const double err = std::abs(ad - fd);
    const bool ok =
        err <= abs_floor || err <= rel_tol * std::max(std::abs(ad), std::abs(fd));
    res.total++;
    if (ok) res.passed++;
  }
  return res;
}

}  // namespace vrap::testing
