#pragma once

// Shared test utilities: finite-difference gradient checking and small
// numeric helpers used by both the unit suites and the acceptance runner.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "topnav/nn.hpp"

namespace testutil {

using topnav::nn::Vec;

/// Relative discrepancy used by every gradient check: symmetric, and floored
/// so that near-zero pairs compare absolutely.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct FdReport {
    double worst_rel = 0.0;
    int checked = 0;
};

/// One central-difference estimate of df/dp[i] at step h.
inline double fd_at(const std::function<double()>& f, Vec& p, std::size_t i, double h) {
    const double keep = p[i];
    p[i] = keep + h;
    const double fp = f();
    p[i] = keep - h;
    const double fm = f();
    p[i] = keep;
    return (fp - fm) / (2.0 * h);
}

/// Central finite differences on f over the given parameter arrays, compared
/// against the analytic gradients in `grads` (parallel to `params`).
/// `stride` > 1 subsamples indices for large arrays. h = 1e-5 per the repo's
/// double-precision convention.
inline FdReport fd_check(const std::function<double()>& f,
                         const std::vector<Vec*>& params,
                         const std::vector<const Vec*>& grads,
                         int stride = 1, double h = 1e-5) {
    FdReport rep;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Vec& p = *params[k];
        const Vec& g = *grads[k];
        for (std::size_t i = 0; i < p.size(); i += stride) {
            rep.worst_rel = std::max(rep.worst_rel, rel_err(fd_at(f, p, i, h), g[i]));
            ++rep.checked;
        }
    }
    return rep;
}

/// fd_check with a fallback step: an entry is scored by the better of
/// h = 1e-5 and h = 1e-6. The larger step occasionally straddles a
/// leaky-ReLU kink (biased estimate) while the smaller one loses
/// tiny-magnitude gradients to cancellation noise; a genuinely wrong
/// analytic gradient fails at both.
inline FdReport fd_check_robust(const std::function<double()>& f,
                                const std::vector<Vec*>& params,
                                const std::vector<const Vec*>& grads, int stride = 1,
                                double tol = 1e-4) {
    FdReport rep;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Vec& p = *params[k];
        const Vec& g = *grads[k];
        for (std::size_t i = 0; i < p.size(); i += stride) {
            double r = rel_err(fd_at(f, p, i, 1e-5), g[i]);
            if (r >= tol) r = std::min(r, rel_err(fd_at(f, p, i, 1e-6), g[i]));
            rep.worst_rel = std::max(rep.worst_rel, r);
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace testutil
