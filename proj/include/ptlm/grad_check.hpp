#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ptlm/common.hpp"

// Finite-difference verification of analytic gradients. Works on raw double
// buffers so any loss function can be checked: callers wrap their forward
// pass in a std::function that maps a flat parameter vector to a scalar.

namespace ptlm {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central difference (f(x+h) - f(x-h)) / 2h against the supplied analytic
// gradient. Relative error uses max(|analytic|, |numeric|, denom_floor) as
// the denominator so near-zero coordinates do not blow up. The floor should
// sit at the finite-difference noise scale of the problem: double rounding
// puts an absolute error of roughly eps * |f| / h on every numeric slope, so
// a coordinate whose true gradient is below that can only be checked
// absolutely, never to a relative tolerance.
//
// order selects the stencil: 2 is the plain central difference above, 4 uses
// the five-point rule (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h whose
// truncation error falls as h^4, useful when the h^2 term of the plain rule
// is the accuracy bottleneck.
inline GradCheckResult finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, const std::vector<double>& analytic,
                                         double h = 1e-5, int order = 2,
                                         double denom_floor = 1e-8) {
    if (analytic.size() != x.size())
        throw ContractError("finite_diff_check: " + std::to_string(analytic.size()) +
                            " analytic entries for " + std::to_string(x.size()) + " coordinates");
    if (!(h > 0)) throw ContractError("finite_diff_check: step must be positive");
    if (order != 2 && order != 4) throw ContractError("finite_diff_check: order must be 2 or 4");
    if (!(denom_floor > 0))
        throw ContractError("finite_diff_check: denominator floor must be positive");

    GradCheckResult res;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        double numeric;
        if (order == 2) {
            x[i] = orig + h;
            const double fp = f(x);
            x[i] = orig - h;
            const double fm = f(x);
            numeric = (fp - fm) / (2.0 * h);
        } else {
            x[i] = orig + 2.0 * h;
            const double fp2 = f(x);
            x[i] = orig + h;
            const double fp1 = f(x);
            x[i] = orig - h;
            const double fm1 = f(x);
            x[i] = orig - 2.0 * h;
            const double fm2 = f(x);
            numeric = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
        }
        x[i] = orig;

        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), denom_floor});
        const double rel = std::fabs(analytic[i] - numeric) / denom;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
            res.worst_analytic = analytic[i];
            res.worst_numeric = numeric;
        }
    }
    return res;
}

}  // namespace ptlm
