// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "dyncast/tensor.hpp"

namespace dyncast {

// Compares analytic gradients against central finite differences.
//
// `loss(true)` must evaluate the scalar objective and fill the grad slot of
// every parameter; `loss(false)` evaluates the objective only. Parameters are
// perturbed in place one coordinate at a time. Returns the maximum relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
inline double check_gradients(std::span<TensorBuffer* const> params,
                              const std::function<double(bool)>& loss,
                              double eps = 1e-5) {
    require(eps > 0.0, "check_gradients eps must be positive");
    loss(true);
    for (TensorBuffer* p : params)
        require(p->grad && p->grad->size() == p->values.size(),
                "check_gradients: loss(true) did not fill a gradient of shape ",
                shape_str(p->shape));

    double max_rel = 0.0;
    for (TensorBuffer* p : params) {
        for (std::size_t i = 0; i < p->values.size(); ++i) {
            const double saved = p->values[i];
            p->values[i] = saved + eps;
            const double up = loss(false);
            p->values[i] = saved - eps;
            const double down = loss(false);
            p->values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = (*p->grad)[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace dyncast
