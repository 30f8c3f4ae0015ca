// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dyncast/multiscale.hpp"
#include "dyncast/tensor.hpp"

namespace dyncast {

// Rotation frequency table theta_i = 10000^(-2(i-1)/d), i = 1..d/2. Intra- and
// inter-group rotations share one instance per head dimension.
struct RotaryAngles {
    std::size_t dim;
    std::vector<double> theta;

    explicit RotaryAngles(std::size_t d) : dim(d) {
        require(d >= 2 && d % 2 == 0, "rotary dimension must be even and >= 2, got ", d);
        for (std::size_t i = 1; i <= d / 2; ++i)
            theta.push_back(std::pow(10000.0, -2.0 * static_cast<double>(i - 1) /
                                                   static_cast<double>(d)));
    }
};

// Rotates consecutive pairs (x_{2i}, x_{2i+1}) by angle_scale * theta_i.
// Norm-preserving.
inline std::vector<double> rotate(std::span<const double> x, double angle_scale,
                                  const RotaryAngles& angles) {
    require(x.size() == angles.dim, "rotate: vector of length ", x.size(),
            " does not match rotary dimension ", angles.dim);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < angles.dim / 2; ++i) {
        const double a = angle_scale * angles.theta[i];
        const double c = std::cos(a), s = std::sin(a);
        out[2 * i] = c * x[2 * i] - s * x[2 * i + 1];
        out[2 * i + 1] = s * x[2 * i] + c * x[2 * i + 1];
    }
    return out;
}

// Within-group angle scale: relative position m / ceil(N / K_j), in [0, 1).
inline double intra_angle(const TokenPosition& pos) {
    require(pos.group_len >= 1 && pos.pos < pos.group_len, "invalid token position");
    return static_cast<double>(pos.pos) / static_cast<double>(pos.group_len);
}

// Across-group angle scale: the 1-based scale index.
inline double inter_angle(const TokenPosition& pos) {
    require(pos.scale_index >= 1, "invalid token position");
    return static_cast<double>(pos.scale_index);
}

// Angle matrix for Tape::rotate_pairs: entry (r, i) = scales[r] * theta_i.
inline TensorBuffer rotation_angle_matrix(std::span<const double> row_scales,
                                          const RotaryAngles& angles) {
    const std::size_t half = angles.dim / 2;
    TensorBuffer out({row_scales.size(), half});
    for (std::size_t r = 0; r < row_scales.size(); ++r)
        for (std::size_t i = 0; i < half; ++i)
            out.values[r * half + i] = row_scales[r] * angles.theta[i];
    return out;
}

}  // namespace dyncast
