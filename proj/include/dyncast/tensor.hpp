// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "dyncast/common.hpp"

namespace dyncast {

// Dense row-major array of doubles with an optional gradient slot of the
// same shape. All model math runs on these.
struct TensorBuffer {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::optional<std::vector<double>> grad;

    TensorBuffer() = default;

    explicit TensorBuffer(std::vector<std::size_t> extents, double fill = 0.0)
        : shape(std::move(extents)), values(checked_product(shape), fill) {}

    TensorBuffer(std::vector<std::size_t> extents, std::vector<double> vals)
        : shape(std::move(extents)), values(std::move(vals)) {
        require(values.size() == checked_product(shape), "tensor of shape ",
                shape_str(shape), " cannot hold ", values.size(), " values");
    }

    static std::size_t checked_product(const std::vector<std::size_t>& extents) {
        std::size_t n = 1;
        for (std::size_t e : extents) {
            require(e > 0, "tensor extents must be positive, got ", shape_str(extents));
            n *= e;
        }
        return n;
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    void ensure_grad() {
        if (!grad) grad.emplace(values.size(), 0.0);
    }

    bool same_shape(const TensorBuffer& other) const { return shape == other.shape; }
};

}  // namespace dyncast
