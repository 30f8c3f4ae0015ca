// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "dyncast/autodiff.hpp"
#include "dyncast/tensor.hpp"

namespace dyncast {

// Pooling kernels K_j = 2^(j-1), j = 1..k.
struct ScaleSet {
    std::vector<std::size_t> kernels;

    static ScaleSet powers_of_two(std::size_t k) {
        require(k >= 1, "scale count must be >= 1");
        ScaleSet s;
        for (std::size_t j = 0; j < k; ++j) s.kernels.push_back(std::size_t{1} << j);
        return s;
    }

    std::size_t count() const { return kernels.size(); }
};

// Largest attainable token receptive field after pooling k scales:
// P + (2^(k-1) - 1) * S.
inline std::size_t effective_receptive_field_bound(std::size_t patch_len, std::size_t stride,
                                                   std::size_t k) {
    require(k >= 1, "scale count must be >= 1");
    return patch_len + ((std::size_t{1} << (k - 1)) - 1) * stride;
}

inline std::size_t scale_length(std::size_t base_len, std::size_t kernel) {
    return (base_len + kernel - 1) / kernel;  // ceil(N / K)
}

inline std::vector<std::size_t> scale_lengths(std::size_t base_len, const ScaleSet& scales) {
    std::vector<std::size_t> lens;
    for (std::size_t k : scales.kernels) lens.push_back(scale_length(base_len, k));
    return lens;
}

// Coordinates of one token in the concatenated multi-scale sequence.
struct TokenPosition {
    std::size_t scale_index = 1;  // 1-based scale (attention group) index
    std::size_t pos = 0;          // 0-based position within the scale
    std::size_t group_len = 1;    // ceil(N / K_j)
};

inline std::vector<TokenPosition> multiscale_positions(std::size_t base_len,
                                                       const ScaleSet& scales) {
    std::vector<TokenPosition> positions;
    for (std::size_t j = 0; j < scales.count(); ++j) {
        const std::size_t len = scale_length(base_len, scales.kernels[j]);
        for (std::size_t m = 0; m < len; ++m) positions.push_back({j + 1, m, len});
    }
    return positions;
}

// Per-scale token sequences plus their coordinates.
struct MultiScaleTokens {
    std::vector<TensorBuffer> sequences;  // D x ceil(N / K_j)
    std::vector<TokenPosition> positions;
    std::size_t base_len = 0;
};

// Hierarchical non-overlapping max pooling of the token sequence. Scale 1 is
// the input itself; the final partial window of coarser scales is padded with
// -inf so padding never wins the max.
inline std::vector<Value> extract_scales_graph(Tape& tape, Value tokens,
                                               const ScaleSet& scales) {
    std::vector<Value> out;
    for (std::size_t k : scales.kernels)
        out.push_back(k == 1 ? tokens : tape.maxpool_1d(tokens, k));
    return out;
}

inline MultiScaleTokens extract_scales(const TensorBuffer& tokens, const ScaleSet& scales) {
    require(tokens.rank() == 2 && tokens.cols() >= 1, "extract_scales expects D x N tokens");
    Tape tape;
    Value leaf = tape.leaf(tokens);
    MultiScaleTokens out;
    out.base_len = tokens.cols();
    for (Value v : extract_scales_graph(tape, leaf, scales))
        out.sequences.push_back(tape.value(v));
    out.positions = multiscale_positions(tokens.cols(), scales);
    return out;
}

// Learnable per-scale transposed-convolution kernels (D x D x K_j each).
struct FusionStack {
    std::vector<TensorBuffer> kernels;

    static FusionStack create(std::size_t d_model, const ScaleSet& scales) {
        FusionStack stack;
        for (std::size_t k : scales.kernels)
            stack.kernels.emplace_back(std::vector<std::size_t>{d_model, d_model, k});
        return stack;
    }

    void init(std::mt19937_64& rng) {
        for (TensorBuffer& kernel : kernels) {
            const double a = std::sqrt(6.0 / static_cast<double>(kernel.shape[0] + kernel.shape[1]));
            for (double& w : kernel.values)
                w = (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * a;
        }
    }
};

// Upsamples each scale back to the base length with its stride-K transposed
// convolution, trims the trailing overshoot (K_j * ceil(N/K_j) >= N), and sums
// the scales.
inline Value fuse_graph(Tape& tape, std::span<const Value> per_scale,
                        std::span<const Value> kernel_leaves, const ScaleSet& scales,
                        std::size_t base_len) {
    require(per_scale.size() == scales.count() && kernel_leaves.size() == scales.count(),
            "fuse: expected ", scales.count(), " scales, got ", per_scale.size(),
            " sequences and ", kernel_leaves.size(), " kernels");
    Value acc{};
    for (std::size_t j = 0; j < scales.count(); ++j) {
        const std::size_t k = scales.kernels[j];
        const std::size_t expect = scale_length(base_len, k);
        require(tape.value(per_scale[j]).cols() == expect, "fuse: scale ", j + 1,
                " has length ", tape.value(per_scale[j]).cols(), ", expected ", expect);
        Value up = tape.conv_transpose_1d(per_scale[j], kernel_leaves[j], k);
        if (tape.value(up).cols() > base_len) up = tape.slice_cols(up, 0, base_len);
        acc = acc.valid() ? tape.add(acc, up) : up;
    }
    return acc;
}

inline TensorBuffer fuse(const std::vector<TensorBuffer>& outputs, const FusionStack& stack,
                         const ScaleSet& scales, std::size_t base_len) {
    Tape tape;
    std::vector<Value> seq_leaves, kernel_leaves;
    for (const TensorBuffer& seq : outputs) seq_leaves.push_back(tape.leaf(seq));
    for (const TensorBuffer& kernel : stack.kernels) kernel_leaves.push_back(tape.leaf(kernel));
    return tape.value(fuse_graph(tape, seq_leaves, kernel_leaves, scales, base_len));
}

}  // namespace dyncast
