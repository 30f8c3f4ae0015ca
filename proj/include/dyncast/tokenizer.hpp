// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "dyncast/autodiff.hpp"
#include "dyncast/tensor.hpp"

namespace dyncast {

// N = floor((I - P) / S) + 2. The extra patch comes from end padding.
inline std::size_t compute_num_patches(std::size_t input_len, std::size_t patch_len,
                                       std::size_t stride) {
    require(stride >= 1, "patch stride must be >= 1");
    require(input_len >= patch_len, "input length ", input_len,
            " is shorter than patch length ", patch_len);
    return (input_len - patch_len) / stride + 2;
}

struct PatchConfig {
    std::size_t input_len = 96;
    std::size_t patch_len = 16;
    std::size_t stride = 4;
    std::size_t num_patches = 0;

    static PatchConfig make(std::size_t input_len, std::size_t patch_len, std::size_t stride) {
        return PatchConfig{input_len, patch_len, stride,
                           compute_num_patches(input_len, patch_len, stride)};
    }
};

// Pads x at the end with `stride` copies of its last value, then takes
// length-P windows at the configured stride. Output is P x N, one patch per
// column.
inline TensorBuffer patchify(std::span<const double> x, const PatchConfig& cfg) {
    require(x.size() == cfg.input_len, "patchify: input of length ", x.size(),
            " does not match the configured input length ", cfg.input_len);
    std::vector<double> padded(x.begin(), x.end());
    padded.resize(x.size() + cfg.stride, x.back());
    TensorBuffer out({cfg.patch_len, cfg.num_patches});
    for (std::size_t n = 0; n < cfg.num_patches; ++n)
        for (std::size_t p = 0; p < cfg.patch_len; ++p)
            out.at(p, n) = padded[n * cfg.stride + p];
    return out;
}

// Inclusive span between the first and last active entries of one mask
// column; 0 when the column is all zero.
inline std::size_t token_receptive_field(std::span<const std::uint8_t> mask_column) {
    std::size_t first = mask_column.size(), last = 0;
    bool any = false;
    for (std::size_t i = 0; i < mask_column.size(); ++i) {
        if (mask_column[i]) {
            if (!any) first = i;
            last = i;
            any = true;
        }
    }
    return any ? last - first + 1 : 0;
}

struct PruneGrowSchedule {
    std::size_t total_iters = 0;   // T
    std::size_t update_every = 1;  // delta t
    double alpha = 0.5;
    std::uint64_t seed = 0;
};

// Cosine-annealed prune count: floor((alpha/2) * (1 + cos(t*pi/T)) * nnz).
inline std::size_t anneal_count(std::size_t t, std::size_t total_iters, double alpha,
                                std::size_t active_count) {
    require(t <= total_iters, "anneal_count: t ", t, " exceeds T ", total_iters);
    require(alpha > 0.0 && alpha <= 1.0, "anneal_count: alpha must be in (0, 1]");
    if (total_iters == 0) return 0;
    const double angle = static_cast<double>(t) * std::numbers::pi_v<double> /
                         static_cast<double>(total_iters);
    const double n = (alpha / 2.0) * (1.0 + std::cos(angle)) *
                     static_cast<double>(active_count);
    return static_cast<std::size_t>(std::floor(n));
}

enum class MaskStrategy { small_magnitude, large_magnitude, magnitude_gradient };

// Patch-to-embedding linear map with a trainable binary indicator mask.
//
// Columns (embedding dimensions) are split into G equal groups; group g
// (1-based) may only activate weights in the last ceil(g*P/G) patch rows and
// holds at most floor((1-SR) * ceil(g*P/G) * D/G) active entries. Masked
// weight values are kept at exactly 0.
class DynamicLinearLayer {
  public:
    DynamicLinearLayer(std::size_t patch_len, std::size_t d_model, std::size_t groups,
                       double sparse_ratio)
        : patch_len_(patch_len),
          d_model_(d_model),
          groups_(groups),
          sparse_ratio_(sparse_ratio),
          weights_({patch_len, d_model}),
          bias_({d_model}),
          mask_(patch_len * d_model, 0) {
        require(groups >= 1 && d_model % groups == 0, "d_model ", d_model,
                " must be divisible by the group count ", groups);
        require(sparse_ratio >= 0.0 && sparse_ratio <= 1.0,
                "sparse_ratio must lie in [0, 1], got ", sparse_ratio);
    }

    std::size_t patch_len() const { return patch_len_; }
    std::size_t d_model() const { return d_model_; }
    std::size_t groups() const { return groups_; }
    double sparse_ratio() const { return sparse_ratio_; }
    std::size_t group_width() const { return d_model_ / groups_; }

    // Rows the 1-based group g may activate: the last ceil(g*P/G).
    std::size_t region_rows(std::size_t g) const {
        return (g * patch_len_ + groups_ - 1) / groups_;
    }
    std::size_t region_row_begin(std::size_t g) const { return patch_len_ - region_rows(g); }

    std::size_t group_budget(std::size_t g) const {
        return static_cast<std::size_t>(
            std::floor((1.0 - sparse_ratio_) *
                       static_cast<double>(region_rows(g) * group_width())));
    }

    std::size_t group_of_column(std::size_t d) const { return d / group_width() + 1; }

    TensorBuffer& weights() { return weights_; }
    const TensorBuffer& weights() const { return weights_; }
    TensorBuffer& bias() { return bias_; }
    const TensorBuffer& bias() const { return bias_; }
    const std::vector<std::uint8_t>& mask() const { return mask_; }

    bool active(std::size_t p, std::size_t d) const { return mask_[p * d_model_ + d] != 0; }

    // Replaces the indicator wholesale (snapshot restore, checkpoint load).
    void set_mask(std::vector<std::uint8_t> m, bool dense) {
        require(m.size() == mask_.size(), "mask of size ", m.size(), " does not fit a ",
                patch_len_, " x ", d_model_, " layer");
        mask_ = std::move(m);
        dense_ = dense;
    }

    std::size_t active_count(std::size_t g) const {
        std::size_t n = 0;
        for (std::size_t d = (g - 1) * group_width(); d < g * group_width(); ++d)
            for (std::size_t p = 0; p < patch_len_; ++p) n += mask_[p * d_model_ + d];
        return n;
    }

    std::size_t total_active() const {
        std::size_t n = 0;
        for (std::uint8_t b : mask_) n += b;
        return n;
    }

    // Dense-tokenizer ablation: every weight active, no budgets enforced.
    void set_dense() {
        std::fill(mask_.begin(), mask_.end(), std::uint8_t{1});
        dense_ = true;
    }
    bool dense() const { return dense_; }

    void init_weights(std::mt19937_64& rng) {
        const double a = std::sqrt(6.0 / static_cast<double>(patch_len_ + d_model_));
        for (double& w : weights_.values) w = (uniform01(rng) * 2.0 - 1.0) * a;
        std::fill(bias_.values.begin(), bias_.values.end(), 0.0);
    }

    // Activates exactly group_budget(g) uniformly random positions inside each
    // group's exploration region; weights outside the active set are zeroed.
    void init_mask(std::mt19937_64& rng) {
        std::fill(mask_.begin(), mask_.end(), std::uint8_t{0});
        dense_ = false;
        for (std::size_t g = 1; g <= groups_; ++g) {
            std::vector<std::size_t> cells = region_cells(g);
            const std::size_t take = std::min(group_budget(g), cells.size());
            for (std::size_t i = 0; i < take; ++i) {
                const std::size_t j = uniform_index(rng, i, cells.size() - 1);
                std::swap(cells[i], cells[j]);
                mask_[cells[i]] = 1;
            }
        }
        for (std::size_t i = 0; i < mask_.size(); ++i)
            if (!mask_[i]) weights_.values[i] = 0.0;
    }

    struct UpdateDelta {
        std::vector<std::size_t> pruned;  // linear indices p * D + d
        std::vector<std::size_t> grown;
    };

    // One indicator update, applied per group: deactivate the n lowest-ranked
    // active weights (rank by the masking strategy), then activate n random
    // positions that were inactive before this step, all inside the group's
    // exploration region. Grown weights start at 0; pruned values reset to 0.
    UpdateDelta prune_grow_step(std::size_t t, const PruneGrowSchedule& schedule,
                                std::mt19937_64& rng,
                                MaskStrategy strategy = MaskStrategy::small_magnitude,
                                const std::vector<double>* weight_grad = nullptr) {
        require(!dense_, "prune_grow_step is not applicable to a dense layer");
        if (strategy == MaskStrategy::magnitude_gradient)
            require(weight_grad && weight_grad->size() == weights_.size(),
                    "magnitude_gradient strategy needs the current weight gradient");
        UpdateDelta delta;
        for (std::size_t g = 1; g <= groups_; ++g) {
            const std::size_t n = anneal_count(t, schedule.total_iters, schedule.alpha,
                                               active_count(g));
            if (n == 0) continue;

            std::vector<std::size_t> actives, inactives;
            for (std::size_t cell : region_cells(g))
                (mask_[cell] ? actives : inactives).push_back(cell);

            std::stable_sort(actives.begin(), actives.end(),
                             [&](std::size_t a, std::size_t b) {
                                 return prune_key(a, strategy, weight_grad) <
                                        prune_key(b, strategy, weight_grad);
                             });
            const std::size_t prune_n = std::min(n, actives.size());
            for (std::size_t i = 0; i < prune_n; ++i) {
                mask_[actives[i]] = 0;
                weights_.values[actives[i]] = 0.0;
                delta.pruned.push_back(actives[i]);
            }

            const std::size_t grow_n = std::min(n, inactives.size());
            for (std::size_t i = 0; i < grow_n; ++i) {
                const std::size_t j = uniform_index(rng, i, inactives.size() - 1);
                std::swap(inactives[i], inactives[j]);
                mask_[inactives[i]] = 1;
                weights_.values[inactives[i]] = 0.0;
                delta.grown.push_back(inactives[i]);
            }
        }
        return delta;
    }

    // Per-group histogram of column receptive fields: hist[g - 1][trf] = count.
    std::vector<std::map<std::size_t, std::size_t>> trf_histogram() const {
        std::vector<std::map<std::size_t, std::size_t>> hist(groups_);
        std::vector<std::uint8_t> column(patch_len_);
        for (std::size_t d = 0; d < d_model_; ++d) {
            for (std::size_t p = 0; p < patch_len_; ++p) column[p] = mask_[p * d_model_ + d];
            ++hist[group_of_column(d) - 1][token_receptive_field(column)];
        }
        return hist;
    }

    // Throws if any structural invariant is violated.
    void check_invariants() const {
        if (dense_) return;
        for (std::size_t g = 1; g <= groups_; ++g)
            require(active_count(g) <= group_budget(g), "group ", g, " active count ",
                    active_count(g), " exceeds budget ", group_budget(g));
        for (std::size_t p = 0; p < patch_len_; ++p)
            for (std::size_t d = 0; d < d_model_; ++d) {
                const std::size_t i = p * d_model_ + d;
                if (mask_[i])
                    require(p >= region_row_begin(group_of_column(d)), "active weight at row ",
                            p, ", column ", d, " lies outside its exploration region");
                else
                    require(weights_.values[i] == 0.0, "masked weight at row ", p, ", column ",
                            d, " has nonzero value ", weights_.values[i]);
            }
    }

    // Token embeddings: (masked weights)^T * patches + bias, D x N.
    TensorBuffer forward(const TensorBuffer& patches) const {
        require(patches.rank() == 2 && patches.rows() == patch_len_,
                "dynamic forward expects patches of ", patch_len_, " rows, got ",
                shape_str(patches.shape));
        const std::size_t n = patches.cols();
        TensorBuffer out({d_model_, n});
        for (std::size_t d = 0; d < d_model_; ++d)
            for (std::size_t c = 0; c < n; ++c) {
                double acc = bias_.values[d];
                for (std::size_t p = 0; p < patch_len_; ++p)
                    if (mask_[p * d_model_ + d])
                        acc += weights_.values[p * d_model_ + d] * patches.at(p, c);
                out.at(d, c) = acc;
            }
        return out;
    }

    // Same map on the tape; the mask enters as a constant, so masked weights
    // receive zero gradient.
    Value forward_graph(Tape& tape, Value weights_leaf, Value bias_leaf, Value patches) const {
        TensorBuffer mask_values({patch_len_, d_model_});
        for (std::size_t i = 0; i < mask_.size(); ++i)
            mask_values.values[i] = static_cast<double>(mask_[i]);
        Value masked = tape.mul_const(weights_leaf, std::move(mask_values));
        Value tokens = tape.matmul(tape.transpose(masked), patches);
        return tape.add_col_vector(tokens, bias_leaf);
    }

  private:
    static double uniform01(std::mt19937_64& rng) {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;
    }

    double prune_key(std::size_t cell, MaskStrategy strategy,
                     const std::vector<double>* grad) const {
        const double w = std::abs(weights_.values[cell]);
        switch (strategy) {
            case MaskStrategy::small_magnitude: return w;
            case MaskStrategy::large_magnitude: return -w;
            case MaskStrategy::magnitude_gradient: return std::abs(weights_.values[cell] * (*grad)[cell]);
        }
        return w;
    }

    std::vector<std::size_t> region_cells(std::size_t g) const {
        std::vector<std::size_t> cells;
        cells.reserve(region_rows(g) * group_width());
        for (std::size_t p = region_row_begin(g); p < patch_len_; ++p)
            for (std::size_t d = (g - 1) * group_width(); d < g * group_width(); ++d)
                cells.push_back(p * d_model_ + d);
        return cells;
    }

    std::size_t patch_len_, d_model_, groups_;
    double sparse_ratio_;
    TensorBuffer weights_;  // P x D
    TensorBuffer bias_;     // D
    std::vector<std::uint8_t> mask_;
    bool dense_ = false;
};

}  // namespace dyncast
