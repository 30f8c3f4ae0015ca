// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dyncast/attention.hpp"
#include "dyncast/autodiff.hpp"
#include "dyncast/dataset.hpp"
#include "dyncast/multiscale.hpp"
#include "dyncast/tokenizer.hpp"

namespace dyncast {

struct ModelConfig {
    std::size_t input_len = 96;   // I
    std::size_t horizon = 24;     // O
    std::size_t patch_len = 16;   // P
    std::size_t stride = 4;       // S
    std::size_t d_model = 64;     // D
    std::size_t groups = 8;       // G
    double sparse_ratio = 0.5;    // SR
    std::size_t num_scales = 3;   // k
    std::size_t layers = 2;       // L
    std::size_t heads = 4;        // H

    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;  // 0: run all epochs
    double update_every_frac = 0.3;  // delta t as a fraction of iters per epoch
    double alpha = 0.5;
    std::uint64_t seed = 42;

    bool dynamic_tokenizer = true;
    PEMode pe_mode = PEMode::grope;
    MaskStrategy mask_strategy = MaskStrategy::small_magnitude;

    void validate() const {
        require(input_len >= patch_len, "input_len ", input_len,
                " must be >= patch_len ", patch_len);
        require(horizon >= 1, "horizon must be >= 1");
        require(stride >= 1, "stride must be >= 1");
        require(groups >= 1 && d_model % groups == 0, "d_model ", d_model,
                " must be divisible by groups ", groups);
        require(heads >= 1 && d_model % heads == 0, "d_model ", d_model,
                " must be divisible by heads ", heads);
        require((d_model / heads) % 2 == 0, "head dimension ", d_model / heads,
                " must be even");
        require(sparse_ratio >= 0.0 && sparse_ratio <= 1.0,
                "sparse_ratio must lie in [0, 1], got ", sparse_ratio);
        require(num_scales >= 1, "num_scales must be >= 1");
        require(layers >= 1, "layers must be >= 1");
        require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1], got ", alpha);
        require(update_every_frac > 0.0 && update_every_frac <= 1.0,
                "update_every_frac must lie in (0, 1], got ", update_every_frac);
        require(batch_size >= 1, "batch_size must be >= 1");
        require(learning_rate > 0.0, "learning_rate must be positive");
    }
};

struct ParamRef {
    std::string name;
    TensorBuffer* tensor;
};

// Mean over every element of (pred - target)^2; shapes must match.
inline double mse_loss(const TensorBuffer& pred, const TensorBuffer& target) {
    require(pred.same_shape(target), "mse_loss shape mismatch: ", shape_str(pred.shape),
            " vs ", shape_str(target.shape));
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.values[i] - target.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

inline Value mse_loss_graph(Tape& tape, Value pred, const TensorBuffer& target) {
    const TensorBuffer& p = tape.value(pred);
    require(p.same_shape(target), "mse_loss shape mismatch: ", shape_str(p.shape), " vs ",
            shape_str(target.shape));
    Value diff = tape.sub(pred, tape.leaf(target));
    return tape.scale(tape.sum_squares(diff), 1.0 / static_cast<double>(target.size()));
}

// The full forecasting pipeline: instance norm -> patchify -> dynamic sparse
// tokenizer -> hierarchical pooling -> transformer stack with gRoPE ->
// deconvolution fusion -> flatten -> linear head -> denormalize. Channels are
// forecast independently with shared weights.
class ForecastModel {
  public:
    explicit ForecastModel(ModelConfig cfg)
        : cfg_(cfg),
          patch_cfg_(PatchConfig::make(cfg.input_len, cfg.patch_len, cfg.stride)),
          scales_(ScaleSet::powers_of_two(cfg.num_scales)),
          rotary_(cfg.d_model / cfg.heads),
          tokenizer_(cfg.patch_len, cfg.d_model, cfg.groups, cfg.sparse_ratio),
          fusion_(FusionStack::create(cfg.d_model, scales_)),
          head_weight_({cfg.horizon, patch_cfg_.num_patches * cfg.d_model}),
          head_bias_({cfg.horizon}),
          rng_(cfg.seed) {
        cfg_.validate();
        positions_ = multiscale_positions(patch_cfg_.num_patches, scales_);
        for (std::size_t l = 0; l < cfg.layers; ++l)
            layers_.push_back(AttentionParams::create(cfg.d_model, cfg.heads));

        tokenizer_.init_weights(rng_);
        if (cfg.dynamic_tokenizer)
            tokenizer_.init_mask(rng_);
        else
            tokenizer_.set_dense();
        for (AttentionParams& layer : layers_) layer.init(rng_);
        fusion_.init(rng_);
        const double a = std::sqrt(6.0 / static_cast<double>(head_weight_.rows() +
                                                             head_weight_.cols()));
        for (double& w : head_weight_.values)
            w = (static_cast<double>(rng_() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * a;
    }

    const ModelConfig& config() const { return cfg_; }
    const PatchConfig& patch_config() const { return patch_cfg_; }
    const ScaleSet& scales() const { return scales_; }
    const RotaryAngles& rotary() const { return rotary_; }
    const std::vector<TokenPosition>& positions() const { return positions_; }

    DynamicLinearLayer& tokenizer() { return tokenizer_; }
    const DynamicLinearLayer& tokenizer() const { return tokenizer_; }
    FusionStack& fusion() { return fusion_; }
    const FusionStack& fusion() const { return fusion_; }
    AttentionParams& layer(std::size_t l) { return layers_.at(l); }
    TensorBuffer& head_weight() { return head_weight_; }
    TensorBuffer& head_bias() { return head_bias_; }
    std::mt19937_64& rng() { return rng_; }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        out.push_back({"tokenizer.weights", &tokenizer_.weights()});
        out.push_back({"tokenizer.bias", &tokenizer_.bias()});
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            AttentionParams& a = layers_[l];
            out.push_back({p + "wq", &a.wq});
            out.push_back({p + "wk", &a.wk});
            out.push_back({p + "wv", &a.wv});
            out.push_back({p + "ffn_w1", &a.ffn_w1});
            out.push_back({p + "ffn_b1", &a.ffn_b1});
            out.push_back({p + "ffn_w2", &a.ffn_w2});
            out.push_back({p + "ffn_b2", &a.ffn_b2});
            out.push_back({p + "ln1_gain", &a.ln1_gain});
            out.push_back({p + "ln1_shift", &a.ln1_shift});
            out.push_back({p + "ln2_gain", &a.ln2_gain});
            out.push_back({p + "ln2_shift", &a.ln2_shift});
        }
        for (std::size_t j = 0; j < fusion_.kernels.size(); ++j)
            out.push_back({"fusion.k" + std::to_string(j), &fusion_.kernels[j]});
        out.push_back({"head.weight", &head_weight_});
        out.push_back({"head.bias", &head_bias_});
        return out;
    }

    std::vector<std::pair<std::string, const TensorBuffer*>> named_parameters() const {
        auto& self = const_cast<ForecastModel&>(*this);
        std::vector<std::pair<std::string, const TensorBuffer*>> out;
        for (const ParamRef& p : self.parameters()) out.emplace_back(p.name, p.tensor);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, tensor] : named_parameters()) n += tensor->size();
        return n;
    }

    // Tape handles for every parameter.
    struct Bound {
        Value tok_weights, tok_bias;
        std::vector<BoundAttention> layers;
        std::vector<Value> fusion_kernels;
        Value head_weight, head_bias;
    };

    Bound bind(Tape& tape, const BindHook& hook = {}) const {
        Bound b;
        b.tok_weights = bind_param(tape, tokenizer_.weights(), hook);
        b.tok_bias = bind_param(tape, tokenizer_.bias(), hook);
        for (const AttentionParams& layer : layers_)
            b.layers.push_back(bind_attention(tape, layer, hook));
        for (const TensorBuffer& kernel : fusion_.kernels)
            b.fusion_kernels.push_back(bind_param(tape, kernel, hook));
        b.head_weight = bind_param(tape, head_weight_, hook);
        b.head_bias = bind_param(tape, head_bias_, hook);
        return b;
    }

    // Forecast for a single channel: returns the denormalized O x 1 prediction.
    Value channel_forward_graph(Tape& tape, const Bound& bound,
                                std::span<const double> window) const {
        require(window.size() == cfg_.input_len, "window of length ", window.size(),
                " does not match input_len ", cfg_.input_len);
        const InstanceNorm norm = instance_normalize(window);
        const std::size_t n = patch_cfg_.num_patches;

        Value patches = tape.leaf(patchify(norm.normalized, patch_cfg_));
        Value tokens = tokenizer_.forward_graph(tape, bound.tok_weights, bound.tok_bias,
                                                patches);  // D x N
        std::vector<Value> scale_seqs = extract_scales_graph(tape, tokens, scales_);

        std::vector<Value> rows;
        for (Value s : scale_seqs) rows.push_back(tape.transpose(s));
        Value f = tape.concat_rows(rows);  // T_tot x D
        for (const BoundAttention& layer : bound.layers)
            f = transformer_layer_graph(tape, f, positions_, layer, rotary_, cfg_.pe_mode);

        std::vector<Value> outputs;
        std::size_t row0 = 0;
        for (std::size_t j = 0; j < scales_.count(); ++j) {
            const std::size_t len = scale_length(n, scales_.kernels[j]);
            outputs.push_back(tape.transpose(tape.slice_rows(f, row0, len)));  // D x L_j
            row0 += len;
        }
        Value fused = fuse_graph(tape, outputs, bound.fusion_kernels, scales_, n);  // D x N

        Value flat = tape.reshape(fused, {cfg_.d_model * n, 1});
        Value pred = tape.add_col_vector(tape.matmul(bound.head_weight, flat),
                                         bound.head_bias);  // O x 1
        return tape.affine(pred, norm.std, norm.mean);
    }

    // O x C prediction for an I x C window; channels share weights.
    TensorBuffer forward(const TensorBuffer& window) const {
        require(window.rank() == 2 && window.rows() == cfg_.input_len,
                "forward expects an I x C window with I = ", cfg_.input_len, ", got ",
                shape_str(window.shape));
        const std::size_t channels = window.cols();
        Tape tape;
        const Bound bound = bind(tape);
        TensorBuffer out({cfg_.horizon, channels});
        std::vector<double> column(cfg_.input_len);
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t t = 0; t < cfg_.input_len; ++t) column[t] = window.at(t, c);
            const TensorBuffer& pred = tape.value(channel_forward_graph(tape, bound, column));
            for (std::size_t t = 0; t < cfg_.horizon; ++t) out.at(t, c) = pred.values[t];
        }
        return out;
    }

  private:
    ModelConfig cfg_;
    PatchConfig patch_cfg_;
    ScaleSet scales_;
    RotaryAngles rotary_;
    std::vector<TokenPosition> positions_;
    DynamicLinearLayer tokenizer_;
    std::vector<AttentionParams> layers_;
    FusionStack fusion_;
    TensorBuffer head_weight_, head_bias_;
    std::mt19937_64 rng_;
};

}  // namespace dyncast
