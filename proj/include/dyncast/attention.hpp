// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "dyncast/autodiff.hpp"
#include "dyncast/rotary.hpp"

namespace dyncast {

// Position-encoding arms of the ablation grid.
enum class PEMode {
    none,   // plain dot-product attention
    rope,   // rotation by absolute token index, no group term
    grope,  // summed intra- and inter-group rotated logits
};

// One transformer layer's parameters: attention projections, position-wise
// FFN (D -> 4D -> D, GELU) and two layer-norm pairs.
struct AttentionParams {
    TensorBuffer wq, wk, wv;
    TensorBuffer ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    TensorBuffer ln1_gain, ln1_shift, ln2_gain, ln2_shift;
    std::size_t heads = 4;

    static AttentionParams create(std::size_t d_model, std::size_t heads) {
        require(heads >= 1 && d_model % heads == 0, "d_model ", d_model,
                " must be divisible by the head count ", heads);
        require((d_model / heads) % 2 == 0, "head dimension ", d_model / heads,
                " must be even for rotary encoding");
        AttentionParams p;
        p.heads = heads;
        const std::size_t hidden = 4 * d_model;
        p.wq = TensorBuffer({d_model, d_model});
        p.wk = TensorBuffer({d_model, d_model});
        p.wv = TensorBuffer({d_model, d_model});
        p.ffn_w1 = TensorBuffer({d_model, hidden});
        p.ffn_b1 = TensorBuffer({hidden});
        p.ffn_w2 = TensorBuffer({hidden, d_model});
        p.ffn_b2 = TensorBuffer({d_model});
        p.ln1_gain = TensorBuffer({d_model}, 1.0);
        p.ln1_shift = TensorBuffer({d_model});
        p.ln2_gain = TensorBuffer({d_model}, 1.0);
        p.ln2_shift = TensorBuffer({d_model});
        return p;
    }

    void init(std::mt19937_64& rng) {
        auto xavier = [&rng](TensorBuffer& w, std::size_t fan_in, std::size_t fan_out) {
            const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (double& v : w.values)
                v = (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * a;
        };
        const std::size_t d = wq.rows(), hidden = ffn_b1.size();
        xavier(wq, d, d);
        xavier(wk, d, d);
        xavier(wv, d, d);
        xavier(ffn_w1, d, hidden);
        xavier(ffn_w2, hidden, d);
    }
};

// Tape handles for one layer's parameters.
struct BoundAttention {
    Value wq, wk, wv;
    Value ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Value ln1_gain, ln1_shift, ln2_gain, ln2_shift;
    std::size_t heads = 4;
};

// Reports each parameter leaf so callers can harvest gradients after backward.
using BindHook = std::function<void(const TensorBuffer&, Value)>;

inline Value bind_param(Tape& tape, const TensorBuffer& p, const BindHook& hook) {
    Value v = tape.leaf(p);
    if (hook) hook(p, v);
    return v;
}

inline BoundAttention bind_attention(Tape& tape, const AttentionParams& p,
                                     const BindHook& hook = {}) {
    BoundAttention b;
    b.wq = bind_param(tape, p.wq, hook);
    b.wk = bind_param(tape, p.wk, hook);
    b.wv = bind_param(tape, p.wv, hook);
    b.ffn_w1 = bind_param(tape, p.ffn_w1, hook);
    b.ffn_b1 = bind_param(tape, p.ffn_b1, hook);
    b.ffn_w2 = bind_param(tape, p.ffn_w2, hook);
    b.ffn_b2 = bind_param(tape, p.ffn_b2, hook);
    b.ln1_gain = bind_param(tape, p.ln1_gain, hook);
    b.ln1_shift = bind_param(tape, p.ln1_shift, hook);
    b.ln2_gain = bind_param(tape, p.ln2_gain, hook);
    b.ln2_shift = bind_param(tape, p.ln2_shift, hook);
    b.heads = p.heads;
    return b;
}

// Per-row rotation scales for the three position-encoding modes.
struct PositionAngles {
    std::vector<double> intra;  // m / ceil(N / K_j)
    std::vector<double> inter;  // scale index j
    std::vector<double> absolute;  // concatenated row index (rope mode)
};

inline PositionAngles position_angles(const std::vector<TokenPosition>& positions) {
    PositionAngles a;
    for (std::size_t r = 0; r < positions.size(); ++r) {
        a.intra.push_back(intra_angle(positions[r]));
        a.inter.push_back(inter_angle(positions[r]));
        a.absolute.push_back(static_cast<double>(r));
    }
    return a;
}

// Group-aware attention over the concatenated multi-scale sequence
// (full bidirectional softmax, no mask, values are F * W_V with no output
// projection). Per head, queries and keys are rotated by the intra- and
// inter-group angles and the two dot-product logits are summed before the
// 1/sqrt(d_k) scaling.
inline Value group_aware_attention_graph(Tape& tape, Value tokens,
                                         const std::vector<TokenPosition>& positions,
                                         const BoundAttention& params,
                                         const RotaryAngles& rotary, PEMode mode) {
    const TensorBuffer& f = tape.value(tokens);
    require(f.rank() == 2, "attention expects T x D tokens, got ", shape_str(f.shape));
    const std::size_t t_total = f.rows(), d_model = f.cols();
    require(positions.size() == t_total, "positions (", positions.size(),
            ") are misaligned with tokens (", t_total, " rows)");
    const std::size_t heads = params.heads;
    const std::size_t head_dim = d_model / heads;
    require(rotary.dim == head_dim, "rotary table dimension ", rotary.dim,
            " does not match head dimension ", head_dim);

    const PositionAngles angles = position_angles(positions);
    const double logit_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Value q = tape.matmul(tokens, params.wq);
    Value k = tape.matmul(tokens, params.wk);
    Value v = tape.matmul(tokens, params.wv);

    std::vector<Value> head_outputs;
    for (std::size_t h = 0; h < heads; ++h) {
        Value qh = tape.slice_cols(q, h * head_dim, head_dim);
        Value kh = tape.slice_cols(k, h * head_dim, head_dim);
        Value vh = tape.slice_cols(v, h * head_dim, head_dim);

        Value logits{};
        switch (mode) {
            case PEMode::none:
                logits = tape.matmul(qh, tape.transpose(kh));
                break;
            case PEMode::rope: {
                TensorBuffer rot = rotation_angle_matrix(angles.absolute, rotary);
                Value qr = tape.rotate_pairs(qh, rot);
                Value kr = tape.rotate_pairs(kh, rot);
                logits = tape.matmul(qr, tape.transpose(kr));
                break;
            }
            case PEMode::grope: {
                TensorBuffer rot_intra = rotation_angle_matrix(angles.intra, rotary);
                TensorBuffer rot_inter = rotation_angle_matrix(angles.inter, rotary);
                Value q_intra = tape.rotate_pairs(qh, rot_intra);
                Value k_intra = tape.rotate_pairs(kh, rot_intra);
                Value q_inter = tape.rotate_pairs(qh, rot_inter);
                Value k_inter = tape.rotate_pairs(kh, rot_inter);
                logits = tape.add(tape.matmul(q_inter, tape.transpose(k_inter)),
                                  tape.matmul(q_intra, tape.transpose(k_intra)));
                break;
            }
        }
        Value attn = tape.softmax_rows(tape.scale(logits, logit_scale));
        head_outputs.push_back(tape.matmul(attn, vh));
    }
    return tape.concat_cols(head_outputs);
}

// F_{l,1} = F_{l-1} + LN(Attn(F_{l-1})); F_l = F_{l,1} + LN(FFN(F_{l,1})).
inline Value transformer_layer_graph(Tape& tape, Value tokens,
                                     const std::vector<TokenPosition>& positions,
                                     const BoundAttention& params, const RotaryAngles& rotary,
                                     PEMode mode, double ln_eps = 1e-5) {
    Value attn = group_aware_attention_graph(tape, tokens, positions, params, rotary, mode);
    Value f1 = tape.add(tokens, tape.layer_norm(attn, params.ln1_gain, params.ln1_shift, ln_eps));
    Value hidden = tape.gelu(tape.add_row_vector(tape.matmul(f1, params.ffn_w1), params.ffn_b1));
    Value ffn = tape.add_row_vector(tape.matmul(hidden, params.ffn_w2), params.ffn_b2);
    return tape.add(f1, tape.layer_norm(ffn, params.ln2_gain, params.ln2_shift, ln_eps));
}

inline TensorBuffer group_aware_attention(const TensorBuffer& tokens,
                                          const std::vector<TokenPosition>& positions,
                                          const AttentionParams& params,
                                          const RotaryAngles& rotary,
                                          PEMode mode = PEMode::grope) {
    Tape tape;
    Value leaf = tape.leaf(tokens);
    BoundAttention bound = bind_attention(tape, params);
    return tape.value(group_aware_attention_graph(tape, leaf, positions, bound, rotary, mode));
}

inline TensorBuffer transformer_layer(const TensorBuffer& tokens,
                                      const std::vector<TokenPosition>& positions,
                                      const AttentionParams& params, const RotaryAngles& rotary,
                                      PEMode mode = PEMode::grope, double ln_eps = 1e-5) {
    Tape tape;
    Value leaf = tape.leaf(tokens);
    BoundAttention bound = bind_attention(tape, params);
    return tape.value(
        transformer_layer_graph(tape, leaf, positions, bound, rotary, mode, ln_eps));
}

}  // namespace dyncast
