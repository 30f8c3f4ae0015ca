// SPDX-License-Identifier: Apache-2.0
//
// Acceptance harness: each numbered check prints one PASS/FAIL line. The
// process exits nonzero if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyncast/checkpoint.hpp"
#include "dyncast/dyncast.hpp"
#include "support/oracles.hpp"

using namespace dyncast;
using Split = WindowedDataset::Split;

namespace {

int g_failures = 0;

class Criterion {
  public:
    Criterion(int number, std::string title)
        : number_(number), title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}

    void expect(bool ok, const std::string& detail) {
        if (!ok) {
            failed_ = true;
            if (first_failure_.empty()) first_failure_ = detail;
        }
    }

    ~Criterion() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::printf("[%s] %2d. %s (%.1fs)%s%s\n", failed_ ? "FAIL" : "PASS", number_,
                    title_.c_str(), secs, failed_ ? " -- " : "",
                    failed_ ? first_failure_.c_str() : "");
        std::fflush(stdout);
        if (failed_) ++g_failures;
    }

  private:
    int number_;
    std::string title_;
    std::chrono::steady_clock::time_point start_;
    bool failed_ = false;
    std::string first_failure_;
};

WindowedDataset smoke_dataset(std::size_t input_len, std::size_t horizon,
                              std::size_t length = 2400, std::uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.length = length;
    spec.channels = 1;
    spec.components = {{{24.0, 1.0, 0.0}, {96.0, 1.0, 0.0}}};
    spec.noise_std = 0.1;
    spec.seed = seed;
    return split_and_standardize(generate_synthetic(spec), SplitRatios{0.7, 0.1, 0.2},
                                 input_len, horizon);
}

// ---- 1. sparsity budgets hold across a real training run ----
void criterion_sparsity_budget() {
    Criterion c(1, "sparsity budgets and exploration regions hold over 1000 training steps");
    ModelConfig cfg;
    cfg.input_len = 48;
    cfg.horizon = 12;
    cfg.patch_len = 16;
    cfg.stride = 4;
    cfg.d_model = 64;
    cfg.groups = 8;
    cfg.sparse_ratio = 0.5;
    cfg.num_scales = 3;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.batch_size = 4;
    cfg.epochs = 100000;
    cfg.max_steps = 1000;
    cfg.learning_rate = 1e-3;
    cfg.seed = 11;
    ForecastModel model(cfg);
    const auto ds = smoke_dataset(cfg.input_len, cfg.horizon, 1200);

    std::size_t violations = 0, updates = 0, steps = 0;
    auto observer = [&](const StepEvent& ev, const ForecastModel& m) {
        ++steps;
        if (ev.mask_updated) ++updates;
        const DynamicLinearLayer& tok = m.tokenizer();
        for (std::size_t g = 1; g <= tok.groups(); ++g) {
            const std::size_t budget = std::size_t(
                std::floor((1.0 - cfg.sparse_ratio) *
                           double(((g * cfg.patch_len + cfg.groups - 1) / cfg.groups) *
                                  (cfg.d_model / cfg.groups))));
            if (tok.active_count(g) > budget) ++violations;
        }
        for (std::size_t p = 0; p < cfg.patch_len; ++p)
            for (std::size_t d = 0; d < cfg.d_model; ++d)
                if (tok.active(p, d) && p < tok.region_row_begin(tok.group_of_column(d)))
                    ++violations;
    };
    const TrainHistory h = train(model, ds, observer);
    c.expect(h.total_steps == 1000, "expected 1000 steps, ran " + std::to_string(h.total_steps));
    c.expect(updates > 0, "no indicator updates happened");
    c.expect(violations == 0, std::to_string(violations) + " budget/region violations");
}

// ---- 2. annealing endpoints ----
void criterion_annealing_endpoints() {
    Criterion c(2, "annealing endpoints: n(0) = floor(alpha*nnz), n(T) = 0, 100 random trials");
    auto rng = oracles::test_rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t total = 1 + rng() % 2000000;
        const double alpha = oracles::uniform(rng, 1e-3, 1.0);
        const std::size_t nnz = rng() % 1000000;
        const std::size_t start = anneal_count(0, total, alpha, nnz);
        const std::size_t expected = std::size_t(std::floor(alpha * double(nnz)));
        c.expect(start == expected, "n(0) = " + std::to_string(start) + ", expected " +
                                        std::to_string(expected));
        const std::size_t end = anneal_count(total, total, alpha, nnz);
        c.expect(end == 0, "n(T) = " + std::to_string(end) + ", expected 0");
    }
}

// ---- 3. receptive-field coverage bound ----
void criterion_trf_bound() {
    Criterion c(3, "tRF of every column stays within its group bound; ERF(16,4,3) = 28");
    c.expect(effective_receptive_field_bound(16, 4, 3) == 28,
             "effective_receptive_field_bound(16,4,3) != 28");

    DynamicLinearLayer layer(16, 64, 8, 0.5);
    std::mt19937_64 rng(5);
    layer.init_weights(rng);
    layer.init_mask(rng);
    auto check_columns = [&c, &layer] {
        const auto hists = layer.trf_histogram();
        for (std::size_t g = 1; g <= layer.groups(); ++g)
            for (const auto& [trf, count] : hists[g - 1])
                c.expect(trf <= layer.region_rows(g),
                         "group " + std::to_string(g) + " column tRF " + std::to_string(trf) +
                             " exceeds " + std::to_string(layer.region_rows(g)));
    };
    check_columns();
    PruneGrowSchedule sched{400, 1, 0.5, 0};
    auto noise = oracles::test_rng(2025);
    for (std::size_t t = 0; t < 400; ++t) {
        for (double& w : layer.weights().values)
            if (w != 0.0) w += 0.01 * oracles::uniform(noise);
        layer.prune_grow_step(t, sched, rng);
        check_columns();
    }
}

// ---- 4. end-to-end gradient check ----
void criterion_gradient_check() {
    Criterion c(4, "end-to-end analytic gradients match central differences below 1e-4");
    ModelConfig cfg;
    cfg.input_len = 32;
    cfg.horizon = 8;
    cfg.patch_len = 8;
    cfg.stride = 4;
    cfg.d_model = 8;
    cfg.groups = 2;
    cfg.sparse_ratio = 0.5;
    cfg.num_scales = 2;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.seed = 3;
    ForecastModel model(cfg);

    auto rng = oracles::test_rng(2026);
    std::vector<double> window(cfg.input_len);
    for (double& v : window) v = oracles::uniform(rng);
    TensorBuffer target({cfg.horizon, 1});
    for (double& v : target.values) v = oracles::uniform(rng);

    auto params = model.parameters();
    std::vector<TensorBuffer*> ptrs;
    for (auto& p : params) ptrs.push_back(p.tensor);
    auto loss = [&](bool with_grad) {
        Tape tape;
        std::unordered_map<const TensorBuffer*, Value> leaves;
        auto bound = model.bind(
            tape, [&leaves](const TensorBuffer& p, Value v) { leaves.emplace(&p, v); });
        Value pred = model.channel_forward_graph(tape, bound, window);
        Value l = mse_loss_graph(tape, pred, target);
        const double lv = tape.value(l).values[0];
        if (with_grad) {
            tape.backward(l);
            for (auto& p : params) {
                p.tensor->ensure_grad();
                auto g = tape.grad(leaves.at(p.tensor));
                std::copy(g.begin(), g.end(), p.tensor->grad->begin());
            }
        }
        return lv;
    };
    const double err = check_gradients(ptrs, loss, 1e-5);
    c.expect(err < 1e-4, "max relative error " + std::to_string(err));
}

// ---- 5. rotary identities ----
void criterion_rotary_identities() {
    Criterion c(5, "rotary relative-position identity (1e-10) and norm preservation (1e-12)");
    const RotaryAngles angles(8);
    auto rng = oracles::test_rng(2027);
    auto rand_vec = [&rng] {
        std::vector<double> v(8);
        for (double& x : v) x = oracles::uniform(rng, -3.0, 3.0);
        return v;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
        return acc;
    };
    for (int trial = 0; trial < 1000; ++trial) {
        const auto q = rand_vec(), k = rand_vec();
        const double a = oracles::uniform(rng, -15.0, 15.0);
        const double b = oracles::uniform(rng, -15.0, 15.0);
        const double lhs = dot(rotate(q, a, angles), rotate(k, b, angles));
        const double rhs = dot(q, rotate(k, b - a, angles));
        c.expect(std::abs(lhs - rhs) < 1e-10,
                 "relative-position identity off by " + std::to_string(std::abs(lhs - rhs)));
    }
    for (int trial = 0; trial < 1000; ++trial) {
        const auto x = rand_vec();
        const double s = oracles::uniform(rng, -15.0, 15.0);
        const double n0 = std::sqrt(dot(x, x));
        const auto y = rotate(x, s, angles);
        const double n1 = std::sqrt(dot(y, y));
        c.expect(std::abs(n0 - n1) < 1e-12, "norm drift " + std::to_string(std::abs(n0 - n1)));
    }
}

// ---- 6. pooling oracle equivalence ----
void criterion_pooling_oracle() {
    Criterion c(6, "extract_scales equals the brute-force window-max oracle on 100 instances");
    auto rng = oracles::test_rng(2028);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng() % 6;
        const std::size_t n = 1 + rng() % 29;  // frequently not divisible by the kernels
        const std::size_t k = 1 + rng() % 4;
        const TensorBuffer tokens = oracles::random_tensor(rng, {d, n});
        const ScaleSet scales = ScaleSet::powers_of_two(k);
        const MultiScaleTokens ms = extract_scales(tokens, scales);
        for (std::size_t j = 0; j < k; ++j) {
            const TensorBuffer expect = oracles::maxpool_reference(tokens, scales.kernels[j]);
            c.expect(ms.sequences[j].values == expect.values &&
                         ms.sequences[j].shape == expect.shape,
                     "scale " + std::to_string(j + 1) + " deviates from the oracle");
        }
    }
}

// ---- 7. shape ledger ----
void criterion_shape_ledger() {
    Criterion c(7, "token counts, attention length, fuse length, forward shape for 50 configs");
    auto rng = oracles::test_rng(2029);
    for (int trial = 0; trial < 50; ++trial) {
        ModelConfig cfg;
        cfg.patch_len = 4 + rng() % 13;  // 4..16
        cfg.stride = 1 + rng() % 4;      // 1..4
        cfg.input_len = cfg.patch_len + rng() % 40;
        cfg.horizon = 1 + rng() % 24;
        cfg.heads = 1 + rng() % 3;
        const std::size_t head_dim = 2 * (1 + rng() % 4);  // even
        cfg.d_model = cfg.heads * head_dim;
        cfg.groups = cfg.d_model % 2 == 0 ? 2 : 1;
        cfg.num_scales = 1 + rng() % 4;
        cfg.layers = 1;
        cfg.seed = rng();
        const std::size_t channels = 1 + rng() % 3;

        const std::size_t n = compute_num_patches(cfg.input_len, cfg.patch_len, cfg.stride);
        const ScaleSet scales = ScaleSet::powers_of_two(cfg.num_scales);
        std::size_t t_total = 0;
        for (std::size_t kernel : scales.kernels) {
            const std::size_t len = scale_length(n, kernel);
            c.expect(len == (n + kernel - 1) / kernel, "scale length formula deviates");
            t_total += len;
        }
        c.expect(multiscale_positions(n, scales).size() == t_total,
                 "concatenated attention length deviates from the sum of scale lengths");

        ForecastModel model(cfg);
        auto tokens = oracles::random_tensor(rng, {cfg.d_model, n});
        const MultiScaleTokens ms = extract_scales(tokens, scales);
        FusionStack stack = FusionStack::create(cfg.d_model, scales);
        std::mt19937_64 r2(1);
        stack.init(r2);
        const TensorBuffer fused = fuse(ms.sequences, stack, scales, n);
        c.expect(fused.shape == std::vector<std::size_t>{cfg.d_model, n},
                 "fuse output is not D x N");

        const TensorBuffer window = oracles::random_tensor(rng, {cfg.input_len, channels});
        const TensorBuffer pred = model.forward(window);
        c.expect(pred.shape == std::vector<std::size_t>{cfg.horizon, channels},
                 "forward output is not O x C");
    }
}

// Shared smoke-training configuration for criteria 8 and 9.
ModelConfig smoke_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.input_len = 96;
    cfg.horizon = 48;
    cfg.patch_len = 16;
    cfg.stride = 8;
    cfg.d_model = 16;
    cfg.groups = 8;
    cfg.sparse_ratio = 0.5;
    cfg.num_scales = 3;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 128;
    cfg.epochs = 100000;
    cfg.max_steps = 500;
    cfg.seed = seed;
    return cfg;
}

double train_smoke_arm(const ModelConfig& cfg, const WindowedDataset& ds) {
    ForecastModel model(cfg);
    // Zero-initialized head: the untrained model forecasts the instance mean.
    std::fill(model.head_weight().values.begin(), model.head_weight().values.end(), 0.0);
    return train(model, ds).best_val_mse;
}

// ---- 8. smoke training beats the naive and ridge baselines ----
void criterion_smoke_training() {
    Criterion c(8, "500-step smoke training beats last-value and ridge baselines");
    const auto ds = smoke_dataset(96, 48);

    const MetricsReport naive = compute_metrics(
        [](const TensorBuffer& in) { return oracles::naive_last_value(in, 48); }, ds,
        Split::val);

    std::vector<std::vector<double>> x, y;
    for (std::size_t w = 0; w < ds.num_windows(Split::train); ++w) {
        x.push_back(ds.input_window(Split::train, w).values);
        y.push_back(ds.target_window(Split::train, w).values);
    }
    const oracles::RidgeForecaster ridge(x, y, 1.0);
    const MetricsReport ridge_metrics = compute_metrics(
        [&ridge](const TensorBuffer& in) {
            return TensorBuffer({48, 1}, ridge.predict(in.values));
        },
        ds, Split::val);

    const double model_mse = train_smoke_arm(smoke_config(1), ds);
    std::printf("        model %.6f | naive %.6f | ridge %.6f\n", model_mse, naive.mse,
                ridge_metrics.mse);
    c.expect(model_mse < naive.mse, "model does not beat the last-value baseline");
    c.expect(model_mse < ridge_metrics.mse, "model does not beat the ridge baseline");
}

// ---- 9. ablation ordering ----
void criterion_ablation_ordering() {
    Criterion c(9, "full model (DT+MS+gRoPE) <= dense/k=1/no-PE arm, mean over 3 seeds");
    const auto ds = smoke_dataset(96, 48);
    double full_sum = 0.0, ablated_sum = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        ModelConfig full = smoke_config(seed);
        ModelConfig ablated = smoke_config(seed);
        ablated.dynamic_tokenizer = false;
        ablated.num_scales = 1;
        ablated.pe_mode = PEMode::none;
        const double full_mse = train_smoke_arm(full, ds);
        const double ablated_mse = train_smoke_arm(ablated, ds);
        std::printf("        seed %llu: full %.6f | ablated %.6f\n",
                    static_cast<unsigned long long>(seed), full_mse, ablated_mse);
        full_sum += full_mse;
        ablated_sum += ablated_mse;
    }
    c.expect(full_sum / 3.0 <= ablated_sum / 3.0,
             "mean full " + std::to_string(full_sum / 3.0) + " > mean ablated " +
                 std::to_string(ablated_sum / 3.0));
}

// ---- 10. determinism and checkpoint round trip ----
void criterion_determinism_roundtrip() {
    Criterion c(10, "seeded runs reproduce metrics; save/load keeps outputs bit-identical");
    ModelConfig cfg;
    cfg.input_len = 48;
    cfg.horizon = 12;
    cfg.d_model = 16;
    cfg.groups = 4;
    cfg.heads = 2;
    cfg.num_scales = 2;
    cfg.layers = 1;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 33;
    const auto ds = smoke_dataset(cfg.input_len, cfg.horizon, 900);

    ForecastModel a(cfg), b(cfg);
    const TrainHistory ha = train(a, ds);
    const TrainHistory hb = train(b, ds);
    c.expect(ha.epochs.size() == hb.epochs.size(), "histories have different lengths");
    for (std::size_t e = 0; e < ha.epochs.size(); ++e) {
        c.expect(ha.epochs[e].train_loss == hb.epochs[e].train_loss,
                 "train losses differ at epoch " + std::to_string(e + 1));
        c.expect(ha.epochs[e].val_mse == hb.epochs[e].val_mse,
                 "val mse differs at epoch " + std::to_string(e + 1));
    }
    const MetricsReport ma = evaluate(a, ds, Split::test);
    const MetricsReport mb = evaluate(b, ds, Split::test);
    c.expect(ma.mse == mb.mse && ma.mae == mb.mae, "test metrics differ between seeds");
    c.expect(a.tokenizer().mask() == b.tokenizer().mask(), "masks differ between runs");

    const std::string path = "acceptance_roundtrip.ckpt";
    save_checkpoint(a, path);
    ForecastModel loaded = load_checkpoint(path);
    std::remove(path.c_str());
    auto rng = oracles::test_rng(2030);
    for (int trial = 0; trial < 5; ++trial) {
        const TensorBuffer window = oracles::random_tensor(rng, {cfg.input_len, 2});
        const TensorBuffer pa = a.forward(window);
        const TensorBuffer pb = loaded.forward(window);
        c.expect(pa.values == pb.values, "forward outputs changed across save/load");
    }
}

// ---- 11. instance-norm equivariance ----
void criterion_instance_norm_equivariance() {
    Criterion c(11, "window scale/shift maps predictions identically within 1e-6");
    ModelConfig cfg;
    cfg.input_len = 48;
    cfg.horizon = 12;
    cfg.d_model = 16;
    cfg.groups = 4;
    cfg.heads = 2;
    cfg.num_scales = 2;
    cfg.layers = 1;
    cfg.seed = 44;
    ForecastModel model(cfg);
    auto rng = oracles::test_rng(2031);
    TensorBuffer window({cfg.input_len, 1});
    for (double& v : window.values) v = oracles::uniform(rng, -1.0, 1.0);
    const TensorBuffer base = model.forward(window);

    for (double scale : {0.5, 2.0, 10.0}) {
        for (double shift : {-5.0, 0.0, 7.0}) {
            TensorBuffer mapped = window;
            for (double& v : mapped.values) v = scale * v + shift;
            const TensorBuffer pred = model.forward(mapped);
            for (std::size_t t = 0; t < pred.size(); ++t) {
                const double expect = scale * base.values[t] + shift;
                const double rel =
                    std::abs(pred.values[t] - expect) / std::max(std::abs(expect), 1.0);
                c.expect(rel < 1e-6, "relative deviation " + std::to_string(rel) + " at c=" +
                                         std::to_string(scale) + ", b=" + std::to_string(shift));
            }
        }
    }
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_sparsity_budget();
    criterion_annealing_endpoints();
    criterion_trf_bound();
    criterion_gradient_check();
    criterion_rotary_identities();
    criterion_pooling_oracle();
    criterion_shape_ledger();
    criterion_smoke_training();
    criterion_ablation_ordering();
    criterion_determinism_roundtrip();
    criterion_instance_norm_equivariance();
    if (g_failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
