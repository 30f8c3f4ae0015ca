// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "dyncast/metrics.hpp"
#include "dyncast/model.hpp"

namespace dyncast {

// Adam with bias correction. State entries can be reset individually when the
// sparse mask changes, so reactivated weights restart from clean moments.
class AdamOptimizer {
  public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<const ParamRef> params) {
        if (m_.empty()) {
            for (const ParamRef& p : params) {
                m_.emplace_back(p.tensor->size(), 0.0);
                v_.emplace_back(p.tensor->size(), 0.0);
            }
        }
        require(m_.size() == params.size(), "optimizer was initialized for ", m_.size(),
                " parameters, got ", params.size());
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            TensorBuffer& p = *params[i].tensor;
            require(p.grad && p.grad->size() == p.size(), "parameter ", params[i].name,
                    " has no gradient");
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = (*p.grad)[j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p.values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void reset_entries(std::size_t param_index, std::span<const std::size_t> indices) {
        if (m_.empty()) return;
        for (std::size_t j : indices) {
            m_.at(param_index)[j] = 0.0;
            v_.at(param_index)[j] = 0.0;
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_mse = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t total_steps = 0;
    std::size_t planned_steps = 0;
    double best_val_mse = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    double seconds = 0.0;
};

struct StepEvent {
    std::size_t step = 0;  // 1-based global step
    double loss = 0.0;
    bool mask_updated = false;
};

using StepObserver = std::function<void(const StepEvent&, const ForecastModel&)>;

namespace detail {

struct ModelSnapshot {
    std::vector<std::vector<double>> params;
    std::vector<std::uint8_t> mask;
    bool dense = false;

    static ModelSnapshot capture(ForecastModel& model) {
        ModelSnapshot s;
        for (const ParamRef& p : model.parameters()) s.params.push_back(p.tensor->values);
        s.mask = model.tokenizer().mask();
        s.dense = model.tokenizer().dense();
        return s;
    }

    void restore(ForecastModel& model) const {
        auto params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].tensor->values = this->params[i];
        model.tokenizer().set_mask(mask, dense);
    }
};

}  // namespace detail

// Delta t = floor(update_every_frac * iters_per_epoch), at least 1.
inline std::size_t prune_update_interval(const ModelConfig& cfg, std::size_t iters_per_epoch) {
    const double raw = std::floor(cfg.update_every_frac * static_cast<double>(iters_per_epoch));
    return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

// Adam on all dense parameters plus the active sparse weights, interleaved
// with indicator prune/grow updates every delta-t steps. Returns the model at
// its best-validation checkpoint.
inline TrainHistory train(ForecastModel& model, const WindowedDataset& dataset,
                          const StepObserver& observer = {}) {
    const ModelConfig& cfg = model.config();
    require(dataset.input_len() == cfg.input_len && dataset.horizon() == cfg.horizon,
            "dataset windows do not match the model config");
    require(dataset.num_windows(WindowedDataset::Split::train) > 0,
            "train split has no windows");
    require(dataset.num_windows(WindowedDataset::Split::val) > 0, "val split has no windows");

    TrainHistory history;
    if (cfg.epochs == 0) return history;

    const auto t_start = std::chrono::steady_clock::now();

    // Channel independence: every (window, channel) pair is one sample.
    const std::size_t n_windows = dataset.num_windows(WindowedDataset::Split::train);
    const std::size_t channels = dataset.channels();
    std::vector<std::pair<std::size_t, std::size_t>> samples;
    samples.reserve(n_windows * channels);
    for (std::size_t w = 0; w < n_windows; ++w)
        for (std::size_t c = 0; c < channels; ++c) samples.emplace_back(w, c);

    const std::size_t iters_per_epoch =
        (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t planned = cfg.epochs * iters_per_epoch;
    if (cfg.max_steps > 0) planned = std::min(planned, cfg.max_steps);
    history.planned_steps = planned;
    const std::size_t update_every = prune_update_interval(cfg, iters_per_epoch);
    const PruneGrowSchedule schedule{planned, update_every, cfg.alpha, cfg.seed};

    auto params = model.parameters();
    std::size_t tok_weight_index = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].name == "tokenizer.weights") tok_weight_index = i;
    AdamOptimizer optimizer(cfg.learning_rate);

    detail::ModelSnapshot best;
    bool have_best = false;
    std::mt19937_64& rng = model.rng();
    std::size_t step = 0;
    std::vector<double> window_col(cfg.input_len);

    for (std::size_t epoch = 0; epoch < cfg.epochs && step < planned; ++epoch) {
        // Seeded Fisher-Yates shuffle of the sample order.
        for (std::size_t i = samples.size(); i > 1; --i)
            std::swap(samples[i - 1], samples[uniform_index(rng, 0, i - 1)]);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t batch0 = 0; batch0 < samples.size() && step < planned;
             batch0 += cfg.batch_size) {
            const std::size_t batch_end = std::min(samples.size(), batch0 + cfg.batch_size);

            Tape tape;
            std::unordered_map<const TensorBuffer*, Value> leaves;
            const ForecastModel::Bound bound =
                model.bind(tape, [&leaves](const TensorBuffer& p, Value v) {
                    leaves.emplace(&p, v);
                });

            std::vector<Value> losses;
            for (std::size_t s = batch0; s < batch_end; ++s) {
                const auto [w, c] = samples[s];
                const TensorBuffer input =
                    dataset.input_window(WindowedDataset::Split::train, w);
                const TensorBuffer target =
                    dataset.target_window(WindowedDataset::Split::train, w);
                for (std::size_t t = 0; t < cfg.input_len; ++t) window_col[t] = input.at(t, c);
                TensorBuffer target_col({cfg.horizon, 1});
                for (std::size_t t = 0; t < cfg.horizon; ++t)
                    target_col.values[t] = target.at(t, c);
                Value pred = model.channel_forward_graph(tape, bound, window_col);
                losses.push_back(mse_loss_graph(tape, pred, target_col));
            }
            Value loss = tape.scale(tape.add_scalars(losses),
                                    1.0 / static_cast<double>(losses.size()));
            const double loss_value = tape.value(loss).values[0];
            ++step;
            if (!std::isfinite(loss_value))
                throw std::runtime_error(
                    msg("training diverged: loss is not finite at step ", step));

            tape.backward(loss);
            for (const ParamRef& p : params) {
                p.tensor->ensure_grad();
                const auto grad = tape.grad(leaves.at(p.tensor));
                std::copy(grad.begin(), grad.end(), p.tensor->grad->begin());
            }
            optimizer.step(params);

            bool mask_updated = false;
            if (cfg.dynamic_tokenizer && step % update_every == 0 && step < planned) {
                const auto delta = model.tokenizer().prune_grow_step(
                    step, schedule, rng, cfg.mask_strategy,
                    &*params[tok_weight_index].tensor->grad);
                std::vector<std::size_t> touched = delta.pruned;
                touched.insert(touched.end(), delta.grown.begin(), delta.grown.end());
                optimizer.reset_entries(tok_weight_index, touched);
                mask_updated = true;
            }

            loss_sum += loss_value;
            ++loss_count;
            if (observer) observer(StepEvent{step, loss_value, mask_updated}, model);
        }

        const MetricsReport val =
            evaluate(model, dataset, WindowedDataset::Split::val);
        history.epochs.push_back({loss_sum / static_cast<double>(loss_count), val.mse});
        if (val.mse < history.best_val_mse) {
            history.best_val_mse = val.mse;
            history.best_epoch = history.epochs.size() - 1;
            best = detail::ModelSnapshot::capture(model);
            have_best = true;
        }
    }

    if (have_best) best.restore(model);
    history.total_steps = step;
    history.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return history;
}

}  // namespace dyncast
