// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "dyncast/dataset.hpp"
#include "dyncast/model.hpp"

namespace dyncast {

struct MetricsReport {
    double mse = 0.0;
    double mae = 0.0;
    std::vector<double> mse_per_horizon;
    std::vector<double> mae_per_horizon;
    double seconds = 0.0;
    std::size_t parameter_count = 0;
    std::size_t windows = 0;
};

namespace detail {

// Order-independent accumulation for metric reductions.
class KahanSum {
  public:
    void add(double v) {
        const double y = v - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double get() const { return s_; }

  private:
    double s_ = 0.0, c_ = 0.0;
};

}  // namespace detail

// Mean MSE/MAE of `predict` over every window of a split, on the globally
// standardized scale, with a per-horizon-step breakdown.
inline MetricsReport compute_metrics(
    const std::function<TensorBuffer(const TensorBuffer&)>& predict,
    const WindowedDataset& dataset, WindowedDataset::Split split) {
    const std::size_t n_windows = dataset.num_windows(split);
    require(n_windows > 0, "cannot evaluate an empty split");
    const std::size_t horizon = dataset.horizon();
    const std::size_t channels = dataset.channels();

    std::vector<detail::KahanSum> sq_by_h(horizon), abs_by_h(horizon);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t w = 0; w < n_windows; ++w) {
        const TensorBuffer input = dataset.input_window(split, w);
        const TensorBuffer target = dataset.target_window(split, w);
        const TensorBuffer pred = predict(input);
        require(pred.same_shape(target), "predictor returned shape ", shape_str(pred.shape),
                ", expected ", shape_str(target.shape));
        for (std::size_t t = 0; t < horizon; ++t)
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = pred.at(t, c) - target.at(t, c);
                sq_by_h[t].add(d * d);
                abs_by_h[t].add(std::abs(d));
            }
    }
    const auto stop = std::chrono::steady_clock::now();

    MetricsReport report;
    report.windows = n_windows;
    report.seconds = std::chrono::duration<double>(stop - start).count();
    const double denom_per_h = static_cast<double>(n_windows * channels);
    detail::KahanSum sq_total, abs_total;
    for (std::size_t t = 0; t < horizon; ++t) {
        report.mse_per_horizon.push_back(sq_by_h[t].get() / denom_per_h);
        report.mae_per_horizon.push_back(abs_by_h[t].get() / denom_per_h);
        sq_total.add(sq_by_h[t].get());
        abs_total.add(abs_by_h[t].get());
    }
    const double denom = static_cast<double>(n_windows * channels * horizon);
    report.mse = sq_total.get() / denom;
    report.mae = abs_total.get() / denom;
    return report;
}

inline MetricsReport evaluate(const ForecastModel& model, const WindowedDataset& dataset,
                              WindowedDataset::Split split) {
    require(dataset.input_len() == model.config().input_len &&
                dataset.horizon() == model.config().horizon,
            "dataset windows (I=", dataset.input_len(), ", O=", dataset.horizon(),
            ") do not match the model config (I=", model.config().input_len,
            ", O=", model.config().horizon, ")");
    MetricsReport report = compute_metrics(
        [&model](const TensorBuffer& input) { return model.forward(input); }, dataset, split);
    report.parameter_count = model.parameter_count();
    return report;
}

}  // namespace dyncast
