// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dyncast/tensor.hpp"

namespace dyncast {

// Multivariate series straight from ingestion: T rows, C channels.
struct RawSeries {
    std::vector<std::string> channel_names;
    TensorBuffer values;  // T x C
    std::vector<std::string> timestamps;  // empty when the source has none

    std::size_t length() const { return values.rows(); }
    std::size_t channels() const { return values.cols(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            cells.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    }
    return cells;
}

// Deterministic standard-normal stream (Box-Muller over mt19937_64).
class GaussianRng {
  public:
    explicit GaussianRng(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi_v<double> * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace detail

// Reads a comma-separated file: header row of channel names, decimal-point
// float body, optionally a leading timestamp column. Rejects ragged rows and
// non-numeric cells with their 1-based row/column location (the header is
// row 1).
inline RawSeries load_csv(const std::string& path, bool has_timestamp_column) {
    std::ifstream in(path);
    require(in.good(), "cannot open csv file: ", path);

    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
    require(!lines.empty(), "empty csv file: ", path);

    const auto header = detail::split_csv_line(lines[0]);
    const std::size_t total_cols = header.size();
    const std::size_t first_data_col = has_timestamp_column ? 1 : 0;
    require(total_cols > first_data_col, "csv has no data columns: ", path);
    require(lines.size() > 1, "csv has no data rows: ", path);

    RawSeries series;
    for (std::size_t c = first_data_col; c < total_cols; ++c)
        series.channel_names.emplace_back(header[c]);

    const std::size_t t_len = lines.size() - 1;
    const std::size_t channels = total_cols - first_data_col;
    series.values = TensorBuffer({t_len, channels});

    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = detail::split_csv_line(lines[r]);
        require(cells.size() == total_cols, "csv row ", r + 1, " has ", cells.size(),
                " cells, expected ", total_cols);
        if (has_timestamp_column) series.timestamps.emplace_back(cells[0]);
        for (std::size_t c = first_data_col; c < total_cols; ++c) {
            const std::string_view cell = cells[c];
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            const bool parsed = ec == std::errc() && ptr == cell.data() + cell.size();
            require(parsed && std::isfinite(v), "csv parse error: cannot read value '",
                    std::string(cell), "' at row ", r + 1, ", column ", c + 1);
            series.values.at(r - 1, c - first_data_col) = v;
        }
    }
    return series;
}

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

// Chronological train/val/test windows over a globally standardized series.
// Standardization statistics come from the train range only; windows never
// straddle split boundaries.
class WindowedDataset {
  public:
    enum class Split { train, val, test };

    WindowedDataset(const RawSeries& raw, SplitRatios ratios, std::size_t input_len,
                    std::size_t horizon)
        : input_len_(input_len), horizon_(horizon) {
        require(input_len >= 1 && horizon >= 1, "input length and horizon must be >= 1");
        require(ratios.train > 0 && ratios.val > 0 && ratios.test > 0,
                "split ratios must be positive");
        require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-6,
                "split ratios must sum to 1");

        const std::size_t t_len = raw.length();
        const std::size_t channels = raw.channels();
        bounds_[0] = 0;
        bounds_[1] = static_cast<std::size_t>(ratios.train * static_cast<double>(t_len));
        bounds_[2] = bounds_[1] + static_cast<std::size_t>(ratios.val * static_cast<double>(t_len));
        bounds_[3] = t_len;
        require(bounds_[1] >= input_len + horizon, "train split of length ", bounds_[1],
                " is too short for input ", input_len, " + horizon ", horizon);

        mean_.assign(channels, 0.0);
        std_.assign(channels, 0.0);
        const std::size_t n_train = bounds_[1];
        for (std::size_t c = 0; c < channels; ++c) {
            double m = 0.0;
            for (std::size_t t = 0; t < n_train; ++t) m += raw.values.at(t, c);
            m /= static_cast<double>(n_train);
            double var = 0.0;
            for (std::size_t t = 0; t < n_train; ++t) {
                const double d = raw.values.at(t, c) - m;
                var += d * d;
            }
            var /= static_cast<double>(n_train);
            const double sd = std::sqrt(var);
            require(sd > 0.0, "channel ", c, " ('", raw.channel_names[c],
                    "') is constant over the train split; cannot standardize");
            mean_[c] = m;
            std_[c] = sd;
        }

        standardized_ = raw.values;
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t c = 0; c < channels; ++c)
                standardized_.at(t, c) = (raw.values.at(t, c) - mean_[c]) / std_[c];
    }

    std::size_t input_len() const { return input_len_; }
    std::size_t horizon() const { return horizon_; }
    std::size_t channels() const { return standardized_.cols(); }

    std::pair<std::size_t, std::size_t> split_range(Split s) const {
        const std::size_t i = static_cast<std::size_t>(s);
        return {bounds_[i], bounds_[i + 1]};
    }

    std::size_t num_windows(Split s) const {
        const auto [begin, end] = split_range(s);
        const std::size_t len = end - begin;
        const std::size_t need = input_len_ + horizon_;
        return len >= need ? len - need + 1 : 0;
    }

    // Input slab of window w: rows [start, start + I), all channels.
    TensorBuffer input_window(Split s, std::size_t w) const {
        return slab(window_start(s, w), input_len_);
    }

    TensorBuffer target_window(Split s, std::size_t w) const {
        return slab(window_start(s, w) + input_len_, horizon_);
    }

    const std::vector<double>& standardize_mean() const { return mean_; }
    const std::vector<double>& standardize_std() const { return std_; }
    const TensorBuffer& standardized() const { return standardized_; }

  private:
    std::size_t window_start(Split s, std::size_t w) const {
        require(w < num_windows(s), "window index ", w, " out of range");
        return split_range(s).first + w;
    }

    TensorBuffer slab(std::size_t row0, std::size_t nrows) const {
        const std::size_t channels = standardized_.cols();
        TensorBuffer out({nrows, channels});
        std::copy(standardized_.values.begin() + row0 * channels,
                  standardized_.values.begin() + (row0 + nrows) * channels,
                  out.values.begin());
        return out;
    }

    std::size_t input_len_, horizon_;
    std::size_t bounds_[4] = {0, 0, 0, 0};
    std::vector<double> mean_, std_;
    TensorBuffer standardized_;
};

inline WindowedDataset split_and_standardize(const RawSeries& raw, SplitRatios ratios,
                                             std::size_t input_len, std::size_t horizon) {
    return WindowedDataset(raw, ratios, input_len, horizon);
}

// Per-window normalization state; std carries the 1e-8 clamp so that
// normalize/denormalize round-trip exactly.
struct InstanceNorm {
    std::vector<double> normalized;
    double mean = 0.0;
    double std = 1.0;
};

inline InstanceNorm instance_normalize(std::span<const double> window) {
    require(window.size() >= 2, "instance_normalize needs at least 2 values, got ",
            window.size());
    double mean = 0.0;
    for (double v : window) mean += v;
    mean /= static_cast<double>(window.size());
    double var = 0.0;
    for (double v : window) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(window.size());
    const double sd = std::sqrt(var) + 1e-8;
    InstanceNorm out;
    out.mean = mean;
    out.std = sd;
    out.normalized.resize(window.size());
    for (std::size_t i = 0; i < window.size(); ++i)
        out.normalized[i] = (window[i] - mean) / sd;
    return out;
}

inline std::vector<double> instance_denormalize(std::span<const double> y, double mean,
                                                double std) {
    require(std > 0.0, "instance_denormalize needs a positive std, got ", std);
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] * std + mean;
    return out;
}

struct SyntheticComponent {
    double period = 24.0;
    double amplitude = 1.0;
    double phase = 0.0;
};

// Ground-truth generator: per-channel sums of sinusoids plus linear trend and
// Gaussian noise, deterministic for a given seed.
struct SyntheticSpec {
    std::size_t length = 2000;
    std::size_t channels = 1;
    std::vector<std::vector<SyntheticComponent>> components;  // one list per channel
    double trend_slope = 0.0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

inline RawSeries generate_synthetic(const SyntheticSpec& spec) {
    require(spec.length >= 1 && spec.channels >= 1, "synthetic spec needs length and channels");
    require(spec.noise_std >= 0.0, "synthetic noise std must be >= 0");
    require(spec.components.size() == spec.channels,
            "synthetic spec needs one component list per channel, got ",
            spec.components.size(), " for ", spec.channels, " channels");
    for (const auto& list : spec.components)
        for (const auto& comp : list)
            require(comp.period >= 2.0, "synthetic periods must be >= 2, got ", comp.period);

    RawSeries series;
    for (std::size_t c = 0; c < spec.channels; ++c)
        series.channel_names.push_back("s" + std::to_string(c));
    series.values = TensorBuffer({spec.length, spec.channels});

    detail::GaussianRng noise(spec.seed);
    for (std::size_t t = 0; t < spec.length; ++t) {
        for (std::size_t c = 0; c < spec.channels; ++c) {
            double v = spec.trend_slope * static_cast<double>(t);
            for (const auto& comp : spec.components[c])
                v += comp.amplitude *
                     std::sin(2.0 * std::numbers::pi_v<double> * static_cast<double>(t) /
                                  comp.period +
                              comp.phase);
            if (spec.noise_std > 0.0) v += spec.noise_std * noise.next();
            series.values.at(t, c) = v;
        }
    }
    return series;
}

inline void write_csv(const RawSeries& series, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "cannot open csv for writing: ", path);
    out.precision(17);
    const bool with_ts = !series.timestamps.empty();
    if (with_ts) out << "date,";
    for (std::size_t c = 0; c < series.channels(); ++c) {
        if (c) out << ",";
        out << series.channel_names[c];
    }
    out << "\n";
    for (std::size_t t = 0; t < series.length(); ++t) {
        if (with_ts) out << series.timestamps[t] << ",";
        for (std::size_t c = 0; c < series.channels(); ++c) {
            if (c) out << ",";
            out << series.values.at(t, c);
        }
        out << "\n";
    }
    require(out.good(), "failed writing csv: ", path);
}

}  // namespace dyncast
