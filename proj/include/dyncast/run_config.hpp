// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dyncast/dataset.hpp"
#include "dyncast/model.hpp"

namespace dyncast {

namespace detail {

inline std::string trim_copy(const std::string& s) {
    return std::string(trim(std::string_view(s)));
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size(), "key '", key,
            "': expected a non-negative integer, got '", v, "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size(), "key '", key,
            "': expected a number, got '", v, "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    require(false, "key '", key, "': expected true/false, got '", v, "'");
    return false;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= v.size(); ++i) {
        if (i == v.size() || v[i] == ',') {
            const std::string cell = trim_copy(v.substr(start, i - start));
            if (!cell.empty()) out.push_back(parse_double(key, cell));
            start = i + 1;
        }
    }
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string format_double_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

}  // namespace detail

inline std::string to_string(PEMode mode) {
    switch (mode) {
        case PEMode::none: return "none";
        case PEMode::rope: return "rope";
        case PEMode::grope: return "grope";
    }
    return "grope";
}

inline std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::small_magnitude: return "small_magnitude";
        case MaskStrategy::large_magnitude: return "large_magnitude";
        case MaskStrategy::magnitude_gradient: return "magnitude_gradient";
    }
    return "small_magnitude";
}

// Fully resolved run settings: model hyperparameters, dataset source (CSV
// path or synthetic spec), split ratios, output locations, ablation toggles.
// Every key has a default; unknown keys are rejected.
struct RunConfig {
    ModelConfig model;

    std::string data;  // csv path; empty with synthetic=true generates data
    bool has_timestamp_column = false;
    bool synthetic = false;
    std::size_t synth_length = 2000;
    std::size_t synth_channels = 1;
    std::vector<double> synth_periods{24.0, 96.0};
    std::vector<double> synth_amplitudes{1.0, 1.0};
    std::vector<double> synth_phases{0.0, 0.0};
    double synth_slope = 0.0;
    double synth_noise_std = 0.1;

    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;

    std::string output_dir = "runs/latest";
    std::string checkpoint;  // defaults to <output_dir>/model.ckpt
    std::string split = "test";
    std::string synth_out;  // defaults to <output_dir>/synthetic.csv
    bool dump_predictions = false;

    std::set<std::string> explicitly_set;

    void set_key(const std::string& key, const std::string& raw_value) {
        using namespace detail;
        const std::string v = trim_copy(raw_value);
        if (key == "input_len") model.input_len = parse_size(key, v);
        else if (key == "horizon") model.horizon = parse_size(key, v);
        else if (key == "patch_len") model.patch_len = parse_size(key, v);
        else if (key == "stride") model.stride = parse_size(key, v);
        else if (key == "d_model") model.d_model = parse_size(key, v);
        else if (key == "groups") model.groups = parse_size(key, v);
        else if (key == "sparse_ratio") {
            model.sparse_ratio = parse_double(key, v);
            require(model.sparse_ratio >= 0.0 && model.sparse_ratio <= 1.0,
                    "key 'sparse_ratio': value ", v, " is out of range [0, 1]");
        } else if (key == "num_scales") model.num_scales = parse_size(key, v);
        else if (key == "layers") model.layers = parse_size(key, v);
        else if (key == "heads") model.heads = parse_size(key, v);
        else if (key == "learning_rate") model.learning_rate = parse_double(key, v);
        else if (key == "batch_size") model.batch_size = parse_size(key, v);
        else if (key == "epochs") model.epochs = parse_size(key, v);
        else if (key == "max_steps") model.max_steps = parse_size(key, v);
        else if (key == "update_every_frac") model.update_every_frac = parse_double(key, v);
        else if (key == "alpha") model.alpha = parse_double(key, v);
        else if (key == "seed") model.seed = parse_size(key, v);
        else if (key == "dynamic_tokenizer") model.dynamic_tokenizer = parse_bool(key, v);
        else if (key == "pe_mode") {
            if (v == "none") model.pe_mode = PEMode::none;
            else if (v == "rope") model.pe_mode = PEMode::rope;
            else if (v == "grope") model.pe_mode = PEMode::grope;
            else require(false, "key 'pe_mode': expected none|rope|grope, got '", v, "'");
        } else if (key == "mask_strategy") {
            if (v == "small_magnitude") model.mask_strategy = MaskStrategy::small_magnitude;
            else if (v == "large_magnitude") model.mask_strategy = MaskStrategy::large_magnitude;
            else if (v == "magnitude_gradient")
                model.mask_strategy = MaskStrategy::magnitude_gradient;
            else
                require(false, "key 'mask_strategy': expected small_magnitude|large_magnitude|"
                               "magnitude_gradient, got '", v, "'");
        } else if (key == "data") data = v;
        else if (key == "has_timestamp_column") has_timestamp_column = parse_bool(key, v);
        else if (key == "synthetic") synthetic = parse_bool(key, v);
        else if (key == "synth_length") synth_length = parse_size(key, v);
        else if (key == "synth_channels") synth_channels = parse_size(key, v);
        else if (key == "synth_periods") synth_periods = parse_double_list(key, v);
        else if (key == "synth_amplitudes") synth_amplitudes = parse_double_list(key, v);
        else if (key == "synth_phases") synth_phases = parse_double_list(key, v);
        else if (key == "synth_slope") synth_slope = parse_double(key, v);
        else if (key == "synth_noise_std") synth_noise_std = parse_double(key, v);
        else if (key == "train_ratio") train_ratio = parse_double(key, v);
        else if (key == "val_ratio") val_ratio = parse_double(key, v);
        else if (key == "test_ratio") test_ratio = parse_double(key, v);
        else if (key == "output_dir") output_dir = v;
        else if (key == "checkpoint") checkpoint = v;
        else if (key == "split") {
            require(v == "train" || v == "val" || v == "test",
                    "key 'split': expected train|val|test, got '", v, "'");
            split = v;
        } else if (key == "synth_out") synth_out = v;
        else if (key == "dump_predictions") dump_predictions = parse_bool(key, v);
        else require(false, "unknown config key '", key, "'");
        explicitly_set.insert(key);
    }

    void apply_file(const std::string& path) {
        std::ifstream in(path);
        require(in.good(), "cannot open config file: ", path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string stripped = detail::trim_copy(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const auto eq = stripped.find('=');
            require(eq != std::string::npos, "config file ", path, " line ", line_no,
                    ": expected key=value, got '", stripped, "'");
            set_key(detail::trim_copy(stripped.substr(0, eq)),
                    detail::trim_copy(stripped.substr(eq + 1)));
        }
    }

    void validate() const {
        model.validate();
        require(train_ratio > 0 && val_ratio > 0 && test_ratio > 0,
                "key 'train_ratio'/'val_ratio'/'test_ratio': ratios must be positive");
        require(std::abs(train_ratio + val_ratio + test_ratio - 1.0) < 1e-6,
                "key 'train_ratio'/'val_ratio'/'test_ratio': ratios must sum to 1");
        require(synth_periods.size() == synth_amplitudes.size() &&
                    synth_periods.size() == synth_phases.size(),
                "keys 'synth_periods'/'synth_amplitudes'/'synth_phases' must have equal "
                "lengths");
        for (double p : synth_periods)
            require(p >= 2.0, "key 'synth_periods': periods must be >= 2, got ", p);
        require(synth_noise_std >= 0.0, "key 'synth_noise_std': must be >= 0");
    }

    SyntheticSpec synthetic_spec() const {
        SyntheticSpec spec;
        spec.length = synth_length;
        spec.channels = synth_channels;
        spec.trend_slope = synth_slope;
        spec.noise_std = synth_noise_std;
        spec.seed = model.seed;
        std::vector<SyntheticComponent> comps;
        for (std::size_t i = 0; i < synth_periods.size(); ++i)
            comps.push_back({synth_periods[i], synth_amplitudes[i], synth_phases[i]});
        spec.components.assign(synth_channels, comps);
        return spec;
    }

    std::string resolved_checkpoint() const {
        return checkpoint.empty() ? output_dir + "/model.ckpt" : checkpoint;
    }

    std::string resolved_synth_out() const {
        return synth_out.empty() ? output_dir + "/synthetic.csv" : synth_out;
    }

    // Every key, in a form that apply_file() reads back identically.
    std::string to_key_values() const {
        using namespace detail;
        std::ostringstream os;
        os << "input_len = " << model.input_len << "\n";
        os << "horizon = " << model.horizon << "\n";
        os << "patch_len = " << model.patch_len << "\n";
        os << "stride = " << model.stride << "\n";
        os << "d_model = " << model.d_model << "\n";
        os << "groups = " << model.groups << "\n";
        os << "sparse_ratio = " << format_double(model.sparse_ratio) << "\n";
        os << "num_scales = " << model.num_scales << "\n";
        os << "layers = " << model.layers << "\n";
        os << "heads = " << model.heads << "\n";
        os << "learning_rate = " << format_double(model.learning_rate) << "\n";
        os << "batch_size = " << model.batch_size << "\n";
        os << "epochs = " << model.epochs << "\n";
        os << "max_steps = " << model.max_steps << "\n";
        os << "update_every_frac = " << format_double(model.update_every_frac) << "\n";
        os << "alpha = " << format_double(model.alpha) << "\n";
        os << "seed = " << model.seed << "\n";
        os << "dynamic_tokenizer = " << (model.dynamic_tokenizer ? "true" : "false") << "\n";
        os << "pe_mode = " << to_string(model.pe_mode) << "\n";
        os << "mask_strategy = " << to_string(model.mask_strategy) << "\n";
        os << "data = " << data << "\n";
        os << "has_timestamp_column = " << (has_timestamp_column ? "true" : "false") << "\n";
        os << "synthetic = " << (synthetic ? "true" : "false") << "\n";
        os << "synth_length = " << synth_length << "\n";
        os << "synth_channels = " << synth_channels << "\n";
        os << "synth_periods = " << format_double_list(synth_periods) << "\n";
        os << "synth_amplitudes = " << format_double_list(synth_amplitudes) << "\n";
        os << "synth_phases = " << format_double_list(synth_phases) << "\n";
        os << "synth_slope = " << format_double(synth_slope) << "\n";
        os << "synth_noise_std = " << format_double(synth_noise_std) << "\n";
        os << "train_ratio = " << format_double(train_ratio) << "\n";
        os << "val_ratio = " << format_double(val_ratio) << "\n";
        os << "test_ratio = " << format_double(test_ratio) << "\n";
        os << "output_dir = " << output_dir << "\n";
        os << "checkpoint = " << checkpoint << "\n";
        os << "split = " << split << "\n";
        os << "synth_out = " << synth_out << "\n";
        os << "dump_predictions = " << (dump_predictions ? "true" : "false") << "\n";
        return os.str();
    }
};

}  // namespace dyncast
