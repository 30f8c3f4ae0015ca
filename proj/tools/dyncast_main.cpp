// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / eval / synth / inspect.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dyncast/checkpoint.hpp"
#include "dyncast/dyncast.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Keys mirrored as --key flags on every subcommand.
const std::vector<std::pair<std::string, std::string>> kConfigKeys = {
    {"input_len", "input window length I"},
    {"horizon", "forecast horizon O"},
    {"patch_len", "patch length P"},
    {"stride", "patch stride S"},
    {"d_model", "embedding width D"},
    {"groups", "tokenizer group count G"},
    {"sparse_ratio", "tokenizer sparse ratio SR in [0,1]"},
    {"num_scales", "number of pooling scales k"},
    {"layers", "transformer layers L"},
    {"heads", "attention heads H"},
    {"learning_rate", "Adam learning rate"},
    {"batch_size", "training batch size"},
    {"epochs", "training epochs"},
    {"max_steps", "cap on total gradient steps (0 = no cap)"},
    {"update_every_frac", "indicator update interval as a fraction of an epoch"},
    {"alpha", "prune-fraction scale of the annealing schedule"},
    {"seed", "random seed"},
    {"dynamic_tokenizer", "true for the sparse tokenizer, false for a dense one"},
    {"pe_mode", "position encoding: none | rope | grope"},
    {"mask_strategy", "small_magnitude | large_magnitude | magnitude_gradient"},
    {"data", "csv dataset path"},
    {"has_timestamp_column", "first csv column is a timestamp"},
    {"synthetic", "generate the dataset from the synth_* keys"},
    {"synth_length", "synthetic series length"},
    {"synth_channels", "synthetic channel count"},
    {"synth_periods", "comma-separated sinusoid periods"},
    {"synth_amplitudes", "comma-separated sinusoid amplitudes"},
    {"synth_phases", "comma-separated sinusoid phases"},
    {"synth_slope", "synthetic linear trend slope"},
    {"synth_noise_std", "synthetic Gaussian noise std"},
    {"train_ratio", "chronological train fraction"},
    {"val_ratio", "chronological validation fraction"},
    {"test_ratio", "chronological test fraction"},
    {"output_dir", "run directory for outputs"},
    {"checkpoint", "checkpoint path (default <output_dir>/model.ckpt)"},
    {"split", "evaluation split: train | val | test"},
    {"synth_out", "csv path for the synth command"},
    {"dump_predictions", "also write raw predictions on eval"},
};

// Removes files created during a failed run.
class OutputGuard {
  public:
    void add(const fs::path& p) { created_.push_back(p); }
    void commit() { committed_ = true; }
    ~OutputGuard() {
        if (committed_) return;
        for (const fs::path& p : created_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }

  private:
    std::vector<fs::path> created_;
    bool committed_ = false;
};

std::string full_precision(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

dyncast::RunConfig resolve_config(const std::string& config_file,
                                  const std::map<std::string, std::string>& flags) {
    dyncast::RunConfig rc;
    if (!config_file.empty()) rc.apply_file(config_file);
    for (const auto& [key, value] : flags) rc.set_key(key, value);  // flags win
    rc.validate();
    return rc;
}

dyncast::WindowedDataset build_dataset(const dyncast::RunConfig& rc) {
    using namespace dyncast;
    RawSeries raw;
    if (!rc.data.empty())
        raw = load_csv(rc.data, rc.has_timestamp_column);
    else if (rc.synthetic)
        raw = generate_synthetic(rc.synthetic_spec());
    else
        throw std::invalid_argument(
            "no dataset: set data=<csv path> or synthetic=true");
    return split_and_standardize(raw, SplitRatios{rc.train_ratio, rc.val_ratio, rc.test_ratio},
                                 rc.model.input_len, rc.model.horizon);
}

void echo_config(const dyncast::RunConfig& rc, OutputGuard& guard) {
    fs::create_directories(rc.output_dir);
    const fs::path path = fs::path(rc.output_dir) / "config_resolved.conf";
    std::ofstream out(path);
    out << rc.to_key_values();
    if (!out.good()) throw std::runtime_error("cannot write " + path.string());
    guard.add(path);
}

void write_metrics_file(const fs::path& path,
                        const std::vector<std::pair<std::string, std::string>>& lines,
                        const dyncast::MetricsReport& report, OutputGuard& guard) {
    std::ofstream out(path);
    for (const auto& [key, value] : lines) out << key << ": " << value << "\n";
    out << "windows: " << report.windows << "\n";
    out << "mse: " << full_precision(report.mse) << "\n";
    out << "mae: " << full_precision(report.mae) << "\n";
    out << "params: " << report.parameter_count << "\n";
    out << "seconds: " << full_precision(report.seconds) << "\n";
    out << "per_horizon_mse:";
    for (double v : report.mse_per_horizon) out << " " << full_precision(v);
    out << "\nper_horizon_mae:";
    for (double v : report.mae_per_horizon) out << " " << full_precision(v);
    out << "\n";

    json machine;
    machine["mse"] = report.mse;
    machine["mae"] = report.mae;
    machine["params"] = report.parameter_count;
    machine["seconds"] = report.seconds;
    out << "```json\n" << machine.dump() << "\n```\n";
    if (!out.good()) throw std::runtime_error("cannot write " + path.string());
    guard.add(path);
}

dyncast::WindowedDataset::Split parse_split(const std::string& s) {
    if (s == "train") return dyncast::WindowedDataset::Split::train;
    if (s == "val") return dyncast::WindowedDataset::Split::val;
    return dyncast::WindowedDataset::Split::test;
}

int run_train(const dyncast::RunConfig& rc) {
    using namespace dyncast;
    OutputGuard guard;
    echo_config(rc, guard);
    const WindowedDataset dataset = build_dataset(rc);
    ForecastModel model(rc.model);
    const TrainHistory history = train(model, dataset);

    const fs::path ckpt = rc.resolved_checkpoint();
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_checkpoint(model, ckpt.string());
    guard.add(ckpt);

    const MetricsReport val = evaluate(model, dataset, WindowedDataset::Split::val);
    std::vector<std::pair<std::string, std::string>> lines;
    lines.emplace_back("command", "train");
    lines.emplace_back("scale", "standardized");
    lines.emplace_back("split", "val");
    lines.emplace_back("steps", std::to_string(history.total_steps));
    lines.emplace_back("best_epoch", std::to_string(history.best_epoch + 1));
    lines.emplace_back("best_val_mse", full_precision(history.best_val_mse));
    lines.emplace_back("train_seconds", full_precision(history.seconds));
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        std::ostringstream os;
        os.precision(17);
        os << "train_loss=" << history.epochs[e].train_loss
           << " val_mse=" << history.epochs[e].val_mse;
        lines.emplace_back("epoch " + std::to_string(e + 1), os.str());
    }
    write_metrics_file(fs::path(rc.output_dir) / "metrics.txt", lines, val, guard);

    std::cout << "trained " << history.total_steps << " steps; val mse "
              << full_precision(val.mse) << ", checkpoint " << ckpt.string() << "\n";
    guard.commit();
    return 0;
}

int run_eval(const dyncast::RunConfig& rc) {
    using namespace dyncast;
    OutputGuard guard;
    const std::string ckpt = rc.resolved_checkpoint();
    if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
    ForecastModel model = load_checkpoint(ckpt);

    // Explicit structural overrides must agree with the stored model.
    const ModelConfig& mc = model.config();
    auto mismatch = [&rc](const std::string& key, auto stored, auto requested) {
        if (rc.explicitly_set.count(key) && stored != requested)
            throw std::runtime_error(dyncast::msg("config mismatch: checkpoint has ", key, "=",
                                                  stored, ", run requests ", requested));
    };
    mismatch("input_len", mc.input_len, rc.model.input_len);
    mismatch("horizon", mc.horizon, rc.model.horizon);
    mismatch("patch_len", mc.patch_len, rc.model.patch_len);
    mismatch("stride", mc.stride, rc.model.stride);
    mismatch("d_model", mc.d_model, rc.model.d_model);
    mismatch("groups", mc.groups, rc.model.groups);
    mismatch("num_scales", mc.num_scales, rc.model.num_scales);
    mismatch("layers", mc.layers, rc.model.layers);
    mismatch("heads", mc.heads, rc.model.heads);

    // Windows follow the checkpoint geometry.
    dyncast::RunConfig data_rc = rc;
    data_rc.model.input_len = mc.input_len;
    data_rc.model.horizon = mc.horizon;
    const WindowedDataset dataset = build_dataset(data_rc);

    echo_config(rc, guard);
    const WindowedDataset::Split split = parse_split(rc.split);
    const MetricsReport report = evaluate(model, dataset, split);

    std::vector<std::pair<std::string, std::string>> lines;
    lines.emplace_back("command", "eval");
    lines.emplace_back("scale", "standardized");
    lines.emplace_back("split", rc.split);
    lines.emplace_back("checkpoint", ckpt);
    write_metrics_file(fs::path(rc.output_dir) / ("metrics_" + rc.split + ".txt"), lines,
                       report, guard);

    if (rc.dump_predictions) {
        const fs::path pred_path =
            fs::path(rc.output_dir) / ("predictions_" + rc.split + ".csv");
        std::ofstream out(pred_path);
        out.precision(17);
        out << "window,step,channel,prediction,target\n";
        for (std::size_t w = 0; w < dataset.num_windows(split); ++w) {
            const TensorBuffer input = dataset.input_window(split, w);
            const TensorBuffer target = dataset.target_window(split, w);
            const TensorBuffer pred = model.forward(input);
            for (std::size_t t = 0; t < pred.rows(); ++t)
                for (std::size_t c = 0; c < pred.cols(); ++c)
                    out << w << "," << t << "," << c << "," << pred.at(t, c) << ","
                        << target.at(t, c) << "\n";
        }
        if (!out.good()) throw std::runtime_error("cannot write " + pred_path.string());
        guard.add(pred_path);
    }

    std::cout << rc.split << " mse " << full_precision(report.mse) << ", mae "
              << full_precision(report.mae) << " over " << report.windows << " windows\n";
    guard.commit();
    return 0;
}

int run_synth(const dyncast::RunConfig& rc) {
    using namespace dyncast;
    OutputGuard guard;
    echo_config(rc, guard);
    const RawSeries series = generate_synthetic(rc.synthetic_spec());
    const fs::path out_path = rc.resolved_synth_out();
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_csv(series, out_path.string());
    guard.add(out_path);
    std::cout << "wrote " << series.length() << " x " << series.channels()
              << " synthetic series to " << out_path.string() << "\n";
    guard.commit();
    return 0;
}

int run_inspect(const dyncast::RunConfig& rc) {
    using namespace dyncast;
    const std::string ckpt = rc.resolved_checkpoint();
    if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
    const ForecastModel model = load_checkpoint(ckpt);
    const DynamicLinearLayer& tok = model.tokenizer();

    std::cout << "checkpoint: " << ckpt << "\n";
    std::cout << "tokenizer: " << (tok.dense() ? "dense" : "dynamic sparse") << ", P="
              << tok.patch_len() << ", D=" << tok.d_model() << ", G=" << tok.groups()
              << ", SR=" << tok.sparse_ratio() << "\n";
    std::cout << "active weights: " << tok.total_active() << " / "
              << tok.patch_len() * tok.d_model() << "\n";
    const auto hists = tok.trf_histogram();
    for (std::size_t g = 1; g <= tok.groups(); ++g) {
        std::cout << "group " << g << ": region rows " << tok.region_rows(g) << ", budget "
                  << tok.group_budget(g) << ", active " << tok.active_count(g) << "\n";
        for (const auto& [trf, count] : hists[g - 1])
            std::cout << "  tRF " << trf << ": " << count << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dyncast: sparse-tokenizer multi-scale transformer forecaster"};
    app.require_subcommand(1);

    std::map<std::string, std::string> config_files;
    std::map<std::string, std::map<std::string, std::string>> staged;
    const std::vector<std::string> commands{"train", "eval", "synth", "inspect"};
    const std::map<std::string, std::string> descriptions{
        {"train", "train a model and write checkpoint plus metrics"},
        {"eval", "evaluate a checkpoint on a split"},
        {"synth", "write a synthetic csv dataset"},
        {"inspect", "print receptive-field histograms of a checkpoint"}};

    for (const std::string& name : commands) {
        CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
        sub->add_option("--config", config_files[name], "key=value config file");
        for (const auto& [key, help] : kConfigKeys)
            sub->add_option("--" + key, staged[name][key], help)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        std::map<std::string, std::string> flags;
        for (const auto& [key, value] : staged[command]) {
            if (app.get_subcommand(command)->count("--" + key) > 0) flags[key] = value;
        }
        const dyncast::RunConfig rc = resolve_config(config_files[command], flags);
        if (command == "train") return run_train(rc);
        if (command == "eval") return run_eval(rc);
        if (command == "synth") return run_synth(rc);
        return run_inspect(rc);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
