// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "dyncast/dataset.hpp"
#include "support/oracles.hpp"

using namespace dyncast;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& contents) {
        static int counter = 0;
        path = "test_dataset_tmp_" + std::to_string(counter++) + ".csv";
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

// Window count by explicit enumeration of start indices inside one split.
std::size_t window_count_by_enumeration(std::size_t begin, std::size_t end, std::size_t need) {
    std::size_t count = 0;
    for (std::size_t start = begin; start + need <= end; ++start) ++count;
    return count;
}

}  // namespace

TEST_CASE("csv ingestion") {
    SECTION("three rows, two channels") {
        TempFile f("a,b\n1,2\n3,4\n5,6\n");
        RawSeries s = load_csv(f.path, false);
        REQUIRE(s.length() == 3);
        REQUIRE(s.channels() == 2);
        REQUIRE(s.channel_names == std::vector<std::string>{"a", "b"});
        REQUIRE(s.values.at(2, 1) == 6.0);
        REQUIRE(s.timestamps.empty());
    }
    SECTION("timestamp column captured and excluded from channels") {
        TempFile f("date,a,b\n2020-01-01,1,2\n2020-01-02,3,4\n");
        RawSeries s = load_csv(f.path, true);
        REQUIRE(s.channels() == 2);
        REQUIRE(s.timestamps == std::vector<std::string>{"2020-01-01", "2020-01-02"});
        REQUIRE(s.channel_names == std::vector<std::string>{"a", "b"});
    }
    SECTION("non-numeric cell names row 2, column 3") {
        TempFile f("a,b,c\n1,2,abc\n4,5,6\n");
        REQUIRE_THROWS_WITH(load_csv(f.path, false),
                            Catch::Matchers::ContainsSubstring("row 2") &&
                                Catch::Matchers::ContainsSubstring("column 3"));
    }
    SECTION("ragged row reports its location") {
        TempFile f("a,b\n1,2\n3\n");
        REQUIRE_THROWS_WITH(load_csv(f.path, false),
                            Catch::Matchers::ContainsSubstring("row 3"));
    }
    SECTION("empty file rejected") {
        TempFile f("");
        REQUIRE_THROWS_AS(load_csv(f.path, false), std::invalid_argument);
    }
    SECTION("header-only file rejected") {
        TempFile f("a,b\n");
        REQUIRE_THROWS_AS(load_csv(f.path, false), std::invalid_argument);
    }
}

TEST_CASE("chronological split, standardization, window counts") {
    SECTION("T=100 with ratios 70/10/20 gives 56 train windows") {
        auto rng = oracles::test_rng(11);
        RawSeries raw;
        raw.channel_names = {"x"};
        raw.values = oracles::random_tensor(rng, {100, 1});
        WindowedDataset ds(raw, SplitRatios{0.7, 0.1, 0.2}, 10, 5);
        REQUIRE(ds.num_windows(WindowedDataset::Split::train) == 56);
        const auto [b, e] = ds.split_range(WindowedDataset::Split::train);
        REQUIRE(ds.num_windows(WindowedDataset::Split::train) ==
                window_count_by_enumeration(b, e, 15));
        const auto [vb, ve] = ds.split_range(WindowedDataset::Split::val);
        REQUIRE(ds.num_windows(WindowedDataset::Split::val) ==
                window_count_by_enumeration(vb, ve, 15));
    }
    SECTION("windows stay inside their split and inputs precede targets") {
        auto rng = oracles::test_rng(12);
        RawSeries raw;
        raw.channel_names = {"x", "y"};
        raw.values = oracles::random_tensor(rng, {60, 2});
        WindowedDataset ds(raw, SplitRatios{0.5, 0.25, 0.25}, 6, 3);
        for (auto split : {WindowedDataset::Split::train, WindowedDataset::Split::val,
                           WindowedDataset::Split::test}) {
            const auto [begin, end] = ds.split_range(split);
            for (std::size_t w = 0; w < ds.num_windows(split); ++w) {
                const TensorBuffer in = ds.input_window(split, w);
                const TensorBuffer tg = ds.target_window(split, w);
                // Reconstruct from the standardized matrix: rows [begin+w, ...).
                for (std::size_t t = 0; t < 6; ++t)
                    for (std::size_t c = 0; c < 2; ++c)
                        REQUIRE(in.at(t, c) == ds.standardized().at(begin + w + t, c));
                for (std::size_t t = 0; t < 3; ++t)
                    for (std::size_t c = 0; c < 2; ++c)
                        REQUIRE(tg.at(t, c) == ds.standardized().at(begin + w + 6 + t, c));
                REQUIRE(begin + w + 9 <= end);
            }
        }
    }
    SECTION("train moments become 0/1 and target scale is the train affine map") {
        auto rng = oracles::test_rng(13);
        RawSeries raw;
        raw.channel_names = {"x", "y", "z"};
        raw.values = oracles::random_tensor(rng, {200, 3}, -4.0, 9.0);
        WindowedDataset ds(raw, SplitRatios{0.7, 0.1, 0.2}, 8, 4);
        const auto [b, e] = ds.split_range(WindowedDataset::Split::train);
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (std::size_t t = b; t < e; ++t) mean += ds.standardized().at(t, c);
            mean /= double(e - b);
            double var = 0.0;
            for (std::size_t t = b; t < e; ++t) {
                const double d = ds.standardized().at(t, c) - mean;
                var += d * d;
            }
            var /= double(e - b);
            REQUIRE(mean == Catch::Approx(0.0).margin(1e-9));
            REQUIRE(std::sqrt(var) == Catch::Approx(1.0).margin(1e-9));
        }
    }
    SECTION("already standardized train data maps to itself") {
        RawSeries raw;
        raw.channel_names = {"x"};
        raw.values = TensorBuffer({10, 1});
        for (std::size_t t = 0; t < 10; ++t) raw.values.at(t, 0) = (t % 2 == 0) ? 1.0 : -1.0;
        WindowedDataset ds(raw, SplitRatios{0.8, 0.1, 0.1}, 2, 1);
        for (std::size_t t = 0; t < 8; ++t)
            REQUIRE(ds.standardized().at(t, 0) ==
                    Catch::Approx(raw.values.at(t, 0)).margin(1e-12));
    }
    SECTION("constant channel rejected") {
        RawSeries raw;
        raw.channel_names = {"x", "flat"};
        raw.values = TensorBuffer({50, 2});
        for (std::size_t t = 0; t < 50; ++t) {
            raw.values.at(t, 0) = double(t);
            raw.values.at(t, 1) = 3.0;
        }
        REQUIRE_THROWS_WITH(WindowedDataset(raw, SplitRatios{}, 5, 2),
                            Catch::Matchers::ContainsSubstring("flat"));
    }
    SECTION("input plus horizon exceeding the train split rejected") {
        auto rng = oracles::test_rng(14);
        RawSeries raw;
        raw.channel_names = {"x"};
        raw.values = oracles::random_tensor(rng, {30, 1});
        REQUIRE_THROWS_AS(WindowedDataset(raw, SplitRatios{}, 20, 5), std::invalid_argument);
    }
}

TEST_CASE("instance normalization") {
    SECTION("constant window maps to zeros with its mean retained") {
        const std::vector<double> x{2, 2, 2};
        const InstanceNorm n = instance_normalize(x);
        REQUIRE(n.mean == 2.0);
        for (double v : n.normalized) REQUIRE(v == 0.0);
    }
    SECTION("two-point window by hand") {
        const std::vector<double> x{0, 2};
        const InstanceNorm n = instance_normalize(x);
        REQUIRE(n.mean == 1.0);
        REQUIRE(n.std == Catch::Approx(1.0).margin(1e-7));
        REQUIRE(n.normalized[0] == Catch::Approx(-1.0).margin(1e-7));
        REQUIRE(n.normalized[1] == Catch::Approx(1.0).margin(1e-7));
    }
    SECTION("denormalize is the exact affine inverse") {
        auto rng = oracles::test_rng(15);
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<double> x(16);
            for (double& v : x) v = oracles::uniform(rng, -7.0, 7.0);
            const InstanceNorm n = instance_normalize(x);
            const std::vector<double> back = instance_denormalize(n.normalized, n.mean, n.std);
            for (std::size_t i = 0; i < x.size(); ++i)
                REQUIRE(back[i] == Catch::Approx(x[i]).margin(1e-9));
        }
    }
    SECTION("hand affine") {
        const std::vector<double> y{1, -1};
        const std::vector<double> out = instance_denormalize(y, 1.0, 2.0);
        REQUIRE(out == std::vector<double>{3, -1});
    }
}

TEST_CASE("synthetic generation") {
    SECTION("all-zero spec gives an all-zero series") {
        SyntheticSpec spec;
        spec.length = 50;
        spec.channels = 2;
        spec.components = {{}, {}};
        const RawSeries s = generate_synthetic(spec);
        for (double v : s.values.values) REQUIRE(v == 0.0);
    }
    SECTION("quarter period of a unit sinusoid") {
        SyntheticSpec spec;
        spec.length = 30;
        spec.channels = 1;
        spec.components = {{{24.0, 1.0, 0.0}}};
        const RawSeries s = generate_synthetic(spec);
        REQUIRE(s.values.at(6, 0) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(s.values.at(0, 0) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("same seed twice is bit-identical; different seed differs") {
        SyntheticSpec spec;
        spec.length = 200;
        spec.channels = 2;
        spec.components = {{{24.0, 1.0, 0.0}}, {{12.0, 0.5, 0.7}}};
        spec.noise_std = 0.3;
        spec.seed = 99;
        const RawSeries a = generate_synthetic(spec);
        const RawSeries b = generate_synthetic(spec);
        REQUIRE(a.values.values == b.values.values);
        spec.seed = 100;
        const RawSeries c = generate_synthetic(spec);
        REQUIRE(a.values.values != c.values.values);
    }
    SECTION("short periods rejected") {
        SyntheticSpec spec;
        spec.components = {{{1.0, 1.0, 0.0}}};
        REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
    }
    SECTION("csv round trip") {
        SyntheticSpec spec;
        spec.length = 40;
        spec.channels = 2;
        spec.components = {{{24.0, 1.0, 0.0}}, {{8.0, 2.0, 0.3}}};
        spec.noise_std = 0.05;
        spec.seed = 5;
        const RawSeries s = generate_synthetic(spec);
        TempFile f("");
        write_csv(s, f.path);
        const RawSeries back = load_csv(f.path, false);
        REQUIRE(back.length() == s.length());
        REQUIRE(back.channels() == s.channels());
        for (std::size_t i = 0; i < s.values.size(); ++i)
            REQUIRE(back.values.values[i] == s.values.values[i]);
    }
}
