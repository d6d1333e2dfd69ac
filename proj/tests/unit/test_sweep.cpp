// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "bae/binio.hpp"
#include "bae/channel.hpp"
#include "bae/codebook.hpp"
#include "bae/error.hpp"
#include "bae/sweep.hpp"
#include "support.hpp"

using namespace bae;
using Catch::Approx;

namespace {

DatasetConfig small_config(int n_ue = 300) {
    DatasetConfig c;
    c.scenario.n_ue = n_ue;
    c.seed = 21;
    c.scenario.seed = 21;
    return c;
}

}  // namespace

TEST_CASE("beamform_gain and snr", "[sweep]") {
    ChannelVector h{array_response(0.2, 8, 0.5)};
    CHECK(beamform_gain(h, BeamVector{h.h}) == Approx(1.0));
    ChannelVector e0{Eigen::VectorXcd::Zero(2)}, e1{Eigen::VectorXcd::Zero(2)};
    e0.h[0] = 1;
    e1.h[1] = 1;
    CHECK(beamform_gain(e0, BeamVector{e1.h}) == 0.0);

    Rng rng = substream(1, Stream::Paths);
    ChannelVector a{Eigen::VectorXcd(16)};
    BeamVector w{Eigen::VectorXcd(16)};
    double re = 0, im = 0;
    for (int i = 0; i < 16; ++i) {
        a.h[i] = cd(uniform01(rng) - 0.5, uniform01(rng) - 0.5);
        w.w[i] = cd(uniform01(rng) - 0.5, uniform01(rng) - 0.5);
        // conj(h_i) * w_i
        re += a.h[i].real() * w.w[i].real() + a.h[i].imag() * w.w[i].imag();
        im += a.h[i].real() * w.w[i].imag() - a.h[i].imag() * w.w[i].real();
    }
    CHECK(beamform_gain(a, w) == Approx(re * re + im * im).epsilon(1e-13));
    CHECK_THROWS_AS(beamform_gain(a, BeamVector{Eigen::VectorXcd::Zero(3)}), std::invalid_argument);

    const BeamVector unit{h.h};
    CHECK(snr(h, unit, 1.0, 0.1) == Approx(10.0));
    CHECK(snr(h, unit, 2.0, 0.1) == Approx(20.0));
    CHECK(10 * std::log10(snr(h, unit, dbm_to_mw(30), dbm_to_mw(-90))) == Approx(120.0));
    CHECK_THROWS_AS(snr(h, unit, 1.0, 0.0), std::invalid_argument);
    CHECK(mw_to_dbm(dbm_to_mw(-37.5)) == Approx(-37.5));
}

TEST_CASE("optimal_beam", "[sweep]") {
    const auto cb = odft_codebook(32, 4);
    CHECK(optimal_beam(ChannelVector{cb.beams[77].w}, cb) == 77);
    for (int g : {0, 10, 63, 64, 100, 127}) {
        // Entry phase pi n sin(phi) must equal -2 pi n g / 128 modulo 2 pi.
        const double s = g < 64 ? -g / 64.0 : (128 - g) / 64.0;
        const ChannelVector h{array_response(std::asin(s), 32, 0.5)};
        int best = 0;
        double best_gain = -1;
        for (int q = 0; q < 128; ++q) {
            cd acc = 0;
            for (int n = 0; n < 32; ++n) acc += std::conj(h.h[n]) * cb.beams[q].w[n];
            if (std::norm(acc) > best_gain + 1e-12) {
                best_gain = std::norm(acc);
                best = q;
            }
        }
        CHECK(best == g);
        CHECK(optimal_beam(h, cb) == g);
        CHECK(optimal_beam(ChannelVector{5.0 * h.h}, cb) == g);
        CHECK(beamform_gain(h, cb.beams[g]) == Approx(1.0).epsilon(1e-12));
    }
    // Ties resolve to the lowest index.
    CHECK(optimal_beam(ChannelVector{Eigen::VectorXcd::Zero(32)}, cb) == 0);
}

TEST_CASE("measure_rssi", "[sweep]") {
    const auto sensing = sensing_codebook(8, 8);
    const ChannelVector h{sensing.beams[0].w};
    Rng rng = substream(1, Stream::Noise);
    const auto clean = measure_rssi(h, sensing, 1.0, NoiseModel::none(), rng);
    CHECK(clean[0] == Approx(1.0));
    for (int i = 0; i < 8; ++i) CHECK(clean[i] == Approx(beamform_gain(h, sensing.beams[i])).margin(1e-15));

    const ChannelVector g{array_response(0.3, 8, 0.5)};
    Rng r1 = substream(2, Stream::Noise, 4), r2 = substream(2, Stream::Noise, 4);
    const auto noise = NoiseModel::ranged(-90, -28);
    CHECK(measure_rssi(g, sensing, 0.5, noise, r1) == measure_rssi(g, sensing, 0.5, noise, r2));

    // Noise adds sigma^2 power on average.
    Rng r3 = substream(3, Stream::Noise);
    const ChannelVector zero{Eigen::VectorXcd::Zero(8)};
    double sum = 0;
    const int trials = 4000;
    for (int t = 0; t < trials; ++t)
        for (double v : measure_rssi(zero, sensing, 1.0, NoiseModel::fixed(0.0), r3)) sum += v;
    CHECK(sum / (trials * 8) == Approx(1.0).epsilon(0.03));
}

TEST_CASE("noise model validation", "[sweep]") {
    CHECK_NOTHROW(NoiseModel::ranged(-90, -28).validate());
    CHECK_THROWS_AS(NoiseModel::ranged(-20, -30).validate(), ConfigError);
}

TEST_CASE("split sizes and assignment", "[sweep]") {
    const auto s = split_sizes(1000, SplitFractions{});
    CHECK(s.train == 700);
    CHECK(s.validation == 100);
    CHECK(s.test == 150);
    CHECK(s.calibration == 50);

    const auto parts = assign_splits(997, SplitFractions{}, 5);
    std::set<std::uint32_t> all;
    std::size_t total = 0;
    for (const auto& p : parts) {
        total += p.size();
        all.insert(p.begin(), p.end());
    }
    CHECK(total == 997);
    CHECK(all.size() == 997);
    CHECK(parts == assign_splits(997, SplitFractions{}, 5));
    CHECK(parts != assign_splits(997, SplitFractions{}, 6));
}

TEST_CASE("build_dataset", "[sweep]") {
    auto cfg = small_config(1000);
    cfg.noise = NoiseModel::ranged(-90, -28);
    const auto d = build_dataset(cfg);
    CHECK(d.train.size() == 700);
    CHECK(d.validation.size() == 100);
    CHECK(d.test.size() == 150);
    CHECK(d.calibration.size() == 50);
    CHECK(d.meta.q == 128);
    CHECK(d.meta.m_w == 32);

    std::set<std::uint32_t> ids;
    for (auto split : {Split::Train, Split::Validation, Split::Calibration, Split::Test})
        for (const auto& s : split_of(d, split)) {
            CHECK(ids.insert(s.ue_id).second);
            CHECK(s.label < 128);
            for (float v : s.rssi) CHECK(v >= 0.0f);
        }

    const auto channels = generate_channels(cfg.scenario);
    CHECK(verify_labels(d, channels) == 1.0);

    // Labels never depend on the noise model.
    auto quiet = cfg;
    quiet.noise = NoiseModel::none();
    const auto q = build_dataset(quiet);
    for (std::size_t i = 0; i < d.test.size(); ++i) {
        CHECK(q.test[i].ue_id == d.test[i].ue_id);
        CHECK(q.test[i].label == d.test[i].label);
    }
    CHECK(q == build_dataset(quiet));

    // Noiseless features: the strongest sensing beam matches the exhaustive sensing search.
    const auto sensing = sensing_codebook(32, 32);
    for (const auto& s : q.test) {
        const auto best = std::max_element(s.rssi.begin(), s.rssi.end()) - s.rssi.begin();
        CHECK(best == optimal_beam(channels[s.ue_id], sensing));
    }
}

TEST_CASE("realized SNR falls as noise rises", "[sweep]") {
    auto cfg = small_config(200);
    double prev = std::numeric_limits<double>::infinity();
    for (double level : {-90.0, -70.0, -50.0, -30.0}) {
        cfg.noise = NoiseModel::fixed(level);
        const auto d = build_dataset(cfg);
        double sum = 0;
        for (const auto& s : d.train) sum += s.snr_db;
        const double mean = sum / static_cast<double>(d.train.size());
        CHECK(mean < prev);
        prev = mean;
    }
}

TEST_CASE("dataset config validation", "[sweep]") {
    auto cfg = small_config();
    cfg.fractions.calibration = 0.0;
    cfg.fractions.test = 0.2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.fractions.train = 0.9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.scenario.n_ue = 0;
    CHECK_THROWS(build_dataset(cfg));
}

TEST_CASE("dataset file round-trip and corruption", "[sweep]") {
    auto cfg = small_config(200);
    cfg.noise = NoiseModel::ranged(-90, -28);
    auto d = build_dataset(cfg);
    d.meta.config_hash = "0badc0de";
    test::TempDir dir("sweep");
    const auto path = dir / "d.bae";
    write_dataset(d, path);
    CHECK(read_dataset(path) == d);

    const auto bytes = binio::read_file(path);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BAE1");
    CHECK(encode_dataset(d) == bytes);

    auto bad = bytes;
    bad[1] = 'Z';
    try {
        decode_dataset(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::BadMagic);
    }

    bad = bytes;
    bad[bad.size() - 10] ^= 0x40;
    try {
        decode_dataset(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::Checksum);
    }

    // Header promises one more test record than the payload holds.
    std::size_t offset = 0;
    auto header = binio::detail::read_header(bytes, {'B', 'A', 'E', '1'}, offset);
    header["counts"]["test"] = header["counts"]["test"].get<int>() + 1;
    const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end() - 4);
    const auto forged = binio::pack({'B', 'A', 'E', '1'}, header, payload);
    try {
        decode_dataset(forged);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::Truncated);
    }

    header["version"] = 99;
    try {
        decode_dataset(binio::pack({'B', 'A', 'E', '1'}, header, payload));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::Version);
    }
}
