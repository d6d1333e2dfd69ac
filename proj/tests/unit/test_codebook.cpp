// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "bae/channel.hpp"
#include "bae/codebook.hpp"
#include "bae/error.hpp"
#include "bae/sweep.hpp"
#include "support.hpp"

using namespace bae;
using Catch::Approx;

namespace {

ChannelVector random_channel(Rng& rng, int n) {
    ChannelVector h{Eigen::VectorXcd(n)};
    for (int i = 0; i < n; ++i)
        h.h[i] = std::polar(0.2 + uniform01(rng), 2 * std::numbers::pi * uniform01(rng));
    return h;
}

// Exhaustive maximum of |h^H w|^2 over all 16^4 four-antenna 4-bit beams.
double brute_force_4bit(const ChannelVector& h) {
    double best = 0.0;
    const double step = 2 * std::numbers::pi / 16;
    for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b)
            for (int c = 0; c < 16; ++c)
                for (int d = 0; d < 16; ++d) {
                    const int p[4] = {a, b, c, d};
                    cd s = 0;
                    for (int i = 0; i < 4; ++i) s += std::conj(h.h[i]) * std::polar(0.5, p[i] * step);
                    best = std::max(best, std::norm(s));
                }
    return best;
}

}  // namespace

TEST_CASE("DFT Gram matrix is the identity", "[codebook]") {
    const auto cb = dft_codebook(32);
    REQUIRE(cb.size() == 32);
    Eigen::MatrixXcd W(32, 32);
    for (int q = 0; q < 32; ++q) W.col(q) = cb.beams[q].w;
    const Eigen::MatrixXcd G = W.adjoint() * W;
    CHECK((G - Eigen::MatrixXcd::Identity(32, 32)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("O-DFT structure", "[codebook]") {
    const auto dft = dft_codebook(32);
    const auto odft = odft_codebook(32, 4);
    REQUIRE(odft.size() == 128);
    for (int q = 0; q < 32; ++q) CHECK(odft.beams[4 * q].w == dft.beams[q].w);
    for (const auto& b : odft.beams) CHECK(b.w.squaredNorm() == Approx(1.0).epsilon(1e-12));

    const auto os1 = odft_codebook(16, 1), plain = dft_codebook(16);
    for (int q = 0; q < 16; ++q) CHECK(os1.beams[q].w == plain.beams[q].w);

    CHECK((odft_codebook(4, 2).beams[2].w - dft_codebook(4).beams[1].w).norm() < 1e-15);
    // Entry convention exp(-j 2 pi n q / Q').
    CHECK(std::abs(odft.beams[1].w[1] - std::polar(1 / std::sqrt(32.0), -2 * std::numbers::pi / 128)) < 1e-15);
}

TEST_CASE("sensing codebook picks evenly spaced DFT beams", "[codebook]") {
    CHECK(sensing_indices(32, 8) == std::vector<int>{0, 4, 8, 12, 16, 20, 24, 28});
    CHECK(sensing_indices(32, 32).back() == 31);
    const auto s = sensing_codebook(32, 8);
    CHECK(s.beams[3].w == dft_codebook(32).beams[12].w);
    CHECK_THROWS_AS(sensing_codebook(32, 0), std::invalid_argument);
    CHECK_THROWS_AS(sensing_codebook(32, 33), std::invalid_argument);
}

TEST_CASE("quantize_phases", "[codebook]") {
    BeamVector w{Eigen::VectorXcd(2)};
    w.w << std::polar(0.5, 0.0), std::polar(0.5, 0.9 * std::numbers::pi);
    const auto q1 = quantize_phases(w, 1);
    CHECK(q1.w[0] == w.w[0]);
    CHECK(std::arg(q1.w[1]) == Approx(std::numbers::pi));
    CHECK(std::abs(q1.w[1]) == Approx(0.5));

    Rng rng = substream(2, Stream::Paths);
    const auto h = random_channel(rng, 32);
    const auto m = mrt_beam(h);
    const auto q4 = quantize_phases(m, 4);
    for (int i = 0; i < 32; ++i) {
        CHECK(std::abs(std::remainder(std::arg(q4.w[i]) - std::arg(m.w[i]), 2 * std::numbers::pi)) <=
              std::numbers::pi / 16 + 1e-12);
        CHECK(std::abs(q4.w[i]) == Approx(1 / std::sqrt(32.0)));
    }
    CHECK_THROWS_AS(quantize_phases(w, 0), std::invalid_argument);
}

TEST_CASE("mrt_beam is the constant-modulus optimum", "[codebook]") {
    ChannelVector pos{Eigen::VectorXcd::Constant(4, cd(0.7, 0))};
    const auto w = mrt_beam(pos);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(w.w[i] - cd(0.5, 0)) < 1e-15);

    ChannelVector ar{array_response(0.4, 32, 0.5)};
    // (sum_i |h_i|)^2 / N = (32 / sqrt(32))^2 / 32 = 1.
    CHECK(beamform_gain(ar, mrt_beam(ar)) == Approx(1.0).epsilon(1e-12));

    Rng rng = substream(3, Stream::Paths);
    const auto odft = odft_codebook(32, 4);
    for (int t = 0; t < 50; ++t) {
        const auto h = random_channel(rng, 32);
        const double g = beamform_gain(h, mrt_beam(h));
        for (const auto& b : odft.beams) CHECK(g >= beamform_gain(h, b) * (1 - 1e-12));
        // Quantization keeps at least cos^2(pi/16) of the unquantized gain.
        CHECK(beamform_gain(h, quantize_phases(mrt_beam(h), 4)) >= std::pow(std::cos(std::numbers::pi / 16), 2) * g);
    }
    CHECK_THROWS_AS(mrt_beam(ChannelVector{Eigen::VectorXcd::Zero(4)}), DegenerateInputError);
}

TEST_CASE("best_quantized_beam matches exhaustive 4-bit search at 4 antennas", "[codebook]") {
    Rng rng = substream(8, Stream::Paths);
    for (int t = 0; t < 6; ++t) {
        const auto h = random_channel(rng, 4);
        const double exhaustive = brute_force_4bit(h);
        const auto w = best_quantized_beam(h, 4);
        CHECK(beamform_gain(h, w) == Approx(exhaustive).epsilon(1e-12));
        CHECK(beamform_gain(h, w) >= beamform_gain(h, quantize_phases(mrt_beam(h), 4)) * (1 - 1e-12));
        for (int i = 0; i < 4; ++i) {
            const double k = std::arg(w.w[i]) / (2 * std::numbers::pi / 16);
            CHECK(std::abs(k - std::round(k)) < 1e-9);
        }
    }
    // A channel whose phases already lie on the 4-bit grid reaches the MRT gain.
    ChannelVector grid{Eigen::VectorXcd(4)};
    for (int i = 0; i < 4; ++i) grid.h[i] = std::polar(0.5, i * 3 * 2 * std::numbers::pi / 16);
    CHECK(brute_force_4bit(grid) == Approx(beamform_gain(grid, mrt_beam(grid))).epsilon(1e-12));
}

TEST_CASE("export_codebook writes rows and a sidecar", "[codebook]") {
    test::TempDir dir("codebook");
    export_codebook(dir / "cb.bin", odft_codebook(8, 2));
    CHECK(std::filesystem::file_size(dir / "cb.bin") == 16u * 8u * 16u);
    CHECK(std::filesystem::exists(dir / "cb.bin.json"));
    const auto rows = import_channels(dir / "cb.bin", 8);
    CHECK(rows[3].h == odft_codebook(8, 2).beams[3].w);
}
