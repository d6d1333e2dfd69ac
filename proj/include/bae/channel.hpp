// SPDX-License-Identifier: Apache-2.0
//
// Geometric multipath channel synthesis for a BS-side uniform linear array and
// single-antenna UEs.
#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "bae/rng.hpp"

namespace bae {

using cd = std::complex<double>;

enum class GainModel {
    LosDominant,   ///< first path magnitude fixed, remaining paths Rayleigh
    NlosBalanced,  ///< all paths Rayleigh i.i.d.
};

enum class AngleSampling {
    Uniform,     ///< uniform in angle
    SinUniform,  ///< uniform in sin(angle)
};

struct ScenarioConfig {
    int n_bs = 32;
    int n_paths = 5;
    double d_over_lambda = 0.5;
    int n_ue = 1000;
    double angle_min = -1.0471975511965976;  // -pi/3
    double angle_max = 1.0471975511965976;
    GainModel gain_model = GainModel::LosDominant;
    AngleSampling angle_sampling = AngleSampling::Uniform;
    double los_gain = 1.0;        ///< LOS path magnitude (LosDominant)
    double rayleigh_mean = 0.3;   ///< mean magnitude of Rayleigh paths
    std::uint64_t seed = 1;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

struct PathSet {
    std::vector<cd> gains;
    std::vector<double> angles;
};

struct ChannelVector {
    Eigen::VectorXcd h;
};

/// Steering vector b(phi): entry n = exp(j 2 pi d/lambda n sin(phi)) / sqrt(n_bs).
Eigen::VectorXcd array_response(double phi, int n_bs, double d_over_lambda);

/// Draws one UE's path set from `rng` according to `config`.
PathSet synth_paths(Rng& rng, const ScenarioConfig& config);

/// h = sum_l gains[l] * b(angles[l]).
ChannelVector assemble_channel(const PathSet& paths, const ScenarioConfig& config);

/// Divides every entry by the largest entry magnitude across the whole set.
/// Throws DegenerateInputError for an empty or all-zero set.
std::vector<ChannelVector> normalize_channel_set(std::vector<ChannelVector> channels);

/// Synthesizes and normalizes `config.n_ue` channels. UE u draws from its own
/// substream, so the result does not depend on generation order.
std::vector<ChannelVector> generate_channels(const ScenarioConfig& config);

/// Writes rows of interleaved little-endian float64 (re, im).
void export_channels(const std::filesystem::path& path, std::span<const ChannelVector> channels);
std::vector<ChannelVector> import_channels(const std::filesystem::path& path, int n_bs);

}  // namespace bae
