// SPDX-License-Identifier: Apache-2.0
#include "bae/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bae/binio.hpp"
#include "bae/error.hpp"
#include "bae/json_enum.hpp"

namespace bae {

using nlohmann::json;

BAE_JSON_ENUM(GainModel, {{GainModel::LosDominant, "los_dominant"},
                                         {GainModel::NlosBalanced, "nlos_balanced"}})
BAE_JSON_ENUM(AngleSampling, {{AngleSampling::Uniform, "uniform"},
                                             {AngleSampling::SinUniform, "sin_uniform"}})

void ScenarioConfig::validate() const {
    constexpr double half_pi = std::numbers::pi / 2;
    if (n_bs < 1) throw ConfigError("scenario.n_bs must be >= 1");
    if (n_paths < 1) throw ConfigError("scenario.n_paths must be >= 1");
    if (!(d_over_lambda > 0)) throw ConfigError("scenario.d_over_lambda must be > 0");
    if (n_ue < 1) throw ConfigError("scenario.n_ue must be >= 1");
    if (!(angle_min > -half_pi && angle_max < half_pi && angle_min <= angle_max))
        throw ConfigError("scenario angle range must lie inside (-pi/2, pi/2)");
    if (!(los_gain > 0) || !(rayleigh_mean > 0)) throw ConfigError("scenario gain magnitudes must be > 0");
}

void to_json(json& j, const ScenarioConfig& c) {
    j = json{{"n_bs", c.n_bs},
             {"n_paths", c.n_paths},
             {"d_over_lambda", c.d_over_lambda},
             {"n_ue", c.n_ue},
             {"angle_range", {c.angle_min, c.angle_max}},
             {"gain_model", c.gain_model},
             {"angle_sampling", c.angle_sampling},
             {"los_gain", c.los_gain},
             {"rayleigh_mean", c.rayleigh_mean},
             {"seed", c.seed}};
}

void from_json(const json& j, ScenarioConfig& c) {
    ScenarioConfig d;
    c.n_bs = j.value("n_bs", d.n_bs);
    c.n_paths = j.value("n_paths", d.n_paths);
    c.d_over_lambda = j.value("d_over_lambda", d.d_over_lambda);
    c.n_ue = j.value("n_ue", d.n_ue);
    if (j.contains("angle_range")) {
        const auto& r = j.at("angle_range");
        if (!r.is_array() || r.size() != 2) throw ConfigError("scenario.angle_range must be [low, high]");
        c.angle_min = r[0].get<double>();
        c.angle_max = r[1].get<double>();
    } else {
        c.angle_min = d.angle_min;
        c.angle_max = d.angle_max;
    }
    c.gain_model = j.value("gain_model", d.gain_model);
    c.angle_sampling = j.value("angle_sampling", d.angle_sampling);
    c.los_gain = j.value("los_gain", d.los_gain);
    c.rayleigh_mean = j.value("rayleigh_mean", d.rayleigh_mean);
    c.seed = j.value("seed", d.seed);
}

Eigen::VectorXcd array_response(double phi, int n_bs, double d_over_lambda) {
    if (!std::isfinite(phi)) throw std::invalid_argument("array_response: angle must be finite");
    if (n_bs < 1) throw std::invalid_argument("array_response: n_bs must be >= 1");
    const double step = 2.0 * std::numbers::pi * d_over_lambda * std::sin(phi);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_bs));
    Eigen::VectorXcd b(n_bs);
    for (int n = 0; n < n_bs; ++n) b[n] = std::polar(scale, step * n);
    return b;
}

namespace {

// Rayleigh magnitude with the given mean, uniform phase.
cd rayleigh_gain(Rng& rng, double mean) {
    const double sigma = mean / std::sqrt(std::numbers::pi / 2.0);
    const double u = 1.0 - uniform01(rng);  // (0, 1]
    const double magnitude = sigma * std::sqrt(-2.0 * std::log(u));
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    return std::polar(magnitude, phase);
}

}  // namespace

PathSet synth_paths(Rng& rng, const ScenarioConfig& config) {
    config.validate();
    PathSet paths;
    paths.angles.reserve(config.n_paths);
    paths.gains.reserve(config.n_paths);
    for (int l = 0; l < config.n_paths; ++l) {
        const double u = uniform01(rng);
        double phi;
        if (config.angle_sampling == AngleSampling::Uniform) {
            phi = config.angle_min + u * (config.angle_max - config.angle_min);
        } else {
            const double lo = std::sin(config.angle_min);
            const double hi = std::sin(config.angle_max);
            phi = std::asin(lo + u * (hi - lo));
        }
        paths.angles.push_back(phi);
    }
    for (int l = 0; l < config.n_paths; ++l) {
        if (config.gain_model == GainModel::LosDominant && l == 0) {
            const double phase = 2.0 * std::numbers::pi * uniform01(rng);
            paths.gains.push_back(std::polar(config.los_gain, phase));
            continue;
        }
        cd g = rayleigh_gain(rng, config.rayleigh_mean);
        // The LOS path stays the strongest.
        if (config.gain_model == GainModel::LosDominant && std::abs(g) > config.los_gain)
            g *= config.los_gain / std::abs(g);
        paths.gains.push_back(g);
    }
    return paths;
}

ChannelVector assemble_channel(const PathSet& paths, const ScenarioConfig& config) {
    if (paths.gains.size() != paths.angles.size())
        throw std::invalid_argument("assemble_channel: gains and angles differ in length");
    ChannelVector out{Eigen::VectorXcd::Zero(config.n_bs)};
    for (std::size_t l = 0; l < paths.gains.size(); ++l)
        out.h += paths.gains[l] * array_response(paths.angles[l], config.n_bs, config.d_over_lambda);
    return out;
}

std::vector<ChannelVector> normalize_channel_set(std::vector<ChannelVector> channels) {
    double peak = 0.0;
    for (const auto& c : channels)
        for (Eigen::Index i = 0; i < c.h.size(); ++i) peak = std::max(peak, std::abs(c.h[i]));
    if (!(peak > 0.0)) throw DegenerateInputError("normalize_channel_set: set is empty or all-zero");
    for (auto& c : channels) c.h /= peak;
    return channels;
}

std::vector<ChannelVector> generate_channels(const ScenarioConfig& config) {
    config.validate();
    std::vector<ChannelVector> channels;
    channels.reserve(config.n_ue);
    for (int u = 0; u < config.n_ue; ++u) {
        Rng rng = substream(config.seed, Stream::Paths, static_cast<std::uint64_t>(u));
        channels.push_back(assemble_channel(synth_paths(rng, config), config));
    }
    return normalize_channel_set(std::move(channels));
}

void export_channels(const std::filesystem::path& path, std::span<const ChannelVector> channels) {
    binio::Writer w;
    for (const auto& c : channels)
        for (Eigen::Index i = 0; i < c.h.size(); ++i) {
            w.f64(c.h[i].real());
            w.f64(c.h[i].imag());
        }
    binio::write_file(path, w.buffer());
}

std::vector<ChannelVector> import_channels(const std::filesystem::path& path, int n_bs) {
    const auto bytes = binio::read_file(path);
    const std::size_t row = static_cast<std::size_t>(n_bs) * 16;
    if (n_bs < 1 || bytes.size() % row != 0)
        throw FormatError(FormatError::Kind::Truncated, "channel file size is not a multiple of the row size");
    binio::Reader r(bytes);
    std::vector<ChannelVector> out(bytes.size() / row, ChannelVector{Eigen::VectorXcd(n_bs)});
    for (auto& c : out)
        for (int i = 0; i < n_bs; ++i) {
            const double re = r.f64();
            c.h[i] = cd(re, r.f64());
        }
    return out;
}

}  // namespace bae
