// SPDX-License-Identifier: Apache-2.0
//
// RSSI beam sweeps, optimal-beam labeling and dataset materialization.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bae/channel.hpp"
#include "bae/codebook.hpp"
#include "bae/rng.hpp"

namespace bae {

struct NoiseModel {
    enum class Mode { None, Fixed, Ranged };

    Mode mode = Mode::None;
    double noise_power_dbm = -90.0;
    double range_low_dbm = -90.0;
    double range_high_dbm = -28.0;
    /// Ranged mode: one noise power per sample when true, one per swept beam when false.
    bool per_sample_draw = true;

    void validate() const;

    static NoiseModel none() { return {}; }
    static NoiseModel fixed(double dbm) {
        NoiseModel m;
        m.mode = Mode::Fixed;
        m.noise_power_dbm = dbm;
        return m;
    }
    static NoiseModel ranged(double low_dbm, double high_dbm) {
        NoiseModel m;
        m.mode = Mode::Ranged;
        m.range_low_dbm = low_dbm;
        m.range_high_dbm = high_dbm;
        return m;
    }
};

void to_json(nlohmann::json& j, const NoiseModel& n);
void from_json(const nlohmann::json& j, NoiseModel& n);

/// Preprocessing applied by the model to stored (linear power) features.
enum class FeatureScale { Linear, Db };

std::string to_string(FeatureScale s);
FeatureScale feature_scale_from_string(const std::string& s);

struct Sample {
    std::vector<float> rssi;  ///< linear received power per sensing beam (mW)
    std::uint16_t label = 0;  ///< optimal narrow-beam index
    float snr_db = 0.0f;      ///< realized SNR on the labeled beam
    std::uint32_t ue_id = 0;
};

struct SplitFractions {
    double train = 0.70;
    double validation = 0.10;
    double test = 0.15;
    double calibration = 0.05;
};

struct DatasetConfig {
    ScenarioConfig scenario;
    NoiseModel noise;
    double p_bs_dbm = 30.0;
    /// Large-scale attenuation between BS and UE; the synthetic channels are
    /// normalized to unit peak magnitude and carry no path loss of their own.
    double path_loss_db = 50.0;
    int m_w = 32;
    int oversampling = 4;
    SplitFractions fractions;
    std::uint64_t seed = 1;
    FeatureScale feature_scale = FeatureScale::Db;

    void validate() const;

    /// Received-power scale p_bs * 10^(-path_loss/10) in mW.
    double effective_power_mw() const;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct DatasetMeta {
    int m_w = 0;
    int q = 0;
    int n_bs = 0;
    int oversampling = 1;
    double p_bs_dbm = 0.0;
    double path_loss_db = 0.0;
    std::uint64_t seed = 0;
    NoiseModel noise;
    FeatureScale feature_scale = FeatureScale::Db;
    nlohmann::json scenario = nlohmann::json::object();
    std::string config_hash;
    bool adversarial = false;
    nlohmann::json attack;  ///< AttackConfig of an adversarial set, null otherwise
};

struct Dataset {
    std::vector<Sample> train, validation, calibration, test;
    DatasetMeta meta;

    bool operator==(const Dataset&) const;
};

bool operator==(const Sample& a, const Sample& b);

enum class Split { Train, Validation, Calibration, Test };

std::span<const Sample> split_of(const Dataset& d, Split s);
const char* to_string(Split s);

double dbm_to_mw(double dbm);
double mw_to_dbm(double mw);

/// |h^H w|^2. Throws std::invalid_argument on length mismatch.
double beamform_gain(const ChannelVector& h, const BeamVector& w);

/// p_bs * |h^H w|^2 / sigma2 (linear). Throws std::invalid_argument for sigma2 <= 0.
double snr(const ChannelVector& h, const BeamVector& w, double p_bs, double sigma2);

/// Codebook index maximizing |h^H w_q|^2, lowest index on ties.
int optimal_beam(const ChannelVector& h, const Codebook& narrow);

/// Noise power (mW) for one measurement under `noise`; 0 for mode None.
double draw_noise_power(const NoiseModel& noise, Rng& rng);

struct Measurement {
    std::vector<double> rssi;
    double noise_power_mw = 0.0;  ///< per-sample draw (mean over beams in per-beam mode)
};

/// RSSI sweep: entry i = |sqrt(p_bs) h^H w_i + z_i|^2 with unit pilot.
Measurement measure(const ChannelVector& h, const Codebook& sensing, double p_bs, const NoiseModel& noise,
                    Rng& rng);
std::vector<double> measure_rssi(const ChannelVector& h, const Codebook& sensing, double p_bs,
                                 const NoiseModel& noise, Rng& rng);

struct SplitSizes {
    std::size_t train, validation, calibration, test;
};

SplitSizes split_sizes(std::size_t n, const SplitFractions& f);

/// Seeded permutation of UE ids assigned to the splits in order
/// train, validation, calibration, test.
std::array<std::vector<std::uint32_t>, 4> assign_splits(std::size_t n, const SplitFractions& f, std::uint64_t seed);

/// Labels and measures one UE. The noise substream is keyed by (noise_seed, ue_id),
/// so labels never depend on the noise model.
Sample make_sample(const ChannelVector& h, std::uint32_t ue_id, const Codebook& sensing, const Codebook& narrow,
                   double p_rx, const NoiseModel& noise, std::uint64_t noise_seed);

/// Synthesizes channels, labels them on noiseless gains and measures features.
Dataset build_dataset(const DatasetConfig& config);

/// Same as build_dataset but reuses an already generated channel set.
Dataset build_dataset(const DatasetConfig& config, std::span<const ChannelVector> channels);

/// Fraction of stored labels reproduced by an exhaustive narrow-beam search written
/// with scalar loops (no codebook/gain helpers).
double verify_labels(const Dataset& d, std::span<const ChannelVector> channels);

/// Dataset file: "BAE1" | u32 header length | JSON header | records | CRC32.
/// Record: m_w float32 features, u16 label, float32 snr_db.
std::vector<std::uint8_t> encode_dataset(const Dataset& d);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

inline constexpr int kDatasetVersion = 1;

}  // namespace bae
