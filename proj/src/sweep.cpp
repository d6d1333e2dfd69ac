// SPDX-License-Identifier: Apache-2.0
#include "bae/sweep.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "bae/binio.hpp"
#include "bae/error.hpp"
#include "bae/json_enum.hpp"

namespace bae {

using nlohmann::json;

BAE_JSON_ENUM(NoiseModel::Mode, {{NoiseModel::Mode::None, "none"},
                                                {NoiseModel::Mode::Fixed, "fixed"},
                                                {NoiseModel::Mode::Ranged, "ranged"}})

void NoiseModel::validate() const {
    if (mode == Mode::Fixed && !std::isfinite(noise_power_dbm)) throw ConfigError("noise_power_dbm must be finite");
    if (mode == Mode::Ranged && !(range_low_dbm <= range_high_dbm))
        throw ConfigError("noise range must satisfy low <= high");
}

void to_json(json& j, const NoiseModel& n) {
    j = json{{"mode", n.mode},
             {"noise_power_dbm", n.noise_power_dbm},
             {"noise_power_range_dbm", {n.range_low_dbm, n.range_high_dbm}},
             {"per_sample_draw", n.per_sample_draw}};
}

void from_json(const json& j, NoiseModel& n) {
    NoiseModel d;
    n.mode = j.value("mode", d.mode);
    n.noise_power_dbm = j.value("noise_power_dbm", d.noise_power_dbm);
    if (j.contains("noise_power_range_dbm")) {
        const auto& r = j.at("noise_power_range_dbm");
        if (!r.is_array() || r.size() != 2) throw ConfigError("noise_power_range_dbm must be [low, high]");
        n.range_low_dbm = r[0].get<double>();
        n.range_high_dbm = r[1].get<double>();
    } else {
        n.range_low_dbm = d.range_low_dbm;
        n.range_high_dbm = d.range_high_dbm;
    }
    n.per_sample_draw = j.value("per_sample_draw", d.per_sample_draw);
}

std::string to_string(FeatureScale s) { return s == FeatureScale::Db ? "db" : "linear"; }

FeatureScale feature_scale_from_string(const std::string& s) {
    if (s == "db") return FeatureScale::Db;
    if (s == "linear") return FeatureScale::Linear;
    throw ConfigError("unknown feature_scale '" + s + "'");
}

void DatasetConfig::validate() const {
    scenario.validate();
    noise.validate();
    if (m_w < 1 || m_w > scenario.n_bs) throw ConfigError("dataset.m_w must be in [1, n_bs]");
    if (oversampling < 1) throw ConfigError("dataset.oversampling must be >= 1");
    if (scenario.n_bs * oversampling > 65535) throw ConfigError("narrow codebook too large for u16 labels");
    const auto& f = fractions;
    for (double x : {f.train, f.validation, f.test, f.calibration})
        if (!(x >= 0.0)) throw ConfigError("split fractions must be >= 0");
    if (std::abs(f.train + f.validation + f.test + f.calibration - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (!(f.calibration > 0.0)) throw ConfigError("calibration share must be nonzero");
    if (!std::isfinite(p_bs_dbm) || !std::isfinite(path_loss_db)) throw ConfigError("power terms must be finite");
}

double DatasetConfig::effective_power_mw() const { return dbm_to_mw(p_bs_dbm - path_loss_db); }

void to_json(json& j, const DatasetConfig& c) {
    j = json{{"scenario", c.scenario},
             {"noise", c.noise},
             {"p_bs_dbm", c.p_bs_dbm},
             {"path_loss_db", c.path_loss_db},
             {"m_w", c.m_w},
             {"oversampling", c.oversampling},
             {"fractions",
              {{"train", c.fractions.train},
               {"validation", c.fractions.validation},
               {"test", c.fractions.test},
               {"calibration", c.fractions.calibration}}},
             {"seed", c.seed},
             {"feature_scale", to_string(c.feature_scale)}};
}

void from_json(const json& j, DatasetConfig& c) {
    DatasetConfig d;
    c.scenario = j.value("scenario", d.scenario);
    c.noise = j.value("noise", d.noise);
    c.p_bs_dbm = j.value("p_bs_dbm", d.p_bs_dbm);
    c.path_loss_db = j.value("path_loss_db", d.path_loss_db);
    c.m_w = j.value("m_w", c.scenario.n_bs);
    c.oversampling = j.value("oversampling", d.oversampling);
    c.fractions = d.fractions;
    if (j.contains("fractions")) {
        const auto& f = j.at("fractions");
        c.fractions.train = f.value("train", d.fractions.train);
        c.fractions.validation = f.value("validation", d.fractions.validation);
        c.fractions.test = f.value("test", d.fractions.test);
        c.fractions.calibration = f.value("calibration", d.fractions.calibration);
    }
    c.seed = j.value("seed", d.seed);
    c.feature_scale = feature_scale_from_string(j.value("feature_scale", std::string("db")));
}

bool operator==(const Sample& a, const Sample& b) {
    // Bitwise float comparison so NaN/inf metadata round-trips compare equal.
    auto same = [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); };
    if (a.label != b.label || a.ue_id != b.ue_id || !same(a.snr_db, b.snr_db) || a.rssi.size() != b.rssi.size())
        return false;
    for (std::size_t i = 0; i < a.rssi.size(); ++i)
        if (!same(a.rssi[i], b.rssi[i])) return false;
    return true;
}

bool Dataset::operator==(const Dataset& o) const {
    return train == o.train && validation == o.validation && calibration == o.calibration && test == o.test &&
           encode_dataset(*this) == encode_dataset(o);
}

std::span<const Sample> split_of(const Dataset& d, Split s) {
    switch (s) {
        case Split::Train: return d.train;
        case Split::Validation: return d.validation;
        case Split::Calibration: return d.calibration;
        case Split::Test: return d.test;
    }
    return {};
}

const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Calibration: return "calibration";
        case Split::Test: return "test";
    }
    return "?";
}

double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
double mw_to_dbm(double mw) { return 10.0 * std::log10(mw); }

double beamform_gain(const ChannelVector& h, const BeamVector& w) {
    if (h.h.size() != w.w.size()) throw std::invalid_argument("beamform_gain: length mismatch");
    return std::norm(h.h.dot(w.w));  // Eigen's dot conjugates the left operand: h^H w
}

double snr(const ChannelVector& h, const BeamVector& w, double p_bs, double sigma2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("snr: noise power must be > 0");
    return p_bs * beamform_gain(h, w) / sigma2;
}

int optimal_beam(const ChannelVector& h, const Codebook& narrow) {
    if (narrow.beams.empty()) throw std::invalid_argument("optimal_beam: empty codebook");
    int best = 0;
    double best_gain = -1.0;
    for (int q = 0; q < narrow.size(); ++q) {
        const double g = beamform_gain(h, narrow.beams[q]);
        if (g > best_gain) {
            best_gain = g;
            best = q;
        }
    }
    return best;
}

double draw_noise_power(const NoiseModel& noise, Rng& rng) {
    switch (noise.mode) {
        case NoiseModel::Mode::None: return 0.0;
        case NoiseModel::Mode::Fixed: return dbm_to_mw(noise.noise_power_dbm);
        case NoiseModel::Mode::Ranged: {
            const double dbm = noise.range_low_dbm + uniform01(rng) * (noise.range_high_dbm - noise.range_low_dbm);
            return dbm_to_mw(dbm);
        }
    }
    return 0.0;
}

Measurement measure(const ChannelVector& h, const Codebook& sensing, double p_bs, const NoiseModel& noise,
                    Rng& rng) {
    Measurement m;
    m.rssi.resize(sensing.beams.size());
    const double amp = std::sqrt(p_bs);
    const bool per_beam = noise.mode == NoiseModel::Mode::Ranged && !noise.per_sample_draw;
    double sigma2 = per_beam ? 0.0 : draw_noise_power(noise, rng);
    double sigma2_sum = 0.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < sensing.beams.size(); ++i) {
        if (h.h.size() != sensing.beams[i].w.size()) throw std::invalid_argument("measure_rssi: length mismatch");
        cd r = amp * h.h.dot(sensing.beams[i].w);
        if (per_beam) sigma2 = draw_noise_power(noise, rng);
        if (sigma2 > 0.0) {
            const double s = std::sqrt(sigma2 / 2.0);
            const double re = gauss(rng);
            const double im = gauss(rng);
            r += cd(s * re, s * im);
        }
        sigma2_sum += sigma2;
        m.rssi[i] = std::norm(r);
    }
    m.noise_power_mw = per_beam ? sigma2_sum / static_cast<double>(std::max<std::size_t>(1, m.rssi.size())) : sigma2;
    return m;
}

std::vector<double> measure_rssi(const ChannelVector& h, const Codebook& sensing, double p_bs,
                                 const NoiseModel& noise, Rng& rng) {
    return measure(h, sensing, p_bs, noise, rng).rssi;
}

SplitSizes split_sizes(std::size_t n, const SplitFractions& f) {
    auto part = [n](double frac) { return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))); };
    SplitSizes s{part(f.train), part(f.validation), part(f.calibration), 0};
    std::size_t used = s.train + s.validation + s.calibration;
    if (used > n) {
        // Rounding overshoot: take it back from the training share.
        s.train -= used - n;
        used = n;
    }
    s.test = n - used;
    return s;
}

std::array<std::vector<std::uint32_t>, 4> assign_splits(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
    std::vector<std::uint32_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0u);
    Rng rng = substream(seed, Stream::Split);
    // Fisher-Yates with our own index draw so the permutation is library independent.
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(ids[i - 1], ids[std::min(j, i - 1)]);
    }
    const auto sizes = split_sizes(n, f);
    std::array<std::vector<std::uint32_t>, 4> out;
    auto it = ids.begin();
    const std::size_t counts[4] = {sizes.train, sizes.validation, sizes.calibration, sizes.test};
    for (int s = 0; s < 4; ++s) {
        out[s].assign(it, it + static_cast<std::ptrdiff_t>(counts[s]));
        it += static_cast<std::ptrdiff_t>(counts[s]);
    }
    return out;
}

Sample make_sample(const ChannelVector& h, std::uint32_t ue_id, const Codebook& sensing, const Codebook& narrow,
                   double p_rx, const NoiseModel& noise, std::uint64_t noise_seed) {
    Sample s;
    s.ue_id = ue_id;
    const int label = optimal_beam(h, narrow);
    s.label = static_cast<std::uint16_t>(label);
    Rng rng = substream(noise_seed, Stream::Noise, ue_id);
    const auto m = measure(h, sensing, p_rx, noise, rng);
    s.rssi.assign(m.rssi.begin(), m.rssi.end());
    const double signal = p_rx * beamform_gain(h, narrow.beams[label]);
    s.snr_db = m.noise_power_mw > 0.0 ? static_cast<float>(10.0 * std::log10(signal / m.noise_power_mw))
                                      : std::numeric_limits<float>::infinity();
    return s;
}

Dataset build_dataset(const DatasetConfig& config) {
    config.validate();
    const auto channels = generate_channels(config.scenario);
    return build_dataset(config, channels);
}

Dataset build_dataset(const DatasetConfig& config, std::span<const ChannelVector> channels) {
    config.validate();
    if (channels.empty()) throw DegenerateInputError("build_dataset: empty scenario");
    const auto sensing = sensing_codebook(config.scenario.n_bs, config.m_w);
    const auto narrow = odft_codebook(config.scenario.n_bs, config.oversampling);
    const double p_rx = config.effective_power_mw();

    Dataset d;
    d.meta.m_w = config.m_w;
    d.meta.q = narrow.size();
    d.meta.n_bs = config.scenario.n_bs;
    d.meta.oversampling = config.oversampling;
    d.meta.p_bs_dbm = config.p_bs_dbm;
    d.meta.path_loss_db = config.path_loss_db;
    d.meta.seed = config.seed;
    d.meta.noise = config.noise;
    d.meta.feature_scale = config.feature_scale;
    d.meta.scenario = config.scenario;

    const auto ids = assign_splits(channels.size(), config.fractions, config.seed);
    std::vector<Sample>* targets[4] = {&d.train, &d.validation, &d.calibration, &d.test};
    for (int s = 0; s < 4; ++s) {
        targets[s]->reserve(ids[s].size());
        for (std::uint32_t u : ids[s])
            targets[s]->push_back(make_sample(channels[u], u, sensing, narrow, p_rx, config.noise, config.seed));
    }
    return d;
}

double verify_labels(const Dataset& d, std::span<const ChannelVector> channels) {
    const int n_bs = d.meta.n_bs;
    const int q_total = d.meta.q;
    const double two_pi = 2.0 * std::numbers::pi;
    std::size_t total = 0, agree = 0;
    for (Split s : {Split::Train, Split::Validation, Split::Calibration, Split::Test}) {
        for (const auto& sample : split_of(d, s)) {
            if (sample.ue_id >= channels.size()) throw std::invalid_argument("verify_labels: ue_id outside channel set");
            const auto& h = channels[sample.ue_id].h;
            int best = 0;
            double best_gain = -1.0;
            for (int q = 0; q < q_total; ++q) {
                double re = 0.0, im = 0.0;
                for (int n = 0; n < n_bs; ++n) {
                    // conj(h_n) * exp(-j 2 pi n q / Q)
                    const double ang = -two_pi * static_cast<double>(n) * q / q_total;
                    const double wr = std::cos(ang), wi = std::sin(ang);
                    const double hr = h[n].real();
                    const double hi = -h[n].imag();
                    re += hr * wr - hi * wi;
                    im += hr * wi + hi * wr;
                }
                const double g = (re * re + im * im) / n_bs;
                if (g > best_gain) {
                    best_gain = g;
                    best = q;
                }
            }
            ++total;
            if (best == sample.label) ++agree;
        }
    }
    return total ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
}

namespace {

constexpr std::array<char, 4> kMagic = {'B', 'A', 'E', '1'};

json meta_header(const Dataset& d) {
    json ids = json::object();
    for (Split s : {Split::Train, Split::Validation, Split::Calibration, Split::Test}) {
        json arr = json::array();
        for (const auto& x : split_of(d, s)) arr.push_back(x.ue_id);
        ids[to_string(s)] = std::move(arr);
    }
    json h{{"version", kDatasetVersion},
           {"m_w", d.meta.m_w},
           {"q", d.meta.q},
           {"n_bs", d.meta.n_bs},
           {"oversampling", d.meta.oversampling},
           {"counts",
            {{"train", d.train.size()},
             {"validation", d.validation.size()},
             {"calibration", d.calibration.size()},
             {"test", d.test.size()}}},
           {"p_bs_dbm", d.meta.p_bs_dbm},
           {"path_loss_db", d.meta.path_loss_db},
           {"noise", d.meta.noise},
           {"seed", d.meta.seed},
           {"feature_scale", to_string(d.meta.feature_scale)},
           {"scenario", d.meta.scenario},
           {"config_hash", d.meta.config_hash},
           {"adversarial", d.meta.adversarial},
           {"ue_ids", std::move(ids)}};
    if (!d.meta.attack.is_null()) h["attack"] = d.meta.attack;
    return h;
}

std::size_t record_size(int m_w) { return static_cast<std::size_t>(m_w) * 4 + 2 + 4; }

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
    binio::Writer w;
    for (Split s : {Split::Train, Split::Validation, Split::Calibration, Split::Test}) {
        for (const auto& x : split_of(d, s)) {
            if (static_cast<int>(x.rssi.size()) != d.meta.m_w)
                throw std::invalid_argument("encode_dataset: feature length differs from m_w");
            for (float v : x.rssi) w.f32(v);
            w.u16(x.label);
            w.f32(x.snr_db);
        }
    }
    return binio::pack(kMagic, meta_header(d), w.buffer());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    auto unpacked = binio::unpack(bytes, kMagic, [](const json& h) {
        if (h.value("version", -1) != kDatasetVersion)
            throw FormatError(FormatError::Kind::Version,
                              "unsupported dataset version " + std::to_string(h.value("version", -1)));
        try {
            const auto& c = h.at("counts");
            const std::size_t n = c.at("train").get<std::size_t>() + c.at("validation").get<std::size_t>() +
                                  c.at("calibration").get<std::size_t>() + c.at("test").get<std::size_t>();
            return n * record_size(h.at("m_w").get<int>());
        } catch (const json::exception& e) {
            throw FormatError(FormatError::Kind::Schema, std::string("dataset header: ") + e.what());
        }
    });
    const json& h = unpacked.header;
    Dataset d;
    try {
        d.meta.m_w = h.at("m_w").get<int>();
        d.meta.q = h.at("q").get<int>();
        d.meta.n_bs = h.value("n_bs", d.meta.m_w);
        d.meta.oversampling = h.value("oversampling", 1);
        d.meta.p_bs_dbm = h.at("p_bs_dbm").get<double>();
        d.meta.path_loss_db = h.value("path_loss_db", 0.0);
        d.meta.noise = h.at("noise").get<NoiseModel>();
        d.meta.seed = h.at("seed").get<std::uint64_t>();
        d.meta.feature_scale = feature_scale_from_string(h.at("feature_scale").get<std::string>());
        d.meta.scenario = h.value("scenario", json::object());
        d.meta.config_hash = h.value("config_hash", std::string());
        d.meta.adversarial = h.value("adversarial", false);
        if (h.contains("attack")) d.meta.attack = h.at("attack");
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("dataset header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("dataset header: ") + e.what());
    }

    binio::Reader r(unpacked.payload);
    const json& counts = h.at("counts");
    const json ids = h.value("ue_ids", json::object());
    std::vector<Sample>* targets[4] = {&d.train, &d.validation, &d.calibration, &d.test};
    std::uint32_t next_id = 0;
    int s = 0;
    for (Split split : {Split::Train, Split::Validation, Split::Calibration, Split::Test}) {
        const auto n = counts.at(to_string(split)).get<std::size_t>();
        const json* id_list = ids.contains(to_string(split)) ? &ids.at(to_string(split)) : nullptr;
        if (id_list && id_list->size() != n)
            throw FormatError(FormatError::Kind::Schema, "ue_ids length differs from record count");
        auto& out = *targets[s++];
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto& x = out[i];
            x.rssi.resize(d.meta.m_w);
            for (auto& v : x.rssi) v = r.f32();
            x.label = r.u16();
            x.snr_db = r.f32();
            x.ue_id = id_list ? (*id_list)[i].get<std::uint32_t>() : next_id;
            ++next_id;
            if (x.label >= d.meta.q) throw FormatError(FormatError::Kind::Schema, "label outside [0, q)");
        }
    }
    return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
    binio::write_file(path, encode_dataset(d));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(binio::read_file(path)); }

}  // namespace bae
