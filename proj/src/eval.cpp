// SPDX-License-Identifier: Apache-2.0
#include "bae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "bae/error.hpp"
#include "bae/rng.hpp"

namespace bae {

using nlohmann::json;

double topk_accuracy(std::span<const std::vector<int>> predictions, std::span<const int> labels, int k) {
    if (k < 1) throw std::invalid_argument("topk_accuracy: k must be >= 1");
    if (predictions.size() != labels.size()) throw std::invalid_argument("topk_accuracy: length mismatch");
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& p = predictions[i];
        const auto end = p.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(p.size()));
        if (std::find(p.begin(), end, labels[i]) != end) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double spectral_efficiency(const ChannelVector& h, const BeamVector& w, double p_bs, double sigma2) {
    return std::log2(1.0 + snr(h, w, p_bs, sigma2));
}

int sweep_overhead(const MethodDescriptor& m) {
    switch (m.kind) {
        case SweepMethod::ExhaustiveDft: return m.n_bs;
        case SweepMethod::ExhaustiveOdft: return m.n_bs * m.oversampling;
        case SweepMethod::Proposed: return m.m_w + m.extra_k;
    }
    throw std::invalid_argument("sweep_overhead: unknown method");
}

// ---------------------------------------------------------------------------
// Reliability

std::size_t ReliabilityDiagram::total() const {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    return n;
}

int reliability_bin(double score, int n_bins) {
    if (n_bins < 1) throw std::invalid_argument("reliability: S must be >= 1");
    if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("reliability: score outside [0, 1]");
    const double S = n_bins;
    int s = std::min(static_cast<int>(std::floor(score * S)), n_bins - 1);
    // floor(score * S) can be off by one near an edge; settle against the edges themselves.
    while (s > 0 && score < s / S) --s;
    while (s < n_bins - 1 && score >= (s + 1) / S) ++s;
    return s;
}

ReliabilityDiagram reliability_diagram(std::span<const double> scores, std::span<const char> correct, int n_bins,
                                       std::string source) {
    if (n_bins < 1) throw std::invalid_argument("reliability: S must be >= 1");
    if (scores.size() != correct.size()) throw std::invalid_argument("reliability: length mismatch");
    ReliabilityDiagram d;
    d.source = std::move(source);
    d.n_bins = n_bins;
    d.bins.resize(static_cast<std::size_t>(n_bins));
    for (int s = 0; s < n_bins; ++s) {
        d.bins[s].low = static_cast<double>(s) / n_bins;
        d.bins[s].high = static_cast<double>(s + 1) / n_bins;
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& bin = d.bins[static_cast<std::size_t>(reliability_bin(scores[i], n_bins))];
        ++bin.count;
        if (correct[i]) ++bin.correct;
    }
    for (auto& bin : d.bins)
        if (bin.count > 0) bin.accuracy = static_cast<double>(bin.correct) / static_cast<double>(bin.count);
    return d;
}

// ---------------------------------------------------------------------------
// Config

void EvalConfig::validate() const {
    if (k_list.empty()) throw ConfigError("eval.k_list must not be empty");
    for (int k : k_list)
        if (k < 1) throw ConfigError("eval.k_list entries must be >= 1");
    if (bins < 1) throw ConfigError("eval.bins must be >= 1");
    for (double n : noise_levels_dbm)
        if (!std::isfinite(n)) throw ConfigError("eval.noise_levels_dbm must be finite");
    if (!std::isfinite(se_noise_dbm)) throw ConfigError("eval.se_noise_dbm must be finite");
    if (mrt_bits < 1 || mrt_bits > 8) throw ConfigError("eval.mrt_bits must be in [1, 8]");
    if (refine_k < 1) throw ConfigError("eval.refine_k must be >= 1");
}

void to_json(json& j, const EvalConfig& c) {
    j = json{{"k_list", c.k_list},       {"bins", c.bins},         {"noise_levels_dbm", c.noise_levels_dbm},
             {"se_noise_dbm", c.se_noise_dbm}, {"mrt_bits", c.mrt_bits}, {"refine_k", c.refine_k}};
}

void from_json(const json& j, EvalConfig& c) {
    const EvalConfig d;
    c.k_list = j.value("k_list", d.k_list);
    c.bins = j.value("bins", d.bins);
    c.noise_levels_dbm = j.value("noise_levels_dbm", d.noise_levels_dbm);
    c.se_noise_dbm = j.value("se_noise_dbm", d.se_noise_dbm);
    c.mrt_bits = j.value("mrt_bits", d.mrt_bits);
    c.refine_k = j.value("refine_k", d.refine_k);
}

const MethodMetrics& MetricsReport::method(const std::string& name) const {
    for (const auto& m : methods)
        if (m.name == name) return m;
    throw std::out_of_range("no method '" + name + "' in report");
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json topk_json(const std::map<int, double>& m) {
    if (m.empty()) return nullptr;
    json j = json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

json method_json(const MethodMetrics& m) {
    return json{{"topk_accuracy", topk_json(m.topk_accuracy)},
                {"mean_spectral_efficiency", optional_json(m.mean_spectral_efficiency)},
                {"swept_beams", m.swept_beams ? json(*m.swept_beams) : json(nullptr)},
                {"mean_score", {{"clean", optional_json(m.mean_score_clean)},
                                {"adversarial", optional_json(m.mean_score_adversarial)}}},
                {"adversarial_topk_accuracy", topk_json(m.adversarial_topk_accuracy)}};
}

json diagram_json(const ReliabilityDiagram& d) {
    json bins = json::array();
    for (const auto& b : d.bins)
        bins.push_back({{"low", b.low}, {"high", b.high}, {"count", b.count}, {"accuracy", optional_json(b.accuracy)}});
    return json{{"source", d.source}, {"n_bins", d.n_bins}, {"total", d.total()}, {"bins", bins}};
}

}  // namespace

void to_json(json& j, const MetricsReport& r) {
    json methods = json::object();
    for (const auto& m : r.methods) methods[m.name] = method_json(m);
    json sweep = json::array();
    for (const auto& p : r.noise_sweep) {
        json pm = json::object();
        for (const auto& m : p.methods)
            pm[m.name] = {{"topk_accuracy", topk_json(m.topk_accuracy)},
                          {"mean_spectral_efficiency", optional_json(m.mean_spectral_efficiency)}};
        sweep.push_back({{"noise_dbm", p.noise_dbm}, {"snr_db", p.snr_db}, {"methods", pm}});
    }
    json rel = json::array();
    for (const auto& d : r.reliability) rel.push_back(diagram_json(d));
    j = json{{"meta", r.meta},
             {"methods", methods},
             {"noise_sweep", sweep},
             {"reliability", rel},
             {"se_ordering", {{"samples", r.ordering.samples},
                              {"mrt_below_odft", r.ordering.mrt_below_odft},
                              {"odft_below_dl", r.ordering.odft_below_dl},
                              {"dft_above_odft", r.ordering.dft_above_odft},
                              {"dl_negative", r.ordering.dl_negative}}}};
}

// ---------------------------------------------------------------------------
// evaluate_all

namespace {

enum class Draw : std::uint64_t { Dft = 0, Odft = 1, Refine = 2 };

// Evaluation noise never reuses dataset streams; slot 0 is the stored test set,
// slot l + 1 the l-th sweep level.
Rng eval_rng(std::uint64_t seed, std::uint64_t slot, Draw draw, std::uint32_t ue) {
    return substream(seed, Stream::NoiseSweep, ((slot * 4 + static_cast<std::uint64_t>(draw)) << 32) | ue);
}

// Full ranking of a noisy sweep over `cb`, mapped to narrow-codebook indices.
std::vector<int> noisy_ranking(const ChannelVector& h, const Codebook& cb, int stride, double p, const NoiseModel& noise,
                               Rng rng) {
    const auto rssi = measure_rssi(h, cb, p, noise, rng);
    auto order = topk_indices(rssi, static_cast<int>(rssi.size()));
    for (auto& i : order) i *= stride;
    return order;
}

struct Heads {
    std::vector<DknnVerdict> verdicts;
    std::vector<std::vector<int>> dknn_rank;
    std::vector<std::vector<int>> softmax_rank;
    std::vector<double> softmax_conf;
};

Heads run_heads(const Eigen::MatrixXd& x, const ModelState& m, const NeighborIndex& idx, const CalibrationScores& c,
                int depth) {
    Heads h;
    h.verdicts = dknn_predict_batch(x, idx, c, m);
    const auto act = forward_batch(x, m);
    for (std::size_t b = 0; b < h.verdicts.size(); ++b) {
        h.dknn_rank.push_back(dknn_ranking(h.verdicts[b], depth));
        const auto col = act.logits.col(static_cast<Eigen::Index>(b));
        const Eigen::VectorXd p = softmax(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
        h.softmax_rank.push_back(topk_indices(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), depth));
        h.softmax_conf.push_back(p.maxCoeff());
    }
    return h;
}

std::map<int, double> topk_map(const std::vector<std::vector<int>>& preds, std::span<const int> labels,
                               const std::vector<int>& ks) {
    std::map<int, double> out;
    for (int k : ks) out[k] = topk_accuracy(preds, labels, k);
    return out;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

struct Env {
    const ModelState& model;
    const NeighborIndex& index;
    const CalibrationScores& calibration;
    std::span<const ChannelVector> channels;
    const EvalConfig& config;
    Codebook sensing, dft, narrow;
    double p_eff = 0.0;
    int depth = 1;
    std::uint64_t seed = 0;
};

struct SetResult {
    std::vector<MethodMetrics> methods;
    Heads heads;
    std::vector<int> labels;
    OrderingCheck ordering;
};

// Evaluates all methods on one feature set. `measure_noise` drives the noisy
// baselines; SE is computed at `sigma2`.
SetResult evaluate_set(const Env& env, std::span<const Sample> samples, const NoiseModel& measure_noise, double sigma2,
                       std::uint64_t slot) {
    SetResult r;
    r.labels = label_vector(samples);
    r.heads = run_heads(feature_matrix(samples), env.model, env.index, env.calibration, env.depth);
    const auto n = samples.size();
    const auto& ks = env.config.k_list;
    const NoiseModel se_noise = NoiseModel::fixed(mw_to_dbm(sigma2));

    std::vector<std::vector<int>> dft_rank(n), odft_rank(n), refined_rank(n);
    std::vector<double> se_mrt(n), se_odft(n), se_dft(n), se_dknn(n), se_soft(n), se_ref(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[i];
        if (s.ue_id >= env.channels.size()) throw std::invalid_argument("evaluate: sample UE id outside channel set");
        const auto& h = env.channels[s.ue_id];
        dft_rank[i] = noisy_ranking(h, env.dft, env.narrow.oversampling, env.p_eff, measure_noise,
                                    eval_rng(env.seed, slot, Draw::Dft, s.ue_id));
        odft_rank[i] = noisy_ranking(h, env.narrow, 1, env.p_eff, measure_noise,
                                     eval_rng(env.seed, slot, Draw::Odft, s.ue_id));

        // Refinement: probe the leading candidates with one noisy measurement each.
        const auto& rank = r.heads.dknn_rank[i];
        const int probes = std::min<int>(env.config.refine_k, static_cast<int>(rank.size()));
        Codebook probe;
        for (int c = 0; c < probes; ++c) probe.beams.push_back(env.narrow.beams[rank[c]]);
        Rng rng = eval_rng(env.seed, slot, Draw::Refine, s.ue_id);
        const auto rssi = measure_rssi(h, probe, env.p_eff, se_noise, rng);
        const int pick = static_cast<int>(std::max_element(rssi.begin(), rssi.end()) - rssi.begin());
        refined_rank[i] = {rank[pick]};
        for (int q : rank)
            if (q != rank[pick]) refined_rank[i].push_back(q);

        auto se = [&](const BeamVector& w) { return spectral_efficiency(h, w, env.p_eff, sigma2); };
        se_mrt[i] = se(best_quantized_beam(h, env.config.mrt_bits));
        se_odft[i] = se(env.narrow.beams[s.label]);
        double best_dft = 0.0;
        for (const auto& w : env.dft.beams) best_dft = std::max(best_dft, se(w));
        se_dft[i] = best_dft;
        se_dknn[i] = se(env.narrow.beams[r.heads.verdicts[i].prediction]);
        se_soft[i] = se(env.narrow.beams[r.heads.softmax_rank[i].front()]);
        se_ref[i] = se(env.narrow.beams[refined_rank[i].front()]);

        ++r.ordering.samples;
        if (se_mrt[i] < se_odft[i]) ++r.ordering.mrt_below_odft;
        if (se_odft[i] < se_dknn[i]) ++r.ordering.odft_below_dl;
        if (se_dft[i] > se_odft[i]) ++r.ordering.dft_above_odft;
        if (se_dknn[i] < 0.0) ++r.ordering.dl_negative;
    }

    const MethodDescriptor proposed{SweepMethod::Proposed, env.narrow.n_bs(), env.narrow.oversampling, env.sensing.size(), 0};
    auto add = [&](const char* name, const std::vector<std::vector<int>>* rank, const std::vector<double>& se,
                   std::optional<int> swept) {
        MethodMetrics m;
        m.name = name;
        if (rank) m.topk_accuracy = topk_map(*rank, r.labels, ks);
        m.mean_spectral_efficiency = mean(se);
        m.swept_beams = swept;
        r.methods.push_back(std::move(m));
    };
    add(kMethodDknn, &r.heads.dknn_rank, se_dknn, sweep_overhead(proposed));
    add(kMethodSoftmax, &r.heads.softmax_rank, se_soft, sweep_overhead(proposed));
    auto refined = proposed;
    refined.extra_k = env.config.refine_k;
    add(kMethodRefined, &refined_rank, se_ref, sweep_overhead(refined));
    add(kMethodDft, &dft_rank, se_dft, sweep_overhead({SweepMethod::ExhaustiveDft, env.narrow.n_bs(), 1, 0, 0}));
    add(kMethodOdft, &odft_rank, se_odft,
        sweep_overhead({SweepMethod::ExhaustiveOdft, env.narrow.n_bs(), env.narrow.oversampling, 0, 0}));
    add(kMethodMrt, nullptr, se_mrt, std::nullopt);
    return r;
}

std::vector<double> credibilities(const Heads& h) {
    std::vector<double> out;
    for (const auto& v : h.verdicts) out.push_back(v.credibility);
    return out;
}

std::vector<char> correctness(const std::vector<std::vector<int>>& rank, const std::vector<int>& labels) {
    std::vector<char> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.push_back(rank[i].front() == labels[i]);
    return out;
}

}  // namespace

MetricsReport evaluate_all(const ModelState& model, const NeighborIndex& index, const CalibrationScores& calibration,
                           const Dataset& dataset, std::span<const ChannelVector> channels, const EvalConfig& config,
                           const Dataset* adversarial) {
    config.validate();
    if (calibration.scores.empty()) throw ConfigError("evaluate: DkNN engine is not calibrated");
    if (dataset.test.empty()) throw std::invalid_argument("evaluate: empty test split");
    const auto& meta = dataset.meta;
    if (meta.q != model.config.num_classes) throw ConfigError("evaluate: model and dataset disagree on Q");

    const double p_eff = dbm_to_mw(meta.p_bs_dbm - meta.path_loss_db);
    int depth = std::max(config.refine_k, *std::max_element(config.k_list.begin(), config.k_list.end()));
    depth = std::min(depth, meta.q);
    const Env env{model,
                  index,
                  calibration,
                  channels,
                  config,
                  sensing_codebook(meta.n_bs, meta.m_w),
                  dft_codebook(meta.n_bs),
                  odft_codebook(meta.n_bs, meta.oversampling),
                  p_eff,
                  depth,
                  meta.seed};

    MetricsReport report;
    const double se_sigma2 = dbm_to_mw(config.se_noise_dbm);
    auto clean = evaluate_set(env, dataset.test, meta.noise, se_sigma2, 0);
    report.methods = clean.methods;
    report.ordering = clean.ordering;

    const auto clean_cred = credibilities(clean.heads);
    auto& dknn = report.methods[0];
    auto& soft = report.methods[1];
    dknn.mean_score_clean = mean(clean_cred);
    soft.mean_score_clean = mean(clean.heads.softmax_conf);
    report.reliability.push_back(reliability_diagram(clean_cred, correctness(clean.heads.dknn_rank, clean.labels),
                                                     config.bins, "dknn-credibility/clean"));
    report.reliability.push_back(reliability_diagram(clean.heads.softmax_conf,
                                                     correctness(clean.heads.softmax_rank, clean.labels), config.bins,
                                                     "softmax-confidence/clean"));

    if (adversarial) {
        if (adversarial->test.empty()) throw std::invalid_argument("evaluate: adversarial set has no samples");
        const auto labels = label_vector(adversarial->test);
        const auto adv = run_heads(feature_matrix(adversarial->test), model, index, calibration, depth);
        const auto adv_cred = credibilities(adv);
        dknn.mean_score_adversarial = mean(adv_cred);
        soft.mean_score_adversarial = mean(adv.softmax_conf);
        dknn.adversarial_topk_accuracy = topk_map(adv.dknn_rank, labels, config.k_list);
        soft.adversarial_topk_accuracy = topk_map(adv.softmax_rank, labels, config.k_list);
        report.reliability.push_back(reliability_diagram(adv_cred, correctness(adv.dknn_rank, labels), config.bins,
                                                         "dknn-credibility/adversarial"));
        report.reliability.push_back(reliability_diagram(adv.softmax_conf, correctness(adv.softmax_rank, labels),
                                                         config.bins, "softmax-confidence/adversarial"));
    }

    for (std::size_t l = 0; l < config.noise_levels_dbm.size(); ++l) {
        const double level = config.noise_levels_dbm[l];
        const auto noise = NoiseModel::fixed(level);
        std::vector<Sample> remeasured;
        remeasured.reserve(dataset.test.size());
        const std::uint64_t noise_seed = mix64(meta.seed ^ mix64(l + 1));
        for (const auto& s : dataset.test) {
            auto fresh = make_sample(channels[s.ue_id], s.ue_id, env.sensing, env.narrow, p_eff, noise, noise_seed);
            if (fresh.label != s.label) throw FormatError(FormatError::Kind::Schema, "evaluate: channel set does not reproduce labels");
            remeasured.push_back(std::move(fresh));
        }
        auto point = evaluate_set(env, remeasured, noise, dbm_to_mw(level), l + 1);
        report.noise_sweep.push_back({level, 10.0 * std::log10(p_eff / dbm_to_mw(level)), std::move(point.methods)});
    }

    json adv_meta = nullptr;
    if (adversarial) adv_meta = {{"samples", adversarial->test.size()}, {"attack", adversarial->meta.attack}};
    report.meta = json{{"config_hash", meta.config_hash},
                       {"test_samples", dataset.test.size()},
                       {"q", meta.q},
                       {"m_w", meta.m_w},
                       {"n_bs", meta.n_bs},
                       {"oversampling", meta.oversampling},
                       {"seed", meta.seed},
                       {"dataset_noise", meta.noise},
                       {"effective_power_dbm", meta.p_bs_dbm - meta.path_loss_db},
                       {"snr_convention", "configured noise power; snr_db = effective_power_dbm - noise_dbm"},
                       {"dknn", {{"k", index.k}, {"layers", index.n_layers()}, {"backend", to_string(index.backend)},
                                 {"calibration_size", calibration.scores.size()}}},
                       {"eval", config},
                       {"adversarial", adv_meta}};
    return report;
}

// ---------------------------------------------------------------------------
// CSV export

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
    out.precision(10);
    return out;
}

void write_reliability(std::ofstream& out, const MetricsReport& r, const std::string& prefix) {
    out << "set,bin,low,high,count,accuracy\n";
    for (const auto& d : r.reliability) {
        if (d.source.rfind(prefix, 0) != 0) continue;
        const auto set = d.source.substr(d.source.find('/') + 1);
        for (std::size_t s = 0; s < d.bins.size(); ++s) {
            const auto& b = d.bins[s];
            out << set << ',' << s + 1 << ',' << b.low << ',' << b.high << ',' << b.count << ',';
            if (b.accuracy) out << *b.accuracy;
            out << '\n';
        }
    }
}

}  // namespace

void write_figure_csvs(const MetricsReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto fig2 = open_csv(dir / "fig2.csv");
    fig2 << "noise_dbm,snr_db,method,k,accuracy\n";
    auto fig3 = open_csv(dir / "fig3.csv");
    fig3 << "noise_dbm,snr_db,method,mean_se\n";
    for (const auto& p : r.noise_sweep)
        for (const auto& m : p.methods) {
            for (const auto& [k, acc] : m.topk_accuracy)
                fig2 << p.noise_dbm << ',' << p.snr_db << ',' << m.name << ',' << k << ',' << acc << '\n';
            if (m.mean_spectral_efficiency)
                fig3 << p.noise_dbm << ',' << p.snr_db << ',' << m.name << ',' << *m.mean_spectral_efficiency << '\n';
        }
    auto fig4a = open_csv(dir / "fig4a.csv");
    write_reliability(fig4a, r, "dknn-credibility");
    auto fig4b = open_csv(dir / "fig4b.csv");
    write_reliability(fig4b, r, "softmax-confidence");
}

}  // namespace bae
