// SPDX-License-Identifier: Apache-2.0
#include "bae/dknn.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "bae/binio.hpp"
#include "bae/error.hpp"

namespace bae {

using nlohmann::json;

std::string to_string(NeighborBackend b) { return b == NeighborBackend::Lsh ? "lsh" : "exact"; }

NeighborBackend backend_from_string(const std::string& s) {
    if (s == "exact") return NeighborBackend::Exact;
    if (s == "lsh") return NeighborBackend::Lsh;
    throw ConfigError("unknown neighbor backend '" + s + "'");
}

void to_json(json& j, const DknnOptions& o) {
    j = json{{"k", o.k}, {"backend", to_string(o.backend)}, {"layers", o.layers}, {"lsh", o.lsh}};
}

void from_json(const json& j, DknnOptions& o) {
    DknnOptions d;
    o.k = j.value("k", d.k);
    o.backend = backend_from_string(j.value("backend", std::string("exact")));
    o.layers = j.value("layers", std::vector<int>{});
    o.lsh = j.value("lsh", d.lsh);
}

void to_json(json& j, const DknnVerdict& v) {
    json report = json::array();
    for (const auto& l : v.neighbor_report)
        report.push_back({{"layer", l.layer},
                          {"labels", l.labels},
                          {"ids", l.ids},
                          {"distances", l.distances},
                          {"zero_query", l.zero_query},
                          {"lsh_fallback", l.lsh_fallback}});
    j = json{{"prediction", v.prediction},
             {"confidence", v.confidence},
             {"credibility", v.credibility},
             {"p_values", v.p_values},
             {"nonconformity", v.nonconformity},
             {"neighbor_report", report}};
}

namespace {

std::vector<int> selected_layers(const ModelState& m, const std::vector<int>& requested) {
    const int L = layer_count(m.config);
    std::vector<int> out = requested;
    if (out.empty()) {
        out.resize(L);
        std::iota(out.begin(), out.end(), 0);
    }
    for (int l : out)
        if (l < 0 || l > L) throw ConfigError("dknn: layer index " + std::to_string(l) + " outside [0, L]");
    if (out.empty()) throw ConfigError("dknn: no layers selected (model has no hidden layers)");
    return out;
}

// Float copy with unit-norm columns; zero columns flagged.
Eigen::MatrixXf normalize_columns(const Eigen::MatrixXd& rep, std::vector<char>* zero) {
    Eigen::MatrixXf out = rep.cast<float>();
    if (zero) zero->assign(static_cast<std::size_t>(out.cols()), 0);
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
        const double norm = rep.col(c).norm();
        if (norm > 0.0) {
            out.col(c) = (rep.col(c) / norm).cast<float>();
        } else {
            out.col(c).setZero();
            if (zero) (*zero)[static_cast<std::size_t>(c)] = 1;
        }
    }
    return out;
}

const Eigen::MatrixXd& pick(const BatchActivations& act, int layer) {
    return layer < static_cast<int>(act.layers.size()) ? act.layers[static_cast<std::size_t>(layer)] : act.logits;
}

constexpr std::size_t kChunk = 256;

// Top-k by (similarity desc, id asc) over the given candidate positions.
void select_top(const std::vector<float>& sims, const std::vector<int>& cand, const NeighborIndex& idx,
                LayerNeighbors& out) {
    std::vector<int> order(cand.size());
    std::iota(order.begin(), order.end(), 0);
    const auto k = static_cast<std::size_t>(idx.k);
    auto better = [&](int a, int b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return idx.ids[cand[a]] < idx.ids[cand[b]];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    out.labels.clear();
    out.ids.clear();
    out.distances.clear();
    for (std::size_t r = 0; r < k; ++r) {
        const int i = cand[order[r]];
        out.labels.push_back(idx.labels[i]);
        out.ids.push_back(idx.ids[i]);
        out.distances.push_back(1.0f - sims[order[r]]);
    }
}

}  // namespace

NeighborIndex build_index(const ModelState& m, std::span<const Sample> train, const DknnOptions& options) {
    if (options.k < 1) throw std::invalid_argument("build_index: k must be >= 1");
    if (static_cast<std::size_t>(options.k) > train.size())
        throw std::invalid_argument("build_index: k exceeds the training-set size");
    if (options.backend == NeighborBackend::Lsh) options.lsh.validate();
    const auto layer_ids = selected_layers(m, options.layers);

    NeighborIndex idx;
    idx.k = options.k;
    idx.backend = options.backend;
    idx.lsh = options.lsh;
    idx.config_hash = m.config_hash;
    for (const auto& s : train) {
        idx.labels.push_back(s.label);
        idx.ids.push_back(s.ue_id);
    }

    std::vector<Eigen::MatrixXd> reps(layer_ids.size());
    const auto widths = layer_widths(m.config);
    for (std::size_t li = 0; li < layer_ids.size(); ++li) {
        const int l = layer_ids[li];
        const int w = l < static_cast<int>(widths.size()) ? widths[static_cast<std::size_t>(l)] : m.config.num_classes;
        reps[li].resize(w, static_cast<Eigen::Index>(train.size()));
    }
    for (std::size_t start = 0; start < train.size(); start += kChunk) {
        const auto part = train.subspan(start, std::min(kChunk, train.size() - start));
        const auto act = forward_batch(feature_matrix(part), m);
        for (std::size_t li = 0; li < layer_ids.size(); ++li)
            reps[li].middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) =
                pick(act, layer_ids[li]);
    }
    for (std::size_t li = 0; li < layer_ids.size(); ++li) {
        LayerIndex layer;
        layer.layer = layer_ids[li];
        layer.unit = normalize_columns(reps[li], &layer.zero);
        if (options.backend == NeighborBackend::Lsh) {
            layer.lsh.emplace(static_cast<int>(layer.unit.rows()), options.lsh, static_cast<std::uint64_t>(layer.layer));
            layer.lsh->build(layer.unit);
        }
        idx.layers.push_back(std::move(layer));
    }
    return idx;
}

std::vector<NeighborReport> nearest_neighbors(const Eigen::MatrixXd& inputs, const NeighborIndex& idx,
                                              const ModelState& m) {
    const auto B = static_cast<std::size_t>(inputs.cols());
    std::vector<NeighborReport> out(B, NeighborReport(idx.layers.size()));
    const auto n = static_cast<int>(idx.size());
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    for (std::size_t start = 0; start < B; start += kChunk) {
        const std::size_t len = std::min(kChunk, B - start);
        const auto act = forward_batch(inputs.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)), m);
        for (std::size_t li = 0; li < idx.layers.size(); ++li) {
            const auto& layer = idx.layers[li];
            const Eigen::MatrixXd& rep = pick(act, layer.layer);
            if (rep.rows() != layer.unit.rows()) throw std::invalid_argument("dknn: index does not match model");
            std::vector<char> zero;
            const Eigen::MatrixXf q = normalize_columns(rep, &zero);
            Eigen::MatrixXf sims;
            if (idx.backend == NeighborBackend::Exact) sims.noalias() = layer.unit.transpose() * q;
            std::vector<float> s;
            for (std::size_t b = 0; b < len; ++b) {
                LayerNeighbors& ln = out[start + b][li];
                ln.layer = layer.layer;
                ln.zero_query = zero[b] != 0;
                const auto qcol = q.col(static_cast<Eigen::Index>(b));
                if (idx.backend == NeighborBackend::Exact) {
                    const auto col = sims.col(static_cast<Eigen::Index>(b));
                    s.assign(col.data(), col.data() + n);
                    select_top(s, all, idx, ln);
                    continue;
                }
                const auto cand = layer.lsh->candidates(qcol);
                if (cand.size() < static_cast<std::size_t>(idx.k)) {
                    ln.lsh_fallback = true;
                    const Eigen::VectorXf full = layer.unit.transpose() * qcol;
                    s.assign(full.data(), full.data() + n);
                    select_top(s, all, idx, ln);
                    continue;
                }
                std::vector<int> pos;
                pos.reserve(cand.size());
                s.clear();
                for (const auto& [i, hits] : cand) {
                    pos.push_back(i);
                    // Without re-ranking, the collision count stands in for similarity.
                    s.push_back(idx.lsh.rerank ? layer.unit.col(i).dot(qcol) : static_cast<float>(hits));
                }
                select_top(s, pos, idx, ln);
                if (!idx.lsh.rerank)
                    for (std::size_t r = 0; r < ln.ids.size(); ++r) {
                        const auto it = std::find(idx.ids.begin(), idx.ids.end(), ln.ids[r]);
                        ln.distances[r] = 1.0f - layer.unit.col(it - idx.ids.begin()).dot(qcol);
                    }
            }
        }
    }
    return out;
}

std::vector<std::vector<std::uint16_t>> nearest_labels(std::span<const double> x, const NeighborIndex& idx,
                                                       const ModelState& m) {
    const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const auto report = nearest_neighbors(col, idx, m).front();
    std::vector<std::vector<std::uint16_t>> omega;
    for (const auto& l : report) omega.push_back(l.labels);
    return omega;
}

int nonconformity(std::span<const std::vector<std::uint16_t>> omega, int candidate) {
    int count = 0;
    for (const auto& layer : omega)
        for (auto label : layer)
            if (label != candidate) ++count;
    return count;
}

namespace {

std::vector<int> vote_counts(const NeighborReport& report, int q, int& total) {
    std::vector<int> votes(static_cast<std::size_t>(q), 0);
    total = 0;
    for (const auto& l : report)
        for (auto label : l.labels) {
            if (label < q) ++votes[label];
            ++total;
        }
    return votes;
}

}  // namespace

CalibrationScores calibrate(const NeighborIndex& idx, const ModelState& m, std::span<const Sample> calibration) {
    if (calibration.empty()) throw std::invalid_argument("calibrate: empty calibration set");
    const auto reports = nearest_neighbors(feature_matrix(calibration), idx, m);
    CalibrationScores c;
    c.max_score = idx.k * idx.n_layers();
    c.scores.reserve(calibration.size());
    for (std::size_t i = 0; i < calibration.size(); ++i) {
        int total = 0;
        const auto votes = vote_counts(reports[i], m.config.num_classes, total);
        c.scores.push_back(total - votes[calibration[i].label]);
    }
    std::sort(c.scores.begin(), c.scores.end());
    return c;
}

double p_value(int score, const CalibrationScores& c) {
    if (c.scores.empty()) throw std::invalid_argument("p_value: empty calibration scores");
    const auto it = std::lower_bound(c.scores.begin(), c.scores.end(), score);
    return static_cast<double>(c.scores.end() - it) / static_cast<double>(c.scores.size());
}

DknnVerdict verdict_from_p_values(std::vector<double> p_values) {
    if (p_values.empty()) throw std::invalid_argument("verdict: empty p-value vector");
    DknnVerdict v;
    v.p_values = std::move(p_values);
    const auto& p = v.p_values;
    v.prediction = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());  // first maximum
    v.credibility = p[static_cast<std::size_t>(v.prediction)];
    double second = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j)
        if (static_cast<int>(j) != v.prediction) second = std::max(second, p[j]);
    v.confidence = 1.0 - second;
    return v;
}

std::vector<DknnVerdict> dknn_predict_batch(const Eigen::MatrixXd& inputs, const NeighborIndex& idx,
                                            const CalibrationScores& c, const ModelState& m) {
    if (c.scores.empty()) throw ConfigError("dknn: engine is not calibrated");
    auto reports = nearest_neighbors(inputs, idx, m);
    std::vector<DknnVerdict> out;
    out.reserve(reports.size());
    const int q = m.config.num_classes;
    for (auto& report : reports) {
        int total = 0;
        const auto votes = vote_counts(report, q, total);
        std::vector<double> p(static_cast<std::size_t>(q));
        std::vector<int> rho(static_cast<std::size_t>(q));
        for (int j = 0; j < q; ++j) {
            rho[j] = total - votes[j];
            p[j] = p_value(rho[j], c);
        }
        auto v = verdict_from_p_values(std::move(p));
        v.nonconformity = std::move(rho);
        v.neighbor_report = std::move(report);
        out.push_back(std::move(v));
    }
    return out;
}

DknnVerdict dknn_predict(std::span<const double> x, const NeighborIndex& idx, const CalibrationScores& c,
                         const ModelState& m) {
    const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return std::move(dknn_predict_batch(col, idx, c, m).front());
}

std::vector<int> dknn_ranking(const DknnVerdict& v, int k) {
    const int q = static_cast<int>(v.p_values.size());
    if (k < 1 || k > q) throw std::invalid_argument("dknn_ranking: need 1 <= k <= Q");
    std::vector<int> rest;
    for (int j = 0; j < q; ++j)
        if (j != v.prediction) rest.push_back(j);
    auto rho = [&](int j) { return v.nonconformity.empty() ? 0 : v.nonconformity[static_cast<std::size_t>(j)]; };
    std::partial_sort(rest.begin(), rest.begin() + (k - 1), rest.end(), [&](int a, int b) {
        if (v.p_values[a] != v.p_values[b]) return v.p_values[a] > v.p_values[b];
        if (rho(a) != rho(b)) return rho(a) < rho(b);
        return a < b;
    });
    std::vector<int> out{v.prediction};
    out.insert(out.end(), rest.begin(), rest.begin() + (k - 1));
    return out;
}

BackendComparison compare_backends(const NeighborIndex& exact, const NeighborIndex& approx,
                                   const CalibrationScores& c, const ModelState& m, std::span<const Sample> queries) {
    if (exact.n_layers() != approx.n_layers() || exact.k != approx.k)
        throw std::invalid_argument("compare_backends: indexes differ in layers or k");
    if (queries.empty()) throw std::invalid_argument("compare_backends: no queries");
    const Eigen::MatrixXd x = feature_matrix(queries);
    const auto a = dknn_predict_batch(x, exact, c, m);
    const auto b = dknn_predict_batch(x, approx, c, m);
    BackendComparison out;
    out.queries = queries.size();
    double recall = 0.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (a[i].prediction == b[i].prediction) ++agree;
        for (std::size_t l = 0; l < a[i].neighbor_report.size(); ++l) {
            auto ea = a[i].neighbor_report[l].ids;
            auto eb = b[i].neighbor_report[l].ids;
            std::sort(ea.begin(), ea.end());
            std::sort(eb.begin(), eb.end());
            std::vector<std::uint32_t> common;
            std::set_intersection(ea.begin(), ea.end(), eb.begin(), eb.end(), std::back_inserter(common));
            recall += static_cast<double>(common.size()) / static_cast<double>(exact.k);
            if (b[i].neighbor_report[l].lsh_fallback) ++out.fallbacks;
        }
    }
    out.recall = recall / static_cast<double>(queries.size() * static_cast<std::size_t>(exact.n_layers()));
    out.agreement = static_cast<double>(agree) / static_cast<double>(queries.size());
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr std::array<char, 4> kIndexMagic = {'B', 'A', 'E', 'I'};
}

void write_index(const NeighborIndex& idx, const std::filesystem::path& path) {
    binio::Writer w;
    json layers = json::array();
    for (const auto& l : idx.layers) {
        layers.push_back({{"layer", l.layer}, {"dim", l.unit.rows()}});
        for (Eigen::Index i = 0; i < l.unit.size(); ++i) w.f32(l.unit.data()[i]);
    }
    for (auto label : idx.labels) w.u16(label);
    for (auto id : idx.ids) w.u32(id);
    const json header{{"version", kIndexVersion}, {"k", idx.k},
                      {"backend", to_string(idx.backend)}, {"lsh", idx.lsh},
                      {"n", idx.size()}, {"layers", layers},
                      {"config_hash", idx.config_hash}};
    binio::write_file(path, binio::pack(kIndexMagic, header, w.buffer()));
}

NeighborIndex read_index(const std::filesystem::path& path) {
    const auto bytes = binio::read_file(path);
    auto unpacked = binio::unpack(bytes, kIndexMagic, [](const json& h) {
        if (h.value("version", -1) != kIndexVersion)
            throw FormatError(FormatError::Kind::Version, "unsupported index version");
        try {
            const auto n = h.at("n").get<std::size_t>();
            std::size_t total = n * (2 + 4);
            for (const auto& l : h.at("layers")) total += n * l.at("dim").get<std::size_t>() * 4;
            return total;
        } catch (const json::exception& e) {
            throw FormatError(FormatError::Kind::Schema, std::string("index header: ") + e.what());
        }
    });
    const json& h = unpacked.header;
    NeighborIndex idx;
    try {
        idx.k = h.at("k").get<int>();
        idx.backend = backend_from_string(h.at("backend").get<std::string>());
        idx.lsh = h.value("lsh", LshParams{});
        idx.config_hash = h.value("config_hash", std::string());
    } catch (const std::exception& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("index header: ") + e.what());
    }
    const auto n = h.at("n").get<Eigen::Index>();
    binio::Reader r(unpacked.payload);
    for (const auto& lj : h.at("layers")) {
        LayerIndex l;
        l.layer = lj.at("layer").get<int>();
        l.unit.resize(lj.at("dim").get<Eigen::Index>(), n);
        for (Eigen::Index i = 0; i < l.unit.size(); ++i) l.unit.data()[i] = r.f32();
        l.zero.resize(static_cast<std::size_t>(n));
        for (Eigen::Index c = 0; c < n; ++c) l.zero[static_cast<std::size_t>(c)] = l.unit.col(c).squaredNorm() == 0.0f;
        if (idx.backend == NeighborBackend::Lsh) {
            l.lsh.emplace(static_cast<int>(l.unit.rows()), idx.lsh, static_cast<std::uint64_t>(l.layer));
            l.lsh->build(l.unit);
        }
        idx.layers.push_back(std::move(l));
    }
    idx.labels.resize(static_cast<std::size_t>(n));
    for (auto& label : idx.labels) label = r.u16();
    idx.ids.resize(static_cast<std::size_t>(n));
    for (auto& id : idx.ids) id = r.u32();
    return idx;
}

void write_calibration(const CalibrationScores& c, const std::string& config_hash, const std::filesystem::path& path) {
    const json j{{"version", kIndexVersion},
                 {"scores", c.scores},
                 {"max_score", c.max_score},
                 {"config_hash", config_hash}};
    std::ofstream out(path);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
    out << j.dump() << '\n';
}

CalibrationScores read_calibration(const std::filesystem::path& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
    CalibrationScores c;
    try {
        const json j = json::parse(in);
        if (j.value("version", -1) != kIndexVersion)
            throw FormatError(FormatError::Kind::Version, "unsupported calibration version");
        c.scores = j.at("scores").get<std::vector<int>>();
        c.max_score = j.at("max_score").get<int>();
        if (config_hash) *config_hash = j.value("config_hash", std::string());
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("calibration file: ") + e.what());
    }
    if (!std::is_sorted(c.scores.begin(), c.scores.end()))
        throw FormatError(FormatError::Kind::Schema, "calibration scores are not sorted");
    return c;
}

}  // namespace bae
