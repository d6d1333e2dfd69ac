// SPDX-License-Identifier: Apache-2.0
#include "bae/lsh.hpp"

#include <algorithm>
#include <cmath>

#include "bae/error.hpp"
#include "bae/rng.hpp"

namespace bae {

using nlohmann::json;

void LshParams::validate() const {
    if (tables < 1 || hashes_per_table < 1 || projection_dim < 1 || probes < 0)
        throw ConfigError("lsh: tables, hashes_per_table, projection_dim must be >= 1 and probes >= 0");
    if (hashes_per_table * std::log2(2.0 * projection_dim) > 62.0) throw ConfigError("lsh: hash key exceeds 64 bits");
}

void to_json(json& j, const LshParams& p) {
    j = json{{"tables", p.tables},   {"hashes_per_table", p.hashes_per_table}, {"projection_dim", p.projection_dim},
             {"probes", p.probes},   {"rerank", p.rerank},                     {"seed", p.seed}};
}

void from_json(const json& j, LshParams& p) {
    LshParams d;
    p.tables = j.value("tables", d.tables);
    p.hashes_per_table = j.value("hashes_per_table", d.hashes_per_table);
    p.projection_dim = j.value("projection_dim", d.projection_dim);
    p.probes = j.value("probes", d.probes);
    p.rerank = j.value("rerank", d.rerank);
    p.seed = j.value("seed", d.seed);
}

CrossPolytopeLsh::CrossPolytopeLsh(int dim, const LshParams& params, std::uint64_t salt)
    : dim_(dim), params_(params) {
    params_.validate();
    if (dim < 1) throw std::invalid_argument("lsh: dimension must be >= 1");
    Rng rng = substream(params.seed, Stream::Lsh, salt);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    const int rows = params.hashes_per_table * params.projection_dim;
    projections_.resize(params.tables);
    for (auto& p : projections_) {
        p.resize(rows, dim);
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = gauss(rng);
    }
    tables_.resize(params.tables);
}

std::vector<int> CrossPolytopeLsh::hash_values(const Eigen::MatrixXf& proj, const Eigen::VectorXf& x,
                                               std::vector<Probe>* alternatives) const {
    const int m = params_.projection_dim;
    const Eigen::VectorXf y = proj * x;
    std::vector<int> values(params_.hashes_per_table);
    std::vector<int> order(m);
    for (int f = 0; f < params_.hashes_per_table; ++f) {
        const auto seg = y.segment(f * m, m);
        for (int i = 0; i < m; ++i) order[i] = i;
        const int keep = alternatives ? std::min(m, params_.probes + 1) : 1;
        std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](int a, int b) {
            const float fa = std::abs(seg[a]), fb = std::abs(seg[b]);
            return fa > fb || (fa == fb && a < b);
        });
        auto vertex = [&](int i) { return seg[i] >= 0.0f ? i : i + m; };
        values[f] = vertex(order[0]);
        if (alternatives) {
            const float top = std::abs(seg[order[0]]);
            for (int r = 1; r < keep; ++r)
                alternatives->push_back({top - std::abs(seg[order[r]]), f, vertex(order[r])});
        }
    }
    return values;
}

std::uint64_t CrossPolytopeLsh::key(const std::vector<int>& values) const {
    std::uint64_t k = 0;
    const auto base = static_cast<std::uint64_t>(2 * params_.projection_dim);
    for (int v : values) k = k * base + static_cast<std::uint64_t>(v);
    return k;
}

void CrossPolytopeLsh::build(const Eigen::MatrixXf& unit) {
    if (unit.rows() != dim_) throw std::invalid_argument("lsh: stored vectors have the wrong dimension");
    for (auto& t : tables_) t.clear();
    for (int t = 0; t < params_.tables; ++t) {
        for (Eigen::Index i = 0; i < unit.cols(); ++i) {
            const Eigen::VectorXf x = unit.col(i);
            tables_[t][key(hash_values(projections_[t], x, nullptr))].push_back(static_cast<int>(i));
        }
    }
}

std::vector<std::pair<int, int>> CrossPolytopeLsh::candidates(const Eigen::VectorXf& query) const {
    std::unordered_map<int, int> hits;
    std::vector<Probe> alts;
    for (int t = 0; t < params_.tables; ++t) {
        alts.clear();
        const auto base = hash_values(projections_[t], query, &alts);
        std::sort(alts.begin(), alts.end(), [](const Probe& a, const Probe& b) {
            return a.score < b.score || (a.score == b.score && (a.function < b.function ||
                                                                 (a.function == b.function && a.vertex < b.vertex)));
        });
        auto visit = [&](const std::vector<int>& values) {
            const auto it = tables_[t].find(key(values));
            if (it == tables_[t].end()) return;
            for (int idx : it->second) ++hits[idx];
        };
        visit(base);
        const int extra = std::min<int>(params_.probes, static_cast<int>(alts.size()));
        for (int p = 0; p < extra; ++p) {
            auto values = base;
            values[alts[p].function] = alts[p].vertex;
            visit(values);
        }
    }
    std::vector<std::pair<int, int>> out(hits.begin(), hits.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace bae
