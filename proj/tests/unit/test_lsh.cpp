// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "bae/error.hpp"
#include "bae/lsh.hpp"
#include "bae/rng.hpp"

using namespace bae;

namespace {

Eigen::MatrixXf unit_columns(int dim, int n, std::uint64_t seed) {
    Rng rng = substream(seed, Stream::Lsh);
    std::normal_distribution<float> g;
    Eigen::MatrixXf m(dim, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::abs(g(rng));  // ReLU-like, nonnegative
    for (int c = 0; c < n; ++c) m.col(c).normalize();
    return m;
}

std::vector<int> exact_top(const Eigen::MatrixXf& data, const Eigen::VectorXf& q, int k) {
    const Eigen::VectorXf s = data.transpose() * q;
    std::vector<int> idx(static_cast<std::size_t>(data.cols()));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return s[a] != s[b] ? s[a] > s[b] : a < b;
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

}  // namespace

TEST_CASE("lsh parameters validate", "[lsh]") {
    LshParams p;
    CHECK_NOTHROW(p.validate());
    p.tables = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = LshParams{};
    p.projection_dim = 0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    const nlohmann::json j = LshParams{};
    CHECK(j.get<LshParams>().tables == LshParams{}.tables);
}

TEST_CASE("lsh finds stored points and is deterministic", "[lsh]") {
    const auto data = unit_columns(24, 500, 1);
    CrossPolytopeLsh a(24, LshParams{}, 3), b(24, LshParams{}, 3);
    a.build(data);
    b.build(data);
    for (int i = 0; i < 500; i += 37) {
        const auto ca = a.candidates(data.col(i));
        CHECK(ca == b.candidates(data.col(i)));
        const auto self = std::find_if(ca.begin(), ca.end(), [&](const auto& p) { return p.first == i; });
        REQUIRE(self != ca.end());
        CHECK(self->second == LshParams{}.tables);  // collides in every table
        CHECK(std::is_sorted(ca.begin(), ca.end()));
    }
}

TEST_CASE("lsh candidate recall against an exact scan", "[lsh]") {
    const int dim = 64, n = 1000, k = 10;
    const auto data = unit_columns(dim, n, 2);
    CrossPolytopeLsh lsh(dim, LshParams{}, 0);
    lsh.build(data);
    const auto queries = unit_columns(dim, 100, 3);
    double found = 0;
    for (int q = 0; q < queries.cols(); ++q) {
        const auto truth = exact_top(data, queries.col(q), k);
        const auto cand = lsh.candidates(queries.col(q));
        for (int t : truth)
            if (std::any_of(cand.begin(), cand.end(), [&](const auto& p) { return p.first == t; })) ++found;
    }
    CHECK(found / (100.0 * k) >= 0.9);
}
