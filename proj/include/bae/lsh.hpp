// SPDX-License-Identifier: Apache-2.0
//
// Cross-polytope locality-sensitive hashing for cosine similarity with
// multi-probe querying.
#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace bae {

struct LshParams {
    int tables = 12;
    int hashes_per_table = 1;  ///< cross-polytope functions concatenated per table
    int projection_dim = 16;   ///< each function hashes to one of 2 * projection_dim vertices
    int probes = 4;            ///< extra buckets visited per table
    bool rerank = true;        ///< order candidates by exact cosine before taking k
    std::uint64_t seed = 7;

    void validate() const;
};

void to_json(nlohmann::json& j, const LshParams& p);
void from_json(const nlohmann::json& j, LshParams& p);

class CrossPolytopeLsh {
  public:
    CrossPolytopeLsh(int dim, const LshParams& params, std::uint64_t salt = 0);

    /// Columns of `unit` are the stored (unit-norm or zero) vectors.
    void build(const Eigen::MatrixXf& unit);

    /// Union of stored indices found in the probed buckets, with the number of
    /// tables in which each collided.
    std::vector<std::pair<int, int>> candidates(const Eigen::VectorXf& query) const;

    int dim() const { return dim_; }

  private:
    struct Probe {
        float score;
        int function;
        int vertex;
    };

    std::vector<int> hash_values(const Eigen::MatrixXf& proj, const Eigen::VectorXf& x,
                                 std::vector<Probe>* alternatives) const;
    std::uint64_t key(const std::vector<int>& values) const;

    int dim_;
    LshParams params_;
    std::vector<Eigen::MatrixXf> projections_;  // per table: (K * m) x dim Gaussian
    std::vector<std::unordered_map<std::uint64_t, std::vector<int>>> tables_;
};

}  // namespace bae
