// SPDX-License-Identifier: Apache-2.0
//
// Deep k-nearest-neighbor conformal credibility over per-layer representations.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "bae/lsh.hpp"
#include "bae/model.hpp"

namespace bae {

enum class NeighborBackend { Exact, Lsh };

std::string to_string(NeighborBackend b);
NeighborBackend backend_from_string(const std::string& s);

struct DknnOptions {
    int k = 10;
    NeighborBackend backend = NeighborBackend::Exact;
    /// Hidden-layer indices feeding the neighbor search; empty selects all L layers.
    /// Index L selects the logits.
    std::vector<int> layers;
    LshParams lsh;
};

void to_json(nlohmann::json& j, const DknnOptions& o);
void from_json(const nlohmann::json& j, DknnOptions& o);

/// Stored training representations of one layer. Columns are unit-normalized;
/// all-zero representations stay zero and have cosine similarity 0 to everything.
struct LayerIndex {
    int layer = 0;
    Eigen::MatrixXf unit;
    std::vector<char> zero;
    std::optional<CrossPolytopeLsh> lsh;
};

struct NeighborIndex {
    std::vector<LayerIndex> layers;
    std::vector<std::uint16_t> labels;
    std::vector<std::uint32_t> ids;  ///< sample identity; breaks similarity ties
    int k = 10;
    NeighborBackend backend = NeighborBackend::Exact;
    LshParams lsh;
    std::string config_hash;

    std::size_t size() const { return labels.size(); }
    int n_layers() const { return static_cast<int>(layers.size()); }
};

struct LayerNeighbors {
    int layer = 0;
    std::vector<std::uint16_t> labels;  ///< the multiset Omega_eta
    std::vector<std::uint32_t> ids;
    std::vector<float> distances;  ///< cosine distance 1 - similarity
    bool zero_query = false;       ///< query representation was all-zero
    bool lsh_fallback = false;     ///< too few LSH candidates, exact scan used
};

using NeighborReport = std::vector<LayerNeighbors>;

struct CalibrationScores {
    std::vector<int> scores;  ///< ascending
    int max_score = 0;        ///< k * number of layers
};

struct DknnVerdict {
    int prediction = 0;
    double confidence = 0.0;
    double credibility = 0.0;
    std::vector<double> p_values;
    std::vector<int> nonconformity;
    NeighborReport neighbor_report;
};

void to_json(nlohmann::json& j, const DknnVerdict& v);

/// Records every training representation of the selected layers.
/// Throws std::invalid_argument when k exceeds the training size.
NeighborIndex build_index(const ModelState& m, std::span<const Sample> train, const DknnOptions& options);

/// Per-layer neighbor sets for a batch of raw feature columns.
std::vector<NeighborReport> nearest_neighbors(const Eigen::MatrixXd& inputs, const NeighborIndex& idx,
                                              const ModelState& m);

/// Omega_eta label multisets for one input.
std::vector<std::vector<std::uint16_t>> nearest_labels(std::span<const double> x, const NeighborIndex& idx,
                                                       const ModelState& m);

/// Number of neighbor labels, over all layers, that differ from `candidate`.
int nonconformity(std::span<const std::vector<std::uint16_t>> omega, int candidate);

/// Scores each calibration sample against its true label.
/// Throws std::invalid_argument for an empty calibration set.
CalibrationScores calibrate(const NeighborIndex& idx, const ModelState& m, std::span<const Sample> calibration);

/// |{c in C : c >= score}| / |C|.
double p_value(int score, const CalibrationScores& c);

/// Prediction, confidence and credibility from a p-value vector.
DknnVerdict verdict_from_p_values(std::vector<double> p_values);

DknnVerdict dknn_predict(std::span<const double> x, const NeighborIndex& idx, const CalibrationScores& c,
                         const ModelState& m);
std::vector<DknnVerdict> dknn_predict_batch(const Eigen::MatrixXd& inputs, const NeighborIndex& idx,
                                            const CalibrationScores& c, const ModelState& m);

/// Beams ordered for top-k use: the prediction first, then by p-value (desc),
/// nonconformity (asc) and index.
std::vector<int> dknn_ranking(const DknnVerdict& v, int k);

/// Agreement of an approximate index with the exact one on the same queries.
struct BackendComparison {
    double recall = 0.0;     ///< mean |approx ∩ exact| / k over queries and layers
    double agreement = 0.0;  ///< fraction of identical DkNN predictions
    std::size_t queries = 0;
    std::size_t fallbacks = 0;  ///< layer queries answered by the exact scan
};

BackendComparison compare_backends(const NeighborIndex& exact, const NeighborIndex& approx,
                                   const CalibrationScores& c, const ModelState& m, std::span<const Sample> queries);

/// Index file: "BAEI" | u32 header length | JSON header | per layer float32 unit
/// vectors (column-major) | u16 labels | u32 ids | CRC32.
void write_index(const NeighborIndex& idx, const std::filesystem::path& path);
NeighborIndex read_index(const std::filesystem::path& path);

void write_calibration(const CalibrationScores& c, const std::string& config_hash, const std::filesystem::path& path);
CalibrationScores read_calibration(const std::filesystem::path& path, std::string* config_hash = nullptr);

inline constexpr int kIndexVersion = 1;

}  // namespace bae
