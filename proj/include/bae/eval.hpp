// SPDX-License-Identifier: Apache-2.0
//
// Accuracy, spectral efficiency, sweep overhead and reliability metrics for the
// learned heads and the codebook baselines.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bae/channel.hpp"
#include "bae/codebook.hpp"
#include "bae/dknn.hpp"
#include "bae/model.hpp"
#include "bae/sweep.hpp"

namespace bae {

/// Fraction of samples whose label is among the first k entries of its list.
/// Throws std::invalid_argument for k < 1 or mismatched lengths.
double topk_accuracy(std::span<const std::vector<int>> predictions, std::span<const int> labels, int k);

/// log2(1 + snr). Throws std::invalid_argument for sigma2 <= 0.
double spectral_efficiency(const ChannelVector& h, const BeamVector& w, double p_bs, double sigma2);

enum class SweepMethod { ExhaustiveDft, ExhaustiveOdft, Proposed };

struct MethodDescriptor {
    SweepMethod kind = SweepMethod::Proposed;
    int n_bs = 32;
    int oversampling = 4;
    int m_w = 32;
    int extra_k = 0;  ///< narrow beams probed after the sensing sweep
};

/// Number of beams physically swept by a method.
int sweep_overhead(const MethodDescriptor& method);

struct ReliabilityBin {
    double low = 0.0;
    double high = 0.0;
    std::size_t count = 0;
    std::size_t correct = 0;
    std::optional<double> accuracy;  ///< empty for an empty bin
};

struct ReliabilityDiagram {
    std::string source;  ///< e.g. "dknn-credibility", "softmax-confidence"
    int n_bins = 10;
    std::vector<ReliabilityBin> bins;

    std::size_t total() const;
};

/// Bins [s/S, (s+1)/S), the last one closed. Throws std::invalid_argument for
/// S < 1, mismatched lengths, or a score outside [0, 1].
ReliabilityDiagram reliability_diagram(std::span<const double> scores, std::span<const char> correct, int n_bins,
                                       std::string source = "");

/// Bin index of `score` under the rule above.
int reliability_bin(double score, int n_bins);

struct EvalConfig {
    std::vector<int> k_list{1, 3, 5};
    int bins = 10;
    /// Configured noise powers for the accuracy and SE curves.
    std::vector<double> noise_levels_dbm{-90, -80, -70, -60, -50, -40, -28};
    /// Noise power used for the per-method scalar spectral efficiency.
    double se_noise_dbm = -60.0;
    int mrt_bits = 4;
    /// Candidates measured by the refined learned method.
    int refine_k = 5;

    void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct MethodMetrics {
    std::string name;
    std::map<int, double> topk_accuracy;  ///< empty for methods without a beam index
    std::optional<double> mean_spectral_efficiency;
    std::optional<int> swept_beams;  ///< empty when the method needs full channel knowledge
    /// Mean DkNN credibility or softmax confidence.
    std::optional<double> mean_score_clean;
    std::optional<double> mean_score_adversarial;
    std::map<int, double> adversarial_topk_accuracy;
};

struct NoisePoint {
    double noise_dbm = 0.0;
    double snr_db = 0.0;
    std::vector<MethodMetrics> methods;
};

/// Per-sample spectral-efficiency ordering checks over the test set.
struct OrderingCheck {
    std::size_t samples = 0;
    std::size_t mrt_below_odft = 0;
    std::size_t odft_below_dl = 0;
    std::size_t dft_above_odft = 0;
    std::size_t dl_negative = 0;
};

struct MetricsReport {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<MethodMetrics> methods;
    std::vector<NoisePoint> noise_sweep;
    std::vector<ReliabilityDiagram> reliability;
    OrderingCheck ordering;

    const MethodMetrics& method(const std::string& name) const;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Method names used in reports.
inline constexpr const char* kMethodDknn = "dknn";
inline constexpr const char* kMethodSoftmax = "softmax";
inline constexpr const char* kMethodRefined = "dknn_refined";
inline constexpr const char* kMethodDft = "dft_exhaustive";
inline constexpr const char* kMethodOdft = "odft_exhaustive";
inline constexpr const char* kMethodMrt = "mrt_quantized";

/// Evaluates every method on the test split of `dataset`. `channels` is the full
/// channel set indexed by UE id. Codebook baselines select beams from noisy
/// RSSI for accuracy and from noiseless gains for spectral efficiency.
/// Throws ConfigError when the calibration is empty.
MetricsReport evaluate_all(const ModelState& model, const NeighborIndex& index, const CalibrationScores& calibration,
                           const Dataset& dataset, std::span<const ChannelVector> channels, const EvalConfig& config,
                           const Dataset* adversarial = nullptr);

/// fig2.csv (accuracy vs SNR), fig3.csv (SE vs SNR), fig4a.csv (DkNN reliability),
/// fig4b.csv (softmax reliability).
void write_figure_csvs(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace bae
