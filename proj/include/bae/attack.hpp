// SPDX-License-Identifier: Apache-2.0
//
// FGSM perturbations of stored (linear power) RSSI features.
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "bae/model.hpp"
#include "bae/sweep.hpp"

namespace bae {

struct AttackConfig {
    double epsilon = 0.0;          ///< absolute, in feature units (mW)
    bool clamp_nonnegative = true;  ///< features are powers
    /// Optional cap on ||delta||_2 / ||x||_2; delta is scaled down to meet it.
    std::optional<double> relative_power_budget;
    /// Set when epsilon was derived from a fraction of the mean per-sample RMS RSSI.
    std::optional<double> epsilon_relative;

    void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

/// x + eps * sign(grad_x loss), sign(0) = 0, then budget scaling, then clamp.
std::vector<double> fgsm(std::span<const double> x, int true_label, const ModelState& m, const AttackConfig& cfg);

/// Batched variant; column b of `inputs` is one sample.
Eigen::MatrixXd fgsm_batch(const Eigen::MatrixXd& inputs, std::span<const int> labels, const ModelState& m,
                           const AttackConfig& cfg);

/// Mean over samples of sqrt(mean_i x_i^2).
double mean_rms(std::span<const Sample> samples);

/// epsilon = fraction * mean_rms(samples).
double epsilon_from_relative(double fraction, std::span<const Sample> samples);

/// Copy of `source` whose test split is replaced by its FGSM counterpart; other
/// splits are dropped. The header carries adversarial = true and the config.
Dataset make_adversarial(const Dataset& source, const ModelState& m, const AttackConfig& cfg);

}  // namespace bae
