// SPDX-License-Identifier: Apache-2.0
#include "bae/attack.hpp"

#include <cmath>
#include <stdexcept>

#include "bae/error.hpp"

namespace bae {

using nlohmann::json;

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack.epsilon must be finite and >= 0");
    if (relative_power_budget && !(*relative_power_budget > 0.0))
        throw ConfigError("attack.relative_power_budget must be > 0");
    if (epsilon_relative && !(*epsilon_relative >= 0.0)) throw ConfigError("attack.epsilon_relative must be >= 0");
}

void to_json(json& j, const AttackConfig& c) {
    j = json{{"epsilon", c.epsilon}, {"clamp_nonnegative", c.clamp_nonnegative}};
    j["relative_power_budget"] = c.relative_power_budget ? json(*c.relative_power_budget) : json(nullptr);
    j["epsilon_relative"] = c.epsilon_relative ? json(*c.epsilon_relative) : json(nullptr);
}

void from_json(const json& j, AttackConfig& c) {
    c = AttackConfig{};
    c.epsilon = j.value("epsilon", 0.0);
    c.clamp_nonnegative = j.value("clamp_nonnegative", true);
    if (j.contains("relative_power_budget") && !j["relative_power_budget"].is_null())
        c.relative_power_budget = j["relative_power_budget"].get<double>();
    if (j.contains("epsilon_relative") && !j["epsilon_relative"].is_null())
        c.epsilon_relative = j["epsilon_relative"].get<double>();
}

namespace {

void perturb(Eigen::Ref<Eigen::VectorXd> x, const Eigen::Ref<const Eigen::VectorXd>& grad, const AttackConfig& cfg) {
    if (cfg.epsilon == 0.0) return;
    Eigen::VectorXd delta(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double g = grad[i];
        delta[i] = g > 0.0 ? cfg.epsilon : (g < 0.0 ? -cfg.epsilon : 0.0);
    }
    if (cfg.relative_power_budget) {
        const double cap = *cfg.relative_power_budget * x.norm();
        const double norm = delta.norm();
        if (norm > cap) delta *= norm > 0.0 ? cap / norm : 0.0;
    }
    x += delta;
    if (cfg.clamp_nonnegative) x = x.cwiseMax(0.0);
}

}  // namespace

Eigen::MatrixXd fgsm_batch(const Eigen::MatrixXd& inputs, std::span<const int> labels, const ModelState& m,
                           const AttackConfig& cfg) {
    cfg.validate();
    if (labels.size() != static_cast<std::size_t>(inputs.cols()))
        throw std::invalid_argument("fgsm: label count does not match inputs");
    for (int label : labels)
        if (label < 0 || label >= m.config.num_classes) throw std::invalid_argument("fgsm: label out of range");
    Eigen::MatrixXd out = inputs;
    if (cfg.epsilon == 0.0) return out;
    const auto grads = backward_batch(inputs, labels, m);
    for (Eigen::Index b = 0; b < out.cols(); ++b) perturb(out.col(b), grads.input.col(b), cfg);
    return out;
}

std::vector<double> fgsm(std::span<const double> x, int true_label, const ModelState& m, const AttackConfig& cfg) {
    const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const int labels[] = {true_label};
    const Eigen::MatrixXd adv = fgsm_batch(col, labels, m, cfg);
    return {adv.data(), adv.data() + adv.size()};
}

double mean_rms(std::span<const Sample> samples) {
    if (samples.empty()) throw std::invalid_argument("mean_rms: no samples");
    double total = 0.0;
    for (const auto& s : samples) {
        double sq = 0.0;
        for (float v : s.rssi) sq += static_cast<double>(v) * v;
        total += std::sqrt(sq / static_cast<double>(s.rssi.size()));
    }
    return total / static_cast<double>(samples.size());
}

double epsilon_from_relative(double fraction, std::span<const Sample> samples) {
    if (!(fraction >= 0.0)) throw std::invalid_argument("epsilon_from_relative: fraction must be >= 0");
    return fraction * mean_rms(samples);
}

Dataset make_adversarial(const Dataset& source, const ModelState& m, const AttackConfig& cfg) {
    Dataset out;
    out.meta = source.meta;
    out.meta.adversarial = true;
    out.meta.attack = cfg;
    const auto& test = source.test;
    constexpr std::size_t chunk = 512;
    out.test.reserve(test.size());
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        const std::span<const Sample> part(test.data() + start, std::min(chunk, test.size() - start));
        const auto adv = fgsm_batch(feature_matrix(part), label_vector(part), m, cfg);
        for (std::size_t b = 0; b < part.size(); ++b) {
            Sample s = part[b];
            for (std::size_t i = 0; i < s.rssi.size(); ++i)
                s.rssi[i] = static_cast<float>(adv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)));
            out.test.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace bae
