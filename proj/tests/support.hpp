// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "bae/model.hpp"
#include "bae/rng.hpp"
#include "bae/sweep.hpp"

namespace bae::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("bae_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

/// Linearly separable toy problem: feature `2 * label` carries a strong peak on
/// a noisy floor, m_w = 8 and Q = 4.
inline Sample toy_sample(std::uint32_t id, int label, Rng& rng) {
    Sample s;
    s.ue_id = id;
    s.label = static_cast<std::uint16_t>(label);
    s.rssi.resize(8);
    for (auto& v : s.rssi) v = static_cast<float>(0.1 + 0.2 * uniform01(rng));
    s.rssi[static_cast<std::size_t>(2 * label)] = static_cast<float>(1.0 + 0.5 * uniform01(rng));
    s.snr_db = 20.0f;
    return s;
}

inline Dataset toy_dataset(std::uint64_t seed = 3, std::size_t n_train = 400) {
    Dataset d;
    Rng rng = substream(seed, Stream::Paths);
    std::uint32_t id = 0;
    auto fill = [&](std::vector<Sample>& v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) v.push_back(toy_sample(id++, static_cast<int>(i % 4), rng));
    };
    fill(d.train, n_train);
    fill(d.validation, 40);
    fill(d.calibration, 80);
    fill(d.test, 80);
    d.meta.m_w = 8;
    d.meta.q = 4;
    d.meta.n_bs = 8;
    d.meta.oversampling = 1;
    d.meta.feature_scale = FeatureScale::Linear;
    d.meta.seed = seed;
    return d;
}

/// Small conv net for the toy problem.
inline ModelConfig toy_model_config() {
    ModelConfig c;
    c.input_len = 8;
    c.num_classes = 4;
    c.cols = 8;
    c.layers = {LayerSpec::conv(4, 3, 1, 1), LayerSpec::dense(16)};
    c.transform.feature_scale = FeatureScale::Linear;
    c.transform.fitted = false;
    return c;
}

inline ModelState toy_model(std::uint64_t seed = 5, int epochs = 30) {
    TrainingConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 32;
    tc.learning_rate = 1e-2;
    tc.seed = seed;
    return train(toy_dataset(seed), toy_model_config(), tc);
}

/// M_w = 8, Q = 8, conv filters 4/8/8 and a 16-unit dense layer.
inline ModelConfig miniature_config(FeatureScale scale = FeatureScale::Linear) {
    ModelConfig c;
    c.input_len = 8;
    c.num_classes = 8;
    c.cols = 8;
    c.layers = {LayerSpec::conv(4, 3, 1, 1), LayerSpec::conv(8, 3, 1, 1), LayerSpec::conv(8, 1, 1, 0),
                LayerSpec::dense(16)};
    c.transform.feature_scale = scale;
    if (scale == FeatureScale::Db) {
        c.transform.offset = -20.0;
        c.transform.scale = 8.0;
    }
    return c;
}

/// |a - b| <= rel * max(|a|, |b|) + abs_floor.
inline bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace bae::test
