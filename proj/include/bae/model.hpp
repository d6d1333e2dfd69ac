// SPDX-License-Identifier: Apache-2.0
//
// Small convolutional beam classifier with exact backpropagation.
//
// Tensors are stored channel-major ([channel][row][col]) and batches as
// Eigen matrices with one sample per column. Parameters live in one flat
// vector; each layer owns a contiguous slice holding its weights (row-major
// [out][in][kh][kw] for convolutions, [out][in] for dense layers) followed by
// its biases.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <json.hpp>

#include "bae/sweep.hpp"

namespace bae {

/// Flat parameter storage. Over-aligned so vectorized kernels see the same
/// alignment on every run, which keeps results bit-reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

enum class LayerKind { Conv, Dense };
enum class Activation { None, Relu };

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    int units = 0;  ///< filters for Conv, output width for Dense
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    Activation activation = Activation::Relu;

    static LayerSpec conv(int filters, int kernel, int stride, int padding) {
        return {LayerKind::Conv, filters, kernel, stride, padding, Activation::Relu};
    }
    static LayerSpec dense(int units, Activation act = Activation::Relu) {
        return {LayerKind::Dense, units, 1, 1, 0, act};
    }
};

enum class ConvMode { OneD, TwoD };

/// Maps stored linear-power features to network inputs:
///   x' = (t(x) - offset) / scale, t = identity (Linear) or 10 log10(max(x, 0) + floor_mw) (Db).
struct InputTransform {
    FeatureScale feature_scale = FeatureScale::Linear;
    double offset = 0.0;
    double scale = 1.0;
    double floor_mw = 1e-13;
    bool fitted = true;  ///< false: train() fits offset/scale on the training features

    double apply(double x) const;
    double derivative(double x) const;
};

struct ModelConfig {
    int input_len = 32;
    int num_classes = 128;
    /// Hidden layers; each one contributes a representation to LayerActivations.
    /// A dense head with num_classes logits is always appended.
    std::vector<LayerSpec> layers;
    ConvMode conv_mode = ConvMode::OneD;
    int rows = 1;  ///< 2D mode reshape
    int cols = 0;
    InputTransform transform;

    void validate() const;

    /// Conv 32 k3 s1 p1, conv 64 k3 s1 p1, conv 128 k1 s1 p0 (ReLU after each),
    /// dense 128 (ReLU), dense head. Db features standardized on the train split.
    static ModelConfig standard(int m_w, int q, FeatureScale scale = FeatureScale::Db);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class Optimizer { Adam, GradientDescent };

struct TrainingConfig {
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int epochs = 100;
    int batch_size = 128;
    std::uint64_t seed = 1;
    int patience = 0;  ///< early stop on validation loss; 0 disables

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainingMeta {
    int epochs_run = 0;
    std::vector<EpochStats> history;
    std::uint64_t seed = 0;
    nlohmann::json optimizer = nlohmann::json::object();
};

struct ModelState {
    ModelConfig config;
    ParamVector parameters;
    TrainingMeta training_meta;
    std::string config_hash;

    /// Zero-initialized parameters of the right size.
    static ModelState zeros(const ModelConfig& config);
    /// Fan-in scaled uniform weights, zero biases.
    static ModelState initialized(const ModelConfig& config, std::uint64_t seed);
};

std::size_t parameter_count(const ModelConfig& config);
/// Number of hidden layers L (excludes the logits head).
int layer_count(const ModelConfig& config);
/// Flattened output width of every hidden layer.
std::vector<int> layer_widths(const ModelConfig& config);

struct LayerActivations {
    std::vector<Eigen::VectorXd> layers;  ///< f_eta(x), eta = 1..L
    Eigen::VectorXd logits;
};

/// Single-sample forward pass. Throws std::invalid_argument if |x| != input_len.
LayerActivations forward(std::span<const double> x, const ModelState& m);

/// Batched forward; column b of `inputs` is one raw feature vector.
struct BatchActivations {
    std::vector<Eigen::MatrixXd> layers;
    Eigen::MatrixXd logits;
};
BatchActivations forward_batch(const Eigen::MatrixXd& inputs, const ModelState& m);

/// -log softmax(logits)[label], computed with max subtraction.
double softmax_cross_entropy(std::span<const double> logits, int label);
Eigen::VectorXd softmax(std::span<const double> logits);

struct Gradients {
    ParamVector parameters;
    std::vector<double> input;
    double loss = 0.0;
};

/// Exact gradients of softmax_cross_entropy(forward(x)) w.r.t. parameters and raw x.
Gradients backward(std::span<const double> x, int label, const ModelState& m);

/// Batched mean-loss gradients (parameters) and per-sample input gradients (columns).
struct BatchGradients {
    ParamVector parameters;
    Eigen::MatrixXd input;
    double loss = 0.0;  ///< mean over the batch
};
BatchGradients backward_batch(const Eigen::MatrixXd& inputs, std::span<const int> labels, const ModelState& m);

/// Fits the input transform offset/scale on `features` (standardization of t(x)).
InputTransform fit_transform(InputTransform t, const Eigen::MatrixXd& features);

ModelState train(const Dataset& d, const ModelConfig& mc, const TrainingConfig& tc);

/// Indices of the k largest scores, descending, lower index first on ties.
std::vector<int> topk_indices(std::span<const double> scores, int k);
std::vector<int> predict_topk(std::span<const double> x, const ModelState& m, int k);

/// One column per sample, features widened to double.
Eigen::MatrixXd feature_matrix(std::span<const Sample> samples);
std::vector<int> label_vector(std::span<const Sample> samples);

/// Top-1 accuracy and mean loss of `m` over `samples`.
std::pair<double, double> evaluate_accuracy_loss(const ModelState& m, std::span<const Sample> samples);

/// Checkpoint: "BAEM" | u32 header length | JSON {version, config, training_meta, ...} |
/// float32 parameters | CRC32.
void write_checkpoint(const ModelState& m, const std::filesystem::path& path);
ModelState read_checkpoint(const std::filesystem::path& path);

inline constexpr int kCheckpointVersion = 1;

}  // namespace bae
