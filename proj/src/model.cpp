// SPDX-License-Identifier: Apache-2.0
#include "bae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "bae/binio.hpp"
#include "bae/error.hpp"
#include "bae/json_enum.hpp"

namespace bae {

using nlohmann::json;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

BAE_JSON_ENUM(LayerKind, {{LayerKind::Conv, "conv"}, {LayerKind::Dense, "dense"}})
BAE_JSON_ENUM(Activation, {{Activation::None, "none"}, {Activation::Relu, "relu"}})
BAE_JSON_ENUM(ConvMode, {{ConvMode::OneD, "1d"}, {ConvMode::TwoD, "2d"}})
BAE_JSON_ENUM(Optimizer, {{Optimizer::Adam, "adam"}, {Optimizer::GradientDescent, "gd"}})

// ---------------------------------------------------------------------------
// Configuration

double InputTransform::apply(double x) const {
    const double t = feature_scale == FeatureScale::Db ? 10.0 * std::log10(std::max(x, 0.0) + floor_mw) : x;
    return (t - offset) / scale;
}

double InputTransform::derivative(double x) const {
    if (feature_scale == FeatureScale::Linear) return 1.0 / scale;
    if (x < 0.0) return 0.0;
    return 10.0 / (std::numbers::ln10 * (x + floor_mw) * scale);
}

void ModelConfig::validate() const {
    if (input_len < 1) throw ConfigError("model.input_len must be >= 1");
    if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
    if (conv_mode == ConvMode::TwoD && rows * cols != input_len)
        throw ConfigError("model: 2D reshape requires rows * cols == input_len");
    if (!(transform.scale != 0.0) || !std::isfinite(transform.scale)) throw ConfigError("model: bad transform scale");
    bool seen_dense = false;
    for (const auto& l : layers) {
        if (l.units < 1) throw ConfigError("model: layer width must be >= 1");
        if (l.kind == LayerKind::Conv) {
            if (seen_dense) throw ConfigError("model: convolution after a dense layer");
            if (l.kernel < 1 || l.stride < 1 || l.padding < 0) throw ConfigError("model: bad convolution geometry");
        } else {
            seen_dense = true;
        }
    }
}

ModelConfig ModelConfig::standard(int m_w, int q, FeatureScale scale) {
    ModelConfig c;
    c.input_len = m_w;
    c.num_classes = q;
    c.cols = m_w;
    c.layers = {LayerSpec::conv(32, 3, 1, 1), LayerSpec::conv(64, 3, 1, 1), LayerSpec::conv(128, 1, 1, 0),
                LayerSpec::dense(128)};
    c.transform.feature_scale = scale;
    c.transform.fitted = false;
    return c;
}

void to_json(json& j, const ModelConfig& c) {
    json layers = json::array();
    for (const auto& l : c.layers)
        layers.push_back({{"kind", l.kind},
                          {"units", l.units},
                          {"kernel", l.kernel},
                          {"stride", l.stride},
                          {"padding", l.padding},
                          {"activation", l.activation}});
    j = json{{"input_len", c.input_len},
             {"num_classes", c.num_classes},
             {"layers", layers},
             {"conv_mode", c.conv_mode},
             {"rows", c.rows},
             {"cols", c.cols},
             {"transform",
              {{"feature_scale", to_string(c.transform.feature_scale)},
               {"offset", c.transform.offset},
               {"scale", c.transform.scale},
               {"floor_mw", c.transform.floor_mw},
               {"fitted", c.transform.fitted}}}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.input_len = j.value("input_len", d.input_len);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.layers.clear();
    if (j.contains("layers")) {
        for (const auto& l : j.at("layers")) {
            LayerSpec s;
            s.kind = l.value("kind", LayerKind::Conv);
            s.units = l.at("units").get<int>();
            s.kernel = l.value("kernel", s.kind == LayerKind::Conv ? 3 : 1);
            s.stride = l.value("stride", 1);
            s.padding = l.value("padding", s.kind == LayerKind::Conv ? 1 : 0);
            s.activation = l.value("activation", Activation::Relu);
            c.layers.push_back(s);
        }
    }
    c.conv_mode = j.value("conv_mode", d.conv_mode);
    c.rows = j.value("rows", 1);
    c.cols = j.value("cols", c.input_len);
    if (j.contains("transform")) {
        const auto& t = j.at("transform");
        c.transform.feature_scale = feature_scale_from_string(t.value("feature_scale", std::string("linear")));
        c.transform.offset = t.value("offset", 0.0);
        c.transform.scale = t.value("scale", 1.0);
        c.transform.floor_mw = t.value("floor_mw", 1e-13);
        c.transform.fitted = t.value("fitted", true);
    }
}

void TrainingConfig::validate() const {
    if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
    if (patience < 0) throw ConfigError("training.patience must be >= 0");
}

void to_json(json& j, const TrainingConfig& c) {
    j = json{{"optimizer", c.optimizer}, {"learning_rate", c.learning_rate},
             {"beta1", c.beta1},         {"beta2", c.beta2},
             {"epsilon", c.epsilon},     {"epochs", c.epochs},
             {"batch_size", c.batch_size}, {"seed", c.seed},
             {"patience", c.patience}};
}

void from_json(const json& j, TrainingConfig& c) {
    TrainingConfig d;
    c.optimizer = j.value("optimizer", d.optimizer);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.patience = j.value("patience", d.patience);
}

// ---------------------------------------------------------------------------
// Layer geometry

namespace {

struct Geom {
    LayerKind kind;
    Activation act;
    int cin, hin, win;
    int cout, hout, wout;
    int kh = 1, kw = 1, sh = 1, sw = 1, ph = 0, pw = 0;
    std::size_t w_off = 0, b_off = 0;

    int in_size() const { return cin * hin * win; }
    int out_size() const { return cout * hout * wout; }
    int patch_len() const { return cin * kh * kw; }
    int positions() const { return hout * wout; }
    std::size_t n_weights() const {
        return static_cast<std::size_t>(cout) * (kind == LayerKind::Conv ? patch_len() : in_size());
    }
};

std::vector<Geom> plan(const ModelConfig& c) {
    c.validate();
    std::vector<Geom> out;
    int ch = 1;
    int h = c.conv_mode == ConvMode::TwoD ? c.rows : 1;
    int w = c.conv_mode == ConvMode::TwoD ? c.cols : c.input_len;
    std::size_t offset = 0;
    auto push = [&](Geom g) {
        g.w_off = offset;
        g.b_off = offset + g.n_weights();
        offset = g.b_off + static_cast<std::size_t>(g.cout);
        out.push_back(g);
        ch = g.cout;
        h = g.hout;
        w = g.wout;
    };
    for (const auto& l : c.layers) {
        Geom g{};
        g.kind = l.kind;
        g.act = l.activation;
        g.cin = ch;
        g.hin = h;
        g.win = w;
        g.cout = l.units;
        if (l.kind == LayerKind::Conv) {
            if (c.conv_mode == ConvMode::TwoD) {
                g.kh = g.kw = l.kernel;
                g.sh = g.sw = l.stride;
                g.ph = g.pw = l.padding;
            } else {
                g.kw = l.kernel;
                g.sw = l.stride;
                g.pw = l.padding;
            }
            g.hout = (h + 2 * g.ph - g.kh) / g.sh + 1;
            g.wout = (w + 2 * g.pw - g.kw) / g.sw + 1;
            if (h + 2 * g.ph < g.kh || w + 2 * g.pw < g.kw)
                throw ConfigError("model: convolution kernel larger than its padded input");
        } else {
            // Dense layers see the flattened (channel-major) input.
            g.cin = ch * h * w;
            g.hin = g.win = 1;
            g.hout = g.wout = 1;
        }
        push(g);
    }
    Geom head{};
    head.kind = LayerKind::Dense;
    head.act = Activation::None;
    head.cin = ch * h * w;
    head.hin = head.win = 1;
    head.cout = c.num_classes;
    head.hout = head.wout = 1;
    push(head);
    return out;
}

Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, const Geom& g) {
    const int P = g.positions();
    const Eigen::Index B = x.cols();
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(g.patch_len(), P * B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const double* src = x.col(b).data();
        for (int oy = 0; oy < g.hout; ++oy)
            for (int ox = 0; ox < g.wout; ++ox) {
                double* dst = cols.col(b * P + oy * g.wout + ox).data();
                int r = 0;
                for (int ci = 0; ci < g.cin; ++ci)
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const int iy = oy * g.sh - g.ph + ky;
                        for (int kx = 0; kx < g.kw; ++kx, ++r) {
                            const int ix = ox * g.sw - g.pw + kx;
                            if (iy >= 0 && iy < g.hin && ix >= 0 && ix < g.win)
                                dst[r] = src[(ci * g.hin + iy) * g.win + ix];
                        }
                    }
            }
    }
    return cols;
}

Eigen::MatrixXd col2im(const Eigen::MatrixXd& cols, const Geom& g, Eigen::Index batch) {
    const int P = g.positions();
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(g.in_size(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        double* dst = x.col(b).data();
        for (int oy = 0; oy < g.hout; ++oy)
            for (int ox = 0; ox < g.wout; ++ox) {
                const double* src = cols.col(b * P + oy * g.wout + ox).data();
                int r = 0;
                for (int ci = 0; ci < g.cin; ++ci)
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const int iy = oy * g.sh - g.ph + ky;
                        for (int kx = 0; kx < g.kw; ++kx, ++r) {
                            const int ix = ox * g.sw - g.pw + kx;
                            if (iy >= 0 && iy < g.hin && ix >= 0 && ix < g.win)
                                dst[(ci * g.hin + iy) * g.win + ix] += src[r];
                        }
                    }
            }
    }
    return x;
}

struct Cache {
    Eigen::MatrixXd input;                 // transformed network input
    std::vector<Eigen::MatrixXd> outputs;  // post-activation, one per layer incl. head
    std::vector<Eigen::MatrixXd> patches;  // im2col buffers of conv layers
};

Eigen::Map<const RowMat> weights(const ParamVector& p, const Geom& g) {
    const Eigen::Index cols = g.kind == LayerKind::Conv ? g.patch_len() : g.in_size();
    return {p.data() + g.w_off, g.cout, cols};
}

Eigen::Map<const Eigen::VectorXd> biases(const ParamVector& p, const Geom& g) {
    return {p.data() + g.b_off, g.cout};
}

Eigen::MatrixXd transform_inputs(const Eigen::MatrixXd& raw, const InputTransform& t) {
    Eigen::MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.size(); ++i) out.data()[i] = t.apply(raw.data()[i]);
    return out;
}

void run_forward(const ModelState& m, const std::vector<Geom>& geoms, const Eigen::MatrixXd& raw, Cache& cache) {
    if (raw.rows() != m.config.input_len) throw std::invalid_argument("forward: input length mismatch");
    cache.input = transform_inputs(raw, m.config.transform);
    cache.outputs.assign(geoms.size(), {});
    cache.patches.assign(geoms.size(), {});
    const Eigen::Index B = raw.cols();
    for (std::size_t li = 0; li < geoms.size(); ++li) {
        const Geom& g = geoms[li];
        const Eigen::MatrixXd& x = li == 0 ? cache.input : cache.outputs[li - 1];
        const auto W = weights(m.parameters, g);
        const auto bias = biases(m.parameters, g);
        Eigen::MatrixXd y;
        if (g.kind == LayerKind::Conv) {
            cache.patches[li] = im2col(x, g);
            const Eigen::MatrixXd z = W * cache.patches[li];
            const int P = g.positions();
            y.resize(g.out_size(), B);
            for (Eigen::Index b = 0; b < B; ++b) {
                Eigen::Map<RowMat> yb(y.col(b).data(), g.cout, P);
                yb = z.middleCols(b * P, P);
                yb.colwise() += bias;
            }
        } else {
            y = W * x;
            y.colwise() += bias;
        }
        if (g.act == Activation::Relu) y = y.cwiseMax(0.0);
        cache.outputs[li] = std::move(y);
    }
}

// Gradient of the summed loss contributions in `dlogits` back through the network.
void run_backward(const ModelState& m, const std::vector<Geom>& geoms, const Cache& cache, Eigen::MatrixXd dlogits,
                  ParamVector& grad, Eigen::MatrixXd* dinput) {
    grad.assign(m.parameters.size(), 0.0);
    Eigen::MatrixXd dy = std::move(dlogits);
    const Eigen::Index B = dy.cols();
    for (std::size_t li = geoms.size(); li-- > 0;) {
        const Geom& g = geoms[li];
        const Eigen::MatrixXd& x = li == 0 ? cache.input : cache.outputs[li - 1];
        if (g.act == Activation::Relu) dy = dy.cwiseProduct((cache.outputs[li].array() > 0.0).cast<double>().matrix());
        const auto W = weights(m.parameters, g);
        Eigen::Map<RowMat> dW(grad.data() + g.w_off, W.rows(), W.cols());
        Eigen::Map<Eigen::VectorXd> db(grad.data() + g.b_off, g.cout);
        const bool need_dx = li > 0 || dinput != nullptr;
        if (g.kind == LayerKind::Conv) {
            const int P = g.positions();
            Eigen::MatrixXd dz(g.cout, P * B);
            for (Eigen::Index b = 0; b < B; ++b)
                dz.middleCols(b * P, P) = Eigen::Map<const RowMat>(dy.col(b).data(), g.cout, P);
            dW.noalias() = dz * cache.patches[li].transpose();
            db = dz.rowwise().sum();
            if (need_dx) dy = col2im(W.transpose() * dz, g, B);
        } else {
            dW.noalias() = dy * x.transpose();
            db = dy.rowwise().sum();
            if (need_dx) dy = W.transpose() * dy;
        }
    }
    if (dinput) {
        // dy now holds d loss / d transformed input.
        *dinput = std::move(dy);
    }
}

// Softmax-CE over columns; returns summed loss and writes (p - onehot) * scale.
double softmax_ce_batch(const Eigen::MatrixXd& logits, std::span<const int> labels, double scale,
                        Eigen::MatrixXd& dlogits) {
    dlogits.resize(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= logits.rows()) throw std::invalid_argument("label outside [0, Q)");
        const auto col = logits.col(b);
        const double mx = col.maxCoeff();
        Eigen::VectorXd e = (col.array() - mx).exp();
        const double sum = e.sum();
        total += std::log(sum) - (col[y] - mx);
        e /= sum;
        e[y] -= 1.0;
        dlogits.col(b) = e * scale;
    }
    return total;
}

Eigen::MatrixXd raw_input_gradient(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& dtransformed,
                                   const InputTransform& t) {
    Eigen::MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.size(); ++i) out.data()[i] = dtransformed.data()[i] * t.derivative(raw.data()[i]);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// State

std::size_t parameter_count(const ModelConfig& config) {
    const auto geoms = plan(config);
    return geoms.back().b_off + static_cast<std::size_t>(geoms.back().cout);
}

int layer_count(const ModelConfig& config) { return static_cast<int>(config.layers.size()); }

std::vector<int> layer_widths(const ModelConfig& config) {
    const auto geoms = plan(config);
    std::vector<int> out;
    for (std::size_t i = 0; i + 1 < geoms.size(); ++i) out.push_back(geoms[i].out_size());
    return out;
}

ModelState ModelState::zeros(const ModelConfig& config) {
    ModelState m;
    m.config = config;
    m.parameters.assign(parameter_count(config), 0.0);
    return m;
}

ModelState ModelState::initialized(const ModelConfig& config, std::uint64_t seed) {
    ModelState m = zeros(config);
    Rng rng = substream(seed, Stream::Init);
    for (const auto& g : plan(config)) {
        const double fan_in = static_cast<double>(g.kind == LayerKind::Conv ? g.patch_len() : g.in_size());
        const double limit = std::sqrt((g.act == Activation::Relu ? 6.0 : 3.0) / fan_in);
        for (std::size_t i = 0; i < g.n_weights(); ++i)
            m.parameters[g.w_off + i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Inference and gradients

BatchActivations forward_batch(const Eigen::MatrixXd& inputs, const ModelState& m) {
    const auto geoms = plan(m.config);
    Cache cache;
    run_forward(m, geoms, inputs, cache);
    BatchActivations out;
    out.logits = std::move(cache.outputs.back());
    cache.outputs.pop_back();
    out.layers = std::move(cache.outputs);
    return out;
}

LayerActivations forward(std::span<const double> x, const ModelState& m) {
    if (static_cast<int>(x.size()) != m.config.input_len) throw std::invalid_argument("forward: input length mismatch");
    const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    auto batch = forward_batch(col, m);
    LayerActivations out;
    out.logits = batch.logits.col(0);
    for (auto& l : batch.layers) out.layers.emplace_back(l.col(0));
    return out;
}

Eigen::VectorXd softmax(std::span<const double> logits) {
    // Aligned copy: reduction order then does not depend on the caller's buffer address.
    const Eigen::VectorXd l = Eigen::Map<const Eigen::VectorXd>(logits.data(), static_cast<Eigen::Index>(logits.size()));
    Eigen::VectorXd e = (l.array() - l.maxCoeff()).exp();
    return e / e.sum();
}

double softmax_cross_entropy(std::span<const double> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("softmax_cross_entropy: label outside [0, Q)");
    const Eigen::VectorXd l = Eigen::Map<const Eigen::VectorXd>(logits.data(), static_cast<Eigen::Index>(logits.size()));
    const double mx = l.maxCoeff();
    return std::log((l.array() - mx).exp().sum()) - (l[label] - mx);
}

BatchGradients backward_batch(const Eigen::MatrixXd& inputs, std::span<const int> labels, const ModelState& m) {
    if (static_cast<std::size_t>(inputs.cols()) != labels.size())
        throw std::invalid_argument("backward: label count differs from batch size");
    const auto geoms = plan(m.config);
    Cache cache;
    run_forward(m, geoms, inputs, cache);
    const double scale = 1.0 / static_cast<double>(inputs.cols());
    Eigen::MatrixXd dlogits;
    BatchGradients out;
    out.loss = softmax_ce_batch(cache.outputs.back(), labels, scale, dlogits) * scale;
    Eigen::MatrixXd dinput;
    run_backward(m, geoms, cache, std::move(dlogits), out.parameters, &dinput);
    // Per-sample input gradients: undo the batch mean.
    out.input = raw_input_gradient(inputs, dinput, m.config.transform) / scale;
    return out;
}

Gradients backward(std::span<const double> x, int label, const ModelState& m) {
    if (static_cast<int>(x.size()) != m.config.input_len) throw std::invalid_argument("backward: input length mismatch");
    const Eigen::MatrixXd col = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const int labels[1] = {label};
    auto g = backward_batch(col, labels, m);
    Gradients out;
    out.parameters = std::move(g.parameters);
    out.input.assign(g.input.data(), g.input.data() + g.input.size());
    out.loss = g.loss;
    return out;
}

std::vector<int> topk_indices(std::span<const double> scores, int k) {
    if (k < 1 || k > static_cast<int>(scores.size())) throw std::invalid_argument("top-k: need 1 <= k <= Q");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    });
    idx.resize(k);
    return idx;
}

std::vector<int> predict_topk(std::span<const double> x, const ModelState& m, int k) {
    const auto act = forward(x, m);
    return topk_indices({act.logits.data(), static_cast<std::size_t>(act.logits.size())}, k);
}

// ---------------------------------------------------------------------------
// Training

Eigen::MatrixXd feature_matrix(std::span<const Sample> samples) {
    if (samples.empty()) return {};
    Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.front().rssi.size()), static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t r = 0; r < samples[i].rssi.size(); ++r)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = samples[i].rssi[r];
    return x;
}

std::vector<int> label_vector(std::span<const Sample> samples) {
    std::vector<int> y;
    y.reserve(samples.size());
    for (const auto& s : samples) y.push_back(s.label);
    return y;
}

InputTransform fit_transform(InputTransform t, const Eigen::MatrixXd& features) {
    t.offset = 0.0;
    t.scale = 1.0;
    if (features.size() == 0) {
        t.fitted = true;
        return t;
    }
    double sum = 0.0, sq = 0.0;
    for (Eigen::Index i = 0; i < features.size(); ++i) {
        const double v = t.apply(features.data()[i]);
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(features.size());
    const double mean = sum / n;
    const double var = std::max(sq / n - mean * mean, 0.0);
    t.offset = mean;
    t.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    t.fitted = true;
    return t;
}

std::pair<double, double> evaluate_accuracy_loss(const ModelState& m, std::span<const Sample> samples) {
    if (samples.empty()) return {0.0, 0.0};
    std::size_t correct = 0;
    double loss = 0.0;
    constexpr std::size_t chunk = 512;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        const auto part = samples.subspan(start, std::min(chunk, samples.size() - start));
        const auto act = forward_batch(feature_matrix(part), m);
        for (std::size_t i = 0; i < part.size(); ++i) {
            const auto col = act.logits.col(static_cast<Eigen::Index>(i));
            Eigen::Index arg;
            col.maxCoeff(&arg);
            if (arg == part[i].label) ++correct;
            loss += softmax_cross_entropy({col.data(), static_cast<std::size_t>(col.size())}, part[i].label);
        }
    }
    const double n = static_cast<double>(samples.size());
    return {static_cast<double>(correct) / n, loss / n};
}

ModelState train(const Dataset& d, const ModelConfig& mc, const TrainingConfig& tc) {
    tc.validate();
    if (d.train.empty()) throw std::invalid_argument("train: empty training split");
    ModelConfig config = mc;
    const Eigen::MatrixXd x_all = feature_matrix(d.train);
    if (x_all.rows() != config.input_len) throw ConfigError("train: feature length differs from model input_len");
    const std::vector<int> y_all = label_vector(d.train);
    if (!config.transform.fitted) config.transform = fit_transform(config.transform, x_all);

    ModelState m = ModelState::initialized(config, tc.seed);
    m.training_meta.seed = tc.seed;
    m.training_meta.optimizer = tc;

    const std::size_t n = d.train.size();
    const std::size_t P = m.parameters.size();
    std::vector<double> m1(P, 0.0), m2(P, 0.0);
    std::vector<std::size_t> order(n);
    long long step = 0;

    ParamVector best_params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (static_cast<std::size_t>(tc.batch_size) < n) {
            Rng rng = substream(tc.seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch));
            for (std::size_t i = n; i > 1; --i) {
                const auto j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
                std::swap(order[i - 1], order[j]);
            }
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), n - start);
            Eigen::MatrixXd xb(x_all.rows(), static_cast<Eigen::Index>(len));
            std::vector<int> yb(len);
            for (std::size_t i = 0; i < len; ++i) {
                xb.col(static_cast<Eigen::Index>(i)) = x_all.col(static_cast<Eigen::Index>(order[start + i]));
                yb[i] = y_all[order[start + i]];
            }
            const auto geoms = plan(m.config);
            Cache cache;
            run_forward(m, geoms, xb, cache);
            Eigen::MatrixXd dlogits;
            const double scale = 1.0 / static_cast<double>(len);
            const double loss = softmax_ce_batch(cache.outputs.back(), yb, scale, dlogits) * scale;
            if (!std::isfinite(loss)) throw TrainingFailure(epoch + 1, "non-finite training loss");
            loss_sum += loss * static_cast<double>(len);
            ParamVector grad;
            run_backward(m, geoms, cache, std::move(dlogits), grad, nullptr);

            ++step;
            if (tc.optimizer == Optimizer::Adam) {
                const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
                for (std::size_t i = 0; i < P; ++i) {
                    m1[i] = tc.beta1 * m1[i] + (1.0 - tc.beta1) * grad[i];
                    m2[i] = tc.beta2 * m2[i] + (1.0 - tc.beta2) * grad[i] * grad[i];
                    m.parameters[i] -= tc.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + tc.epsilon);
                }
            } else {
                for (std::size_t i = 0; i < P; ++i) m.parameters[i] -= tc.learning_rate * grad[i];
            }
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(n);
        if (!d.validation.empty()) {
            const auto [acc, vloss] = evaluate_accuracy_loss(m, d.validation);
            stats.val_accuracy = acc;
            stats.val_loss = vloss;
            if (!std::isfinite(vloss)) throw TrainingFailure(epoch + 1, "non-finite validation loss");
        }
        m.training_meta.history.push_back(stats);
        m.training_meta.epochs_run = epoch + 1;

        if (tc.patience > 0 && !d.validation.empty()) {
            if (stats.val_loss < best_val) {
                best_val = stats.val_loss;
                best_params = m.parameters;
                since_best = 0;
            } else if (++since_best >= tc.patience) {
                m.parameters = best_params;
                break;
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {
constexpr std::array<char, 4> kCheckpointMagic = {'B', 'A', 'E', 'M'};

json meta_to_json(const TrainingMeta& t) {
    json hist = json::array();
    for (const auto& e : t.history)
        hist.push_back({{"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}});
    return {{"epochs_run", t.epochs_run}, {"seed", t.seed}, {"optimizer", t.optimizer}, {"history", hist}};
}

TrainingMeta meta_from_json(const json& j) {
    TrainingMeta t;
    t.epochs_run = j.value("epochs_run", 0);
    t.seed = j.value("seed", std::uint64_t{0});
    t.optimizer = j.value("optimizer", json::object());
    for (const auto& e : j.value("history", json::array()))
        t.history.push_back({e.value("train_loss", 0.0), e.value("val_loss", 0.0), e.value("val_accuracy", 0.0)});
    return t;
}
}  // namespace

void write_checkpoint(const ModelState& m, const std::filesystem::path& path) {
    binio::Writer w;
    for (double p : m.parameters) w.f32(static_cast<float>(p));
    const json header{{"version", kCheckpointVersion},
                      {"config", m.config},
                      {"training_meta", meta_to_json(m.training_meta)},
                      {"n_params", m.parameters.size()},
                      {"config_hash", m.config_hash}};
    binio::write_file(path, binio::pack(kCheckpointMagic, header, w.buffer()));
}

ModelState read_checkpoint(const std::filesystem::path& path) {
    const auto bytes = binio::read_file(path);
    auto unpacked = binio::unpack(bytes, kCheckpointMagic, [](const json& h) {
        if (h.value("version", -1) != kCheckpointVersion)
            throw FormatError(FormatError::Kind::Version, "unsupported checkpoint version");
        return h.value("n_params", std::size_t{0}) * 4;
    });
    ModelState m;
    try {
        m.config = unpacked.header.at("config").get<ModelConfig>();
        m.training_meta = meta_from_json(unpacked.header.value("training_meta", json::object()));
        m.config_hash = unpacked.header.value("config_hash", std::string());
    } catch (const std::exception& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("checkpoint header: ") + e.what());
    }
    const std::size_t n = unpacked.header.at("n_params").get<std::size_t>();
    std::size_t expected = 0;
    try {
        expected = parameter_count(m.config);
    } catch (const ConfigError& e) {
        throw FormatError(FormatError::Kind::Schema, std::string("checkpoint config: ") + e.what());
    }
    if (n != expected) throw FormatError(FormatError::Kind::Schema, "parameter count does not match config");
    binio::Reader r(unpacked.payload);
    m.parameters.resize(n);
    for (auto& p : m.parameters) p = r.f32();
    return m;
}

}  // namespace bae
