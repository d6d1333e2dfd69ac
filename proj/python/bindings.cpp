// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Configurations and reports cross the boundary as JSON text;
// the pure-Python wrapper in bae/__init__.py converts them to dicts.

#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bae/attack.hpp"
#include "bae/channel.hpp"
#include "bae/codebook.hpp"
#include "bae/dknn.hpp"
#include "bae/error.hpp"
#include "bae/eval.hpp"
#include "bae/model.hpp"
#include "bae/pipeline.hpp"
#include "bae/sweep.hpp"

namespace py = pybind11;
using namespace bae;
using nlohmann::json;

namespace {

// Columns are beams.
Eigen::MatrixXcd codebook_matrix(const Codebook& cb) {
    Eigen::MatrixXcd m(cb.n_bs(), cb.size());
    for (int q = 0; q < cb.size(); ++q) m.col(q) = cb.beams[static_cast<std::size_t>(q)].w;
    return m;
}

ChannelVector to_channel(const Eigen::VectorXcd& h) {
    ChannelVector c;
    c.h = h;
    return c;
}

BeamVector to_beam(const Eigen::VectorXcd& w) {
    BeamVector b;
    b.w = w;
    return b;
}

// Rows are UEs.
Eigen::MatrixXcd channel_matrix(const std::vector<ChannelVector>& channels) {
    if (channels.empty()) return {};
    Eigen::MatrixXcd m(static_cast<Eigen::Index>(channels.size()), channels.front().h.size());
    for (std::size_t i = 0; i < channels.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = channels[i].h.transpose();
    return m;
}

py::dict split_dict(std::span<const Sample> samples, int m_w) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x(static_cast<Eigen::Index>(samples.size()), m_w);
    std::vector<int> labels, ids;
    std::vector<float> snr;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (int f = 0; f < m_w; ++f) x(static_cast<Eigen::Index>(i), f) = samples[i].rssi[static_cast<std::size_t>(f)];
        labels.push_back(samples[i].label);
        ids.push_back(static_cast<int>(samples[i].ue_id));
        snr.push_back(samples[i].snr_db);
    }
    py::dict d;
    d["features"] = x;
    d["labels"] = labels;
    d["ue_ids"] = ids;
    d["snr_db"] = snr;
    return d;
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["train"] = split_dict(d.train, d.meta.m_w);
    out["validation"] = split_dict(d.validation, d.meta.m_w);
    out["calibration"] = split_dict(d.calibration, d.meta.m_w);
    out["test"] = split_dict(d.test, d.meta.m_w);
    json meta{{"m_w", d.meta.m_w},
              {"q", d.meta.q},
              {"n_bs", d.meta.n_bs},
              {"oversampling", d.meta.oversampling},
              {"seed", d.meta.seed},
              {"config_hash", d.meta.config_hash},
              {"adversarial", d.meta.adversarial},
              {"scenario", d.meta.scenario}};
    out["meta"] = meta.dump();
    return out;
}

RunConfig run_config(const std::string& config_json, const std::string& workspace,
                     const std::vector<std::string>& overrides) {
    json j = default_run_config().to_json();
    if (!config_json.empty()) j.merge_patch(json::parse(config_json));
    for (const auto& o : overrides) apply_override(j, o);
    if (!workspace.empty()) j["paths"]["workspace"] = workspace;
    return run_config_from_json(j);
}

/// Checkpoint plus calibrated DkNN engine loaded from files.
struct Engine {
    ModelState model;
    NeighborIndex index;
    CalibrationScores calibration;

    Engine(const std::filesystem::path& checkpoint, const std::filesystem::path& index_path,
           const std::filesystem::path& calibration_path)
        : model(read_checkpoint(checkpoint)), index(read_index(index_path)), calibration(read_calibration(calibration_path)) {}

    std::string predict(const std::vector<double>& x) const { return json(dknn_predict(x, index, calibration, model)).dump(); }

    Eigen::MatrixXd logits(const Eigen::MatrixXd& features) const {
        return forward_batch(features.transpose(), model).logits.transpose();
    }

    std::vector<double> fgsm_one(const std::vector<double>& x, int label, double epsilon, bool clamp) const {
        AttackConfig c;
        c.epsilon = epsilon;
        c.clamp_nonnegative = clamp;
        return fgsm(x, label, model, c);
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Beam alignment simulation, beam classifier and DkNN credibility core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<TrainingFailure>(m, "TrainingFailure", PyExc_ArithmeticError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const json::exception& e) {
            py::set_error(PyExc_ValueError, e.what());
        }
    });

    m.def("array_response", &array_response, py::arg("phi"), py::arg("n_bs"), py::arg("d_over_lambda") = 0.5,
          "Unit-norm ULA steering vector.");
    m.def("dft_codebook", [](int n) { return codebook_matrix(dft_codebook(n)); }, py::arg("n_bs"));
    m.def("odft_codebook", [](int n, int os) { return codebook_matrix(odft_codebook(n, os)); }, py::arg("n_bs"),
          py::arg("oversampling"));
    m.def("sensing_codebook", [](int n, int m_w) { return codebook_matrix(sensing_codebook(n, m_w)); },
          py::arg("n_bs"), py::arg("m_w"));
    m.def("sensing_indices", &sensing_indices, py::arg("n_bs"), py::arg("m_w"));
    m.def("best_quantized_beam",
          [](const Eigen::VectorXcd& h, int bits) { return best_quantized_beam(to_channel(h), bits).w; }, py::arg("h"),
          py::arg("bits"));
    m.def("optimal_beam",
          [](const Eigen::VectorXcd& h, int n_bs, int os) { return optimal_beam(to_channel(h), odft_codebook(n_bs, os)); },
          py::arg("h"), py::arg("n_bs"), py::arg("oversampling"));

    m.def("_generate_channels",
          [](const std::string& scenario) { return channel_matrix(generate_channels(json::parse(scenario).get<ScenarioConfig>())); },
          py::arg("scenario_json"));
    m.def("_build_dataset",
          [](const std::string& config) { return dataset_dict(build_dataset(json::parse(config).get<DatasetConfig>())); },
          py::arg("dataset_json"));
    m.def("read_dataset", [](const std::filesystem::path& p) { return dataset_dict(read_dataset(p)); }, py::arg("path"));

    m.def("spectral_efficiency",
          [](const Eigen::VectorXcd& h, const Eigen::VectorXcd& w, double p, double s2) {
              return spectral_efficiency(to_channel(h), to_beam(w), p, s2);
          },
          py::arg("h"), py::arg("w"), py::arg("p_bs"), py::arg("sigma2"));
    m.def("topk_accuracy",
          [](const std::vector<std::vector<int>>& preds, const std::vector<int>& labels, int k) {
              return topk_accuracy(preds, labels, k);
          },
          py::arg("predictions"), py::arg("labels"), py::arg("k"));
    m.def("sweep_overhead",
          [](const std::string& kind, int n_bs, int os, int m_w, int extra_k) {
              SweepMethod s;
              if (kind == "dft") s = SweepMethod::ExhaustiveDft;
              else if (kind == "odft") s = SweepMethod::ExhaustiveOdft;
              else if (kind == "proposed") s = SweepMethod::Proposed;
              else throw std::invalid_argument("kind must be dft, odft or proposed");
              return sweep_overhead({s, n_bs, os, m_w, extra_k});
          },
          py::arg("kind"), py::arg("n_bs") = 32, py::arg("oversampling") = 4, py::arg("m_w") = 32, py::arg("extra_k") = 0);
    m.def("_reliability_diagram",
          [](const std::vector<double>& scores, const std::vector<bool>& correct, int n_bins) {
              std::vector<char> c(correct.begin(), correct.end());
              const auto d = reliability_diagram(scores, c, n_bins);
              json bins = json::array();
              for (const auto& b : d.bins)
                  bins.push_back({{"low", b.low}, {"high", b.high}, {"count", b.count}, {"correct", b.correct},
                                  {"accuracy", b.accuracy ? json(*b.accuracy) : json(nullptr)}});
              return bins.dump();
          },
          py::arg("scores"), py::arg("correct"), py::arg("n_bins") = 10);
    m.def("p_value", [](int score, const std::vector<int>& scores) { return p_value(score, CalibrationScores{scores, 0}); },
          py::arg("score"), py::arg("calibration_scores"));

    py::class_<Engine>(m, "Engine", "Trained classifier with its calibrated DkNN engine")
        .def(py::init<const std::filesystem::path&, const std::filesystem::path&, const std::filesystem::path&>(),
             py::arg("checkpoint"), py::arg("index"), py::arg("calibration"))
        .def("_predict", &Engine::predict, py::arg("x"))
        .def("logits", &Engine::logits, py::arg("features"), "Logits for a (samples, m_w) feature matrix.")
        .def("fgsm", &Engine::fgsm_one, py::arg("x"), py::arg("label"), py::arg("epsilon"), py::arg("clamp") = true)
        .def_property_readonly("num_classes", [](const Engine& e) { return e.model.config.num_classes; })
        .def_property_readonly("layers", [](const Engine& e) { return e.index.n_layers(); });

    m.def("_default_config", [] { return default_run_config().to_json().dump(); });
    m.def("_resolve_config",
          [](const std::string& c, const std::string& ws, const std::vector<std::string>& o) {
              return run_config(c, ws, o).to_json().dump();
          },
          py::arg("config_json"), py::arg("workspace"), py::arg("overrides"));
    m.def("_run_stage",
          [](const std::string& stage, const std::string& c, const std::string& ws, const std::vector<std::string>& o,
             const std::string& opts_json) {
              const auto cfg = run_config(c, ws, o);
              const json opts = opts_json.empty() ? json::object() : json::parse(opts_json);
              std::ostringstream log, out;
              json result = nullptr;
              ArtifactOptions art{opts.value("force", false), opts.value("allow_mismatch", false)};
              py::gil_scoped_release release;
              if (stage == "generate") {
                  cmd_generate(cfg, {opts.value("verify_labels", false), opts.value("create_dirs", false)}, log);
              } else if (stage == "train") {
                  cmd_train(cfg, art, log);
              } else if (stage == "calibrate") {
                  const auto b = opts.value("backend", std::string("config"));
                  BackendChoice choice = b == "exact" ? BackendChoice::Exact
                                         : b == "lsh" ? BackendChoice::Lsh
                                         : b == "both" ? BackendChoice::Both
                                                       : BackendChoice::Configured;
                  if (auto cmp = cmd_calibrate(cfg, choice, art, log))
                      result = {{"recall", cmp->recall}, {"agreement", cmp->agreement}, {"queries", cmp->queries},
                                {"fallbacks", cmp->fallbacks}};
              } else if (stage == "attack") {
                  AttackOptions a;
                  if (opts.contains("epsilon")) a.epsilon = opts.at("epsilon").get<double>();
                  if (opts.contains("epsilon_relative")) a.epsilon_relative = opts.at("epsilon_relative").get<double>();
                  a.sweep = opts.value("sweep", std::vector<double>{});
                  a.sweep_relative = opts.value("relative", false);
                  json files = json::array();
                  for (const auto& f : cmd_attack(cfg, a, art, log)) files.push_back(f.string());
                  result = files;
              } else if (stage == "eval") {
                  EvalOptions e;
                  e.skip_adversarial = opts.value("skip_adversarial", false);
                  result = cmd_eval(cfg, e, art, out, log);
              } else {
                  throw ConfigError("unknown stage '" + stage + "'");
              }
              return std::make_pair(result.dump(), log.str());
          },
          py::arg("stage"), py::arg("config_json"), py::arg("workspace"), py::arg("overrides"), py::arg("options_json"));
}
