// SPDX-License-Identifier: Apache-2.0
#include "bae/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "bae/binio.hpp"
#include "bae/channel.hpp"
#include "bae/error.hpp"

namespace bae {

using nlohmann::json;
namespace fs = std::filesystem;

void to_json(json& j, const PathsConfig& p) {
    j = json{{"workspace", p.workspace},     {"dataset", p.dataset},
             {"checkpoint", p.checkpoint},   {"loss_csv", p.loss_csv},
             {"index", p.index},             {"calibration", p.calibration},
             {"adversarial", p.adversarial}, {"adversarial_dir", p.adversarial_dir},
             {"report_dir", p.report_dir}};
}

void from_json(const json& j, PathsConfig& p) {
    const PathsConfig d;
    p.workspace = j.value("workspace", d.workspace);
    p.dataset = j.value("dataset", d.dataset);
    p.checkpoint = j.value("checkpoint", d.checkpoint);
    p.loss_csv = j.value("loss_csv", d.loss_csv);
    p.index = j.value("index", d.index);
    p.calibration = j.value("calibration", d.calibration);
    p.adversarial = j.value("adversarial", d.adversarial);
    p.adversarial_dir = j.value("adversarial_dir", d.adversarial_dir);
    p.report_dir = j.value("report_dir", d.report_dir);
}

// ---------------------------------------------------------------------------
// RunConfig

json RunConfig::to_json() const {
    json scenario = dataset.scenario;
    scenario.erase("seed");
    json ds = dataset;
    for (const char* key : {"scenario", "noise", "seed"}) ds.erase(key);
    json dk = dknn;
    dk["lsh"].erase("seed");
    return json{{"seed", seed},   {"scenario", scenario}, {"noise", dataset.noise}, {"dataset", ds},
                {"model", model}, {"training", training}, {"dknn", dk},             {"attack", attack},
                {"eval", eval},   {"paths", paths}};
}

std::string RunConfig::hash() const {
    json j = to_json();
    for (const char* key : {"paths", "attack", "eval"}) j.erase(key);
    const auto text = j.dump();
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x",
                  binio::crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
    return buf;
}

fs::path RunConfig::resolve(const std::string& path) const {
    const fs::path p(path);
    return p.is_absolute() ? p : fs::path(paths.workspace) / p;
}

ModelConfig RunConfig::model_config(int m_w, int q, FeatureScale scale) const {
    ModelConfig c;
    try {
        if (!model.contains("layers")) {
            const auto preset = model.value("preset", std::string("standard"));
            if (preset != "standard") throw ConfigError("model.preset '" + preset + "' is unknown");
            c = ModelConfig::standard(m_w, q, scale);
        } else {
            c = model.get<ModelConfig>();
            c.input_len = m_w;
            c.num_classes = q;
            if (c.conv_mode == ConvMode::OneD) c.cols = m_w;
            if (!model.contains("transform")) {
                c.transform.feature_scale = scale;
                c.transform.fitted = false;
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model section: ") + e.what());
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    dataset.validate();
    training.validate();
    if (dknn.k < 1) throw ConfigError("dknn.k must be >= 1");
    if (dknn.backend == NeighborBackend::Lsh) dknn.lsh.validate();
    attack.validate();
    eval.validate();
    model_config(dataset.m_w, dataset.scenario.n_bs * dataset.oversampling, dataset.feature_scale);
}

RunConfig default_run_config() {
    RunConfig c;
    c.dataset.noise = NoiseModel::ranged(-90.0, -28.0);
    c.attack.epsilon_relative = 0.1;
    return c;
}

namespace {

// Every key of `given` must exist in `known`; free-form sections are skipped.
void reject_unknown_keys(const json& given, const json& known, const std::string& prefix) {
    for (const auto& [key, value] : given.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (path == "model") continue;
        if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (value.is_object() && known.at(key).is_object()) reject_unknown_keys(value, known.at(key), path);
    }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown_keys(j, default_run_config().to_json(), "");
    RunConfig c = default_run_config();
    try {
        c.seed = j.value("seed", c.seed);
        json ds = j.value("dataset", json::object());
        ds["scenario"] = j.value("scenario", json::object());
        ds["noise"] = j.value("noise", json::object());
        c.dataset = ds.get<DatasetConfig>();
        if (j.contains("model")) c.model = j.at("model");
        if (j.contains("training")) c.training = j.at("training").get<TrainingConfig>();
        if (j.contains("dknn")) c.dknn = j.at("dknn").get<DknnOptions>();
        if (j.contains("attack")) c.attack = j.at("attack").get<AttackConfig>();
        if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
        if (j.contains("paths")) c.paths = j.at("paths").get<PathsConfig>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.dataset.seed = c.seed;
    c.dataset.scenario.seed = c.seed;
    c.training.seed = c.seed;
    c.dknn.lsh.seed = c.seed;
    c.validate();
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

RunConfig load_run_config(const LoadOptions& options) {
    json j = default_run_config().to_json();
    if (options.config_file) {
        std::ifstream in(*options.config_file);
        if (!in) throw ConfigError("cannot read config " + options.config_file->string());
        const json file = json::parse(in, nullptr, false);
        if (file.is_discarded() || !file.is_object())
            throw ConfigError("config " + options.config_file->string() + " is not a JSON object");
        j.merge_patch(file);
    }
    for (const auto& o : options.overrides) apply_override(j, o);
    if (options.seed) j["seed"] = *options.seed;
    if (options.workspace) {
        j["paths"]["workspace"] = *options.workspace;
    } else if (const char* env = std::getenv(kWorkspaceEnv); env && *env) {
        j["paths"]["workspace"] = env;
    }
    return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

void check_lineage(const std::string& artifact, const std::string& found, const std::string& expected,
                   const ArtifactOptions& opt, std::ostream& log) {
    if (found == expected) return;
    const std::string msg = artifact + " was produced under config hash '" + found + "', current config is '" +
                            expected + "'";
    if (!opt.allow_mismatch) throw ConfigError(msg + " (use --allow-mismatch to override)");
    log << "warning: " << msg << '\n';
}

Dataset load_dataset(const RunConfig& cfg, const ArtifactOptions& opt, std::ostream& log) {
    auto d = read_dataset(cfg.resolve(cfg.paths.dataset));
    check_lineage("dataset", d.meta.config_hash, cfg.hash(), opt, log);
    return d;
}

ModelState load_model(const RunConfig& cfg, const ArtifactOptions& opt, std::ostream& log) {
    auto m = read_checkpoint(cfg.resolve(cfg.paths.checkpoint));
    check_lineage("checkpoint", m.config_hash, cfg.hash(), opt, log);
    return m;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<ChannelVector> channels_for(const Dataset& d) {
    const auto scenario = d.meta.scenario.get<ScenarioConfig>();
    return generate_channels(scenario);
}

}  // namespace

void check_split_overlap(const Dataset& d) {
    std::set<std::uint32_t> seen;
    for (auto split : {Split::Train, Split::Validation, Split::Calibration, Split::Test})
        for (const auto& s : split_of(d, split))
            if (!seen.insert(s.ue_id).second)
                throw FormatError(FormatError::Kind::Schema, "UE " + std::to_string(s.ue_id) +
                                                                 " appears more than once across splits (found again in " +
                                                                 to_string(split) + ")");
}

// ---------------------------------------------------------------------------
// Stages

void cmd_generate(const RunConfig& cfg, const GenerateOptions& opt, std::ostream& log) {
    const auto out = cfg.resolve(cfg.paths.dataset);
    if (out.has_parent_path() && !fs::exists(out.parent_path())) {
        if (!opt.create_dirs)
            throw FormatError(FormatError::Kind::Io,
                              "output directory " + out.parent_path().string() + " does not exist (use --create-dirs)");
        fs::create_directories(out.parent_path());
    }
    const auto channels = generate_channels(cfg.dataset.scenario);
    auto d = build_dataset(cfg.dataset, channels);
    d.meta.config_hash = cfg.hash();
    if (opt.verify_labels) {
        const double match = verify_labels(d, channels);
        log << "label verification: " << match * 100.0 << "% match\n";
        if (match != 1.0) throw FormatError(FormatError::Kind::Schema, "generated labels failed exhaustive verification");
    }
    write_dataset(d, out);
    log << "wrote " << out.string() << " (train " << d.train.size() << ", validation " << d.validation.size()
        << ", calibration " << d.calibration.size() << ", test " << d.test.size() << ")\n";
}

void cmd_train(const RunConfig& cfg, const ArtifactOptions& opt, std::ostream& log) {
    const auto out = cfg.resolve(cfg.paths.checkpoint);
    if (fs::exists(out) && !opt.force)
        throw ConfigError("checkpoint " + out.string() + " exists (use --force to overwrite)");
    const auto d = load_dataset(cfg, opt, log);
    const auto mc = cfg.model_config(d.meta.m_w, d.meta.q, d.meta.feature_scale);
    auto m = train(d, mc, cfg.training);
    m.config_hash = cfg.hash();
    ensure_parent(out);
    write_checkpoint(m, out);

    const auto csv_path = cfg.resolve(cfg.paths.loss_csv);
    ensure_parent(csv_path);
    std::ofstream csv(csv_path);
    if (!csv) throw FormatError(FormatError::Kind::Io, "cannot write " + csv_path.string());
    csv.precision(10);
    csv << "epoch,train_loss,val_loss,val_accuracy\n";
    for (std::size_t e = 0; e < m.training_meta.history.size(); ++e) {
        const auto& s = m.training_meta.history[e];
        csv << e + 1 << ',' << s.train_loss << ',' << s.val_loss << ',' << s.val_accuracy << '\n';
    }
    const auto [acc, loss] = evaluate_accuracy_loss(m, d.test);
    log << "trained " << m.training_meta.epochs_run << " epochs; test top-1 " << acc << ", loss " << loss << '\n';
    log << "wrote " << out.string() << " and " << csv_path.string() << '\n';
}

std::optional<BackendComparison> cmd_calibrate(const RunConfig& cfg, BackendChoice backend, const ArtifactOptions& opt,
                                               std::ostream& log) {
    const auto d = load_dataset(cfg, opt, log);
    check_split_overlap(d);
    const auto m = load_model(cfg, opt, log);
    if (d.calibration.empty()) throw ConfigError("dataset has no calibration split");

    auto build = [&](NeighborBackend b) {
        DknnOptions o = cfg.dknn;
        o.backend = b;
        auto idx = build_index(m, d.train, o);
        idx.config_hash = cfg.hash();
        return idx;
    };
    const auto index_path = cfg.resolve(cfg.paths.index);
    const auto cal_path = cfg.resolve(cfg.paths.calibration);
    ensure_parent(index_path);
    ensure_parent(cal_path);

    std::optional<BackendComparison> comparison;
    NeighborIndex primary;
    if (backend == BackendChoice::Both) {
        primary = build(NeighborBackend::Exact);
        const auto lsh = build(NeighborBackend::Lsh);
        write_index(lsh, fs::path(index_path.string() + ".lsh"));
        const auto cal = calibrate(primary, m, d.calibration);
        comparison = compare_backends(primary, lsh, cal, m, d.test.empty() ? d.calibration : d.test);
        log << "lsh recall " << comparison->recall << ", prediction agreement " << comparison->agreement << " over "
            << comparison->queries << " queries (" << comparison->fallbacks << " exact fallbacks)\n";
        if (comparison->recall < 0.9) log << "warning: lsh recall below 0.9\n";
    } else {
        NeighborBackend b = cfg.dknn.backend;
        if (backend == BackendChoice::Exact) b = NeighborBackend::Exact;
        if (backend == BackendChoice::Lsh) b = NeighborBackend::Lsh;
        primary = build(b);
    }
    const auto cal = calibrate(primary, m, d.calibration);
    write_index(primary, index_path);
    write_calibration(cal, cfg.hash(), cal_path);
    log << "calibrated " << cal.scores.size() << " samples over " << primary.n_layers() << " layers (k = " << primary.k
        << ", " << to_string(primary.backend) << ")\n";
    return comparison;
}

std::vector<fs::path> cmd_attack(const RunConfig& cfg, const AttackOptions& opt, const ArtifactOptions& artifacts,
                                 std::ostream& log) {
    const auto d = load_dataset(cfg, artifacts, log);
    const auto m = load_model(cfg, artifacts, log);
    if (d.test.empty()) throw ConfigError("dataset has no test split to attack");

    auto configured = [&](double value, bool relative) {
        AttackConfig a = cfg.attack;
        if (relative) {
            a.epsilon_relative = value;
            a.epsilon = epsilon_from_relative(value, d.test);
        } else {
            a.epsilon_relative.reset();
            a.epsilon = value;
        }
        return a;
    };
    auto write = [&](const AttackConfig& a, const fs::path& path) {
        auto adv = make_adversarial(d, m, a);
        adv.meta.config_hash = cfg.hash();
        ensure_parent(path);
        write_dataset(adv, path);
        log << "wrote " << path.string() << " (epsilon " << a.epsilon << ")\n";
        return path;
    };

    std::vector<fs::path> written;
    if (!opt.sweep.empty()) {
        const auto dir = cfg.resolve(cfg.paths.adversarial_dir);
        for (std::size_t i = 0; i < opt.sweep.size(); ++i) {
            std::ostringstream name;
            name << "eps_" << i << (opt.sweep_relative ? "_rel_" : "_abs_") << opt.sweep[i] << ".bae";
            written.push_back(write(configured(opt.sweep[i], opt.sweep_relative), dir / name.str()));
        }
        return written;
    }
    AttackConfig a = cfg.attack;
    if (opt.epsilon) {
        a = configured(*opt.epsilon, false);
    } else if (opt.epsilon_relative) {
        a = configured(*opt.epsilon_relative, true);
    } else if (cfg.attack.epsilon_relative) {
        a = configured(*cfg.attack.epsilon_relative, true);
    }
    written.push_back(write(a, cfg.resolve(cfg.paths.adversarial)));
    return written;
}

MetricsReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt, const ArtifactOptions& artifacts,
                       std::ostream& out, std::ostream& log) {
    const auto d = load_dataset(cfg, artifacts, log);
    const auto m = load_model(cfg, artifacts, log);
    const auto index_path = cfg.resolve(cfg.paths.index);
    const auto cal_path = cfg.resolve(cfg.paths.calibration);
    if (!fs::exists(cal_path)) throw ConfigError("no calibration at " + cal_path.string() + " (run calibrate first)");
    const auto idx = read_index(index_path);
    check_lineage("index", idx.config_hash, cfg.hash(), artifacts, log);
    std::string cal_hash;
    const auto cal = read_calibration(cal_path, &cal_hash);
    check_lineage("calibration", cal_hash, cfg.hash(), artifacts, log);

    std::optional<Dataset> adv;
    if (!opt.skip_adversarial) {
        const auto adv_path = opt.adversarial ? *opt.adversarial : cfg.resolve(cfg.paths.adversarial);
        if (fs::exists(adv_path)) {
            adv = read_dataset(adv_path);
            check_lineage("adversarial set", adv->meta.config_hash, cfg.hash(), artifacts, log);
            if (!adv->meta.adversarial)
                throw FormatError(FormatError::Kind::Schema, adv_path.string() + " is not an adversarial set");
        } else if (opt.adversarial) {
            throw FormatError(FormatError::Kind::Io, "adversarial set " + adv_path.string() + " not found");
        }
    }

    const auto channels = channels_for(d);
    auto report = evaluate_all(m, idx, cal, d, channels, cfg.eval, adv ? &*adv : nullptr);
    report.meta["run_config_hash"] = cfg.hash();

    const auto dir = cfg.resolve(cfg.paths.report_dir);
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "metrics.json");
        if (!f) throw FormatError(FormatError::Kind::Io, "cannot write " + (dir / "metrics.json").string());
        f << json(report).dump(2) << '\n';
    }
    write_figure_csvs(report, dir);
    log << "wrote " << (dir / "metrics.json").string() << " and figure CSVs\n";

    if (opt.explain) {
        out << cmd_explain(cfg, *opt.explain, artifacts).dump(2) << '\n';
    } else {
        for (const auto& method : report.methods) {
            out << method.name;
            for (const auto& [k, acc] : method.topk_accuracy) out << "  top" << k << '=' << acc;
            if (method.mean_spectral_efficiency) out << "  se=" << *method.mean_spectral_efficiency;
            out << '\n';
        }
    }
    return report;
}

json cmd_explain(const RunConfig& cfg, std::uint32_t ue_id, const ArtifactOptions& artifacts) {
    std::ostringstream sink;
    const auto d = load_dataset(cfg, artifacts, sink);
    const auto m = load_model(cfg, artifacts, sink);
    const auto idx = read_index(cfg.resolve(cfg.paths.index));
    const auto cal = read_calibration(cfg.resolve(cfg.paths.calibration));
    for (auto split : {Split::Test, Split::Calibration, Split::Validation, Split::Train})
        for (const auto& s : split_of(d, split)) {
            if (s.ue_id != ue_id) continue;
            const std::vector<double> x(s.rssi.begin(), s.rssi.end());
            json j = dknn_predict(x, idx, cal, m);
            j["ue_id"] = ue_id;
            j["split"] = to_string(split);
            j["label"] = s.label;
            return j;
        }
    throw ConfigError("no sample with UE id " + std::to_string(ue_id) + " in the dataset");
}

}  // namespace bae
