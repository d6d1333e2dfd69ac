// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: generate | train | calibrate | attack | eval | explain.
// Exit codes: 0 success, 2 configuration error, 3 data/format error, 4 numeric failure.
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bae/error.hpp"
#include "bae/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> workspace;
    bool allow_mismatch = false;

    bae::RunConfig load() const {
        bae::LoadOptions o;
        if (!config.empty()) o.config_file = config;
        o.overrides = overrides;
        o.seed = seed;
        o.workspace = workspace;
        return bae::load_run_config(o);
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Run configuration (JSON)");
    cmd->add_option("--set", c.overrides, "Override a config entry, e.g. --set training.epochs=20");
    cmd->add_option("--seed", c.seed, "Global seed");
    cmd->add_option("-w,--workspace", c.workspace, "Workspace root (default: $BAE_WORKSPACE or paths.workspace)");
    cmd->add_flag("--allow-mismatch", c.allow_mismatch, "Accept artifacts produced under a different config hash");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Beam alignment simulation, training and DkNN credibility toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* gen = app.add_subcommand("generate", "Synthesize channels and write the RSSI dataset");
    add_common(gen, common);
    bae::GenerateOptions gen_opt;
    gen->add_flag("--verify-labels", gen_opt.verify_labels, "Re-derive every label by exhaustive search");
    gen->add_flag("--create-dirs", gen_opt.create_dirs, "Create a missing output directory");

    auto* trn = app.add_subcommand("train", "Train the beam classifier");
    add_common(trn, common);
    bool force = false;
    trn->add_flag("--force", force, "Overwrite an existing checkpoint");

    auto* cal = app.add_subcommand("calibrate", "Build the neighbor index and calibration scores");
    add_common(cal, common);
    std::string backend = "config";
    cal->add_option("--backend", backend, "Neighbor backend")
        ->check(CLI::IsMember({"config", "exact", "lsh", "both"}));

    auto* atk = app.add_subcommand("attack", "Write FGSM adversarial test sets");
    add_common(atk, common);
    bae::AttackOptions atk_opt;
    auto* eps = atk->add_option("--epsilon", atk_opt.epsilon, "Absolute epsilon (feature units)");
    atk->add_option("--epsilon-rel", atk_opt.epsilon_relative, "Epsilon as a fraction of the mean per-sample RMS RSSI")
        ->excludes(eps);
    atk->add_option("--sweep", atk_opt.sweep, "Epsilon values; one output file per value")->delimiter(',');
    atk->add_flag("--relative", atk_opt.sweep_relative, "Interpret --sweep values as relative fractions");

    auto* ev = app.add_subcommand("eval", "Evaluate all methods and write the metrics report");
    add_common(ev, common);
    bae::EvalOptions ev_opt;
    std::string adv_path;
    ev->add_option("--adversarial", adv_path, "Adversarial set (default: paths.adversarial when present)");
    ev->add_flag("--no-adversarial", ev_opt.skip_adversarial, "Ignore adversarial sets");
    ev->add_option("--explain", ev_opt.explain, "Print the DkNN neighbor report for this UE id");

    auto* ex = app.add_subcommand("explain", "Print the DkNN verdict and neighbor report of one sample");
    add_common(ex, common);
    std::uint32_t ue_id = 0;
    ex->add_option("ue_id", ue_id, "UE id of the sample")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        const auto cfg = common.load();
        const bae::ArtifactOptions artifacts{force, common.allow_mismatch};
        if (gen->parsed()) {
            bae::cmd_generate(cfg, gen_opt, std::cerr);
        } else if (trn->parsed()) {
            bae::cmd_train(cfg, artifacts, std::cerr);
        } else if (cal->parsed()) {
            auto choice = bae::BackendChoice::Configured;
            if (backend == "exact") choice = bae::BackendChoice::Exact;
            if (backend == "lsh") choice = bae::BackendChoice::Lsh;
            if (backend == "both") choice = bae::BackendChoice::Both;
            if (const auto cmp = bae::cmd_calibrate(cfg, choice, artifacts, std::cerr))
                std::cout << nlohmann::json{{"recall", cmp->recall},
                                            {"agreement", cmp->agreement},
                                            {"queries", cmp->queries},
                                            {"fallbacks", cmp->fallbacks}}
                                 .dump()
                          << '\n';
        } else if (atk->parsed()) {
            for (const auto& p : bae::cmd_attack(cfg, atk_opt, artifacts, std::cerr)) std::cout << p.string() << '\n';
        } else if (ev->parsed()) {
            if (!adv_path.empty()) ev_opt.adversarial = adv_path;
            bae::cmd_eval(cfg, ev_opt, artifacts, std::cout, std::cerr);
        } else if (ex->parsed()) {
            std::cout << bae::cmd_explain(cfg, ue_id, artifacts).dump(2) << '\n';
        }
    } catch (const bae::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const bae::TrainingFailure& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const bae::FormatError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const bae::DegenerateInputError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
