// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and the pipeline stages behind the command-line tool.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bae/attack.hpp"
#include "bae/dknn.hpp"
#include "bae/eval.hpp"
#include "bae/model.hpp"
#include "bae/sweep.hpp"

namespace bae {

/// Artifact locations; relative entries resolve against the workspace root.
struct PathsConfig {
    std::string workspace = ".";
    std::string dataset = "dataset.bae";
    std::string checkpoint = "model.baem";
    std::string loss_csv = "loss.csv";
    std::string index = "index.baei";
    std::string calibration = "calibration.json";
    std::string adversarial = "adversarial.bae";
    std::string adversarial_dir = "adversarial";
    std::string report_dir = "report";
};

void to_json(nlohmann::json& j, const PathsConfig& p);
void from_json(const nlohmann::json& j, PathsConfig& p);

struct RunConfig {
    std::uint64_t seed = 1;
    DatasetConfig dataset;  ///< includes the scenario and noise sections
    nlohmann::json model = {{"preset", "standard"}};
    TrainingConfig training;
    DknnOptions dknn;
    AttackConfig attack;
    EvalConfig eval;
    PathsConfig paths;

    /// Canonical JSON of every section.
    nlohmann::json to_json() const;
    /// CRC32 (hex) of the sections that determine artifacts: everything except
    /// paths, attack and eval.
    std::string hash() const;
    std::filesystem::path resolve(const std::string& path) const;
    /// Network for a dataset with the given shape.
    ModelConfig model_config(int m_w, int q, FeatureScale scale) const;
    void validate() const;
};

RunConfig default_run_config();

/// Parses a run config. The global seed is copied into every seeded section.
/// Throws ConfigError on malformed or invalid content.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible and
/// kept as a string otherwise. Throws ConfigError for a malformed assignment.
void apply_override(nlohmann::json& j, const std::string& assignment);

struct LoadOptions {
    std::optional<std::filesystem::path> config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> workspace;  ///< takes precedence over the environment
};

/// Default config, then the file, the --set overrides, the seed, and finally the
/// workspace (explicit option, else BAE_WORKSPACE, else the config value).
RunConfig load_run_config(const LoadOptions& options);

inline constexpr const char* kWorkspaceEnv = "BAE_WORKSPACE";

// ---------------------------------------------------------------------------
// Stages. Each throws ConfigError, FormatError or TrainingFailure and logs to `log`.

struct GenerateOptions {
    bool verify_labels = false;
    bool create_dirs = false;
};
void cmd_generate(const RunConfig& cfg, const GenerateOptions& opt, std::ostream& log);

struct ArtifactOptions {
    bool force = false;           ///< overwrite an existing checkpoint
    bool allow_mismatch = false;  ///< accept artifacts from another config hash
};
void cmd_train(const RunConfig& cfg, const ArtifactOptions& opt, std::ostream& log);

enum class BackendChoice { Configured, Exact, Lsh, Both };
/// Builds and persists the neighbor index and calibration scores. With
/// BackendChoice::Both the exact index goes to paths.index and the LSH index
/// next to it with a ".lsh" suffix; the recall report is returned.
std::optional<BackendComparison> cmd_calibrate(const RunConfig& cfg, BackendChoice backend, const ArtifactOptions& opt,
                                               std::ostream& log);

struct AttackOptions {
    std::optional<double> epsilon;
    std::optional<double> epsilon_relative;
    std::vector<double> sweep;  ///< one file per value
    bool sweep_relative = false;
};
/// Returns the written files.
std::vector<std::filesystem::path> cmd_attack(const RunConfig& cfg, const AttackOptions& opt,
                                              const ArtifactOptions& artifacts, std::ostream& log);

struct EvalOptions {
    std::optional<std::filesystem::path> adversarial;  ///< defaults to paths.adversarial when present
    bool skip_adversarial = false;
    std::optional<std::uint32_t> explain;
};
MetricsReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt, const ArtifactOptions& artifacts,
                       std::ostream& out, std::ostream& log);

/// DkNN verdict with neighbor report for the sample with UE id `ue_id`.
nlohmann::json cmd_explain(const RunConfig& cfg, std::uint32_t ue_id, const ArtifactOptions& artifacts);

/// Throws FormatError when a UE appears in more than one split.
void check_split_overlap(const Dataset& d);

}  // namespace bae
