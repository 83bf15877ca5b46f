#pragma once

// Config-driven experiment steps behind the command-line tool.
//
// Seed derivation: every step draws its seed from the global seed as
// derive_seed(global, "<step>") with steps "gen", "train", "sweep" and "eval".
// Seeds written inside nested config sections are overwritten.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mos/file_access.hpp"
#include "mos/posthoc.hpp"
#include "mos/serialization.hpp"
#include "mos/synth.hpp"
#include "mos/trainer.hpp"

namespace mos {

inline constexpr int kExperimentSchemaVersion = 1;
inline constexpr const char *kToolVersion = "0.1.0";

struct ExperimentConfig {
    int schema_version = kExperimentSchemaVersion;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    GeneratorConfig generator;
    std::vector<SplitSpec> splits = {{"train", 8000, {}, {}}, {"id_dev", 2000, {}, {}}, {"ood_test", 2000, {}, {}}};
    std::string train_split = "train";
    std::string dev_split = "id_dev";
    /// Splits that `train` and `sweep` must never open.
    std::vector<std::string> ood_splits = {"ood_test"};
    std::vector<std::string> eval_splits = {"id_dev", "ood_test"};
    std::vector<DecisionRule> rules = {DecisionRule::Estimated, DecisionRule::Uniform, DecisionRule::Argmin};
    TrainConfig train;
    /// Train with K*, lambda* from sweep.json instead of train.model.experts / train.lambda.
    bool train_from_sweep = false;
    SweepGrid sweep;
    double shift_multiplier = kDefaultShiftMultiplier;
    DecisionRule control_rule = DecisionRule::Argmin;
    std::string checkpoint_format = "json"; // json | binary

    /// Throws ConfigError.
    void validate() const;
};

ExperimentConfig default_experiment();

Json experiment_to_json(const ExperimentConfig &config);
ExperimentConfig experiment_from_json(const Json &j);

/// Applies `path.to.field=value` to a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise. Array elements are
/// addressed by index (`splits.0.size=10`).
void apply_override(Json &doc, const std::string &assignment);

/// FNV-1a over the canonical JSON dump of the config.
std::uint64_t config_hash(const ExperimentConfig &config);
std::string hex64(std::uint64_t value);

/// Resolves derived fields: per-step seeds, model input/label sizes, and l
/// from the smallest swept K unless the config sets it.
ExperimentConfig resolve(const ExperimentConfig &config);

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<std::string> files;
    std::map<std::string, double> timings_ms;
};

Json manifest_to_json(const RunManifest &m);

struct CommandContext {
    ExperimentConfig config;
    std::filesystem::path output_dir;
    FileLayer *files = nullptr;
    std::size_t workers = 1;
    std::ostream *log = nullptr;
};

/// Paths inside the output directory.
std::filesystem::path split_path(const std::filesystem::path &out, const std::string &split);
std::filesystem::path checkpoint_path(const std::filesystem::path &out, const std::string &format);

RunManifest run_gen(const CommandContext &ctx);
RunManifest run_train(const CommandContext &ctx);
RunManifest run_sweep(const CommandContext &ctx);
RunManifest run_eval(const CommandContext &ctx);
RunManifest run_detect(const CommandContext &ctx);
RunManifest run_report(const CommandContext &ctx);

/// Runs a step by name and writes manifest_<command>.json.
RunManifest run_command(const std::string &command, const CommandContext &ctx);

/// CSV rendering of report tables.
std::string reports_to_csv(const std::vector<SplitReport> &reports);
std::string matrix_to_csv(const Tensor2 &m, const std::string &row_label, const std::vector<std::string> &cols);

} // namespace mos
