#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emtune/costing.hpp"
#include "emtune/curation.hpp"
#include "emtune/gateway.hpp"

namespace emtune {

enum class Stage { Ingest, Generate, Filter, Explain, SelectErrors, Build, Finetune, Predict, Evaluate, Transfer, Cost };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);
/// Position in the pipeline order. Filter, explain and select-errors share a rank.
int stage_rank(Stage s);

/// Declared stages in order, with build/finetune/predict/evaluate added where missing.
/// Throws ConfigError on unknown or repeated stages and on declarations that go backwards.
std::vector<Stage> resolve_plan(const std::vector<std::string>& declared);

enum class CheckpointPolicy { Final, BestValidationF1 };
std::string_view to_string(CheckpointPolicy p);

struct ExperimentConfig {
    std::string name;
    std::uint64_t seed = 0;
    /// Dataset name -> manifest path.
    std::map<std::string, fs::path> datasets;
    std::string train_dataset;
    RepresentationVariant representation = RepresentationVariant::Standard;
    std::map<std::string, BackendConfig> backends;
    std::vector<std::string> declared_plan;
    std::vector<Stage> plan;

    // Stage options.
    std::string explain_backend = "explainer";
    ExplanationFallback explain_fallback = ExplanationFallback::Exclude;
    fs::path explain_demonstrations;  // JSON-lines; needed for concise explanations
    std::string filter_kind = "error";
    std::string filter_backend = "judge";
    GenerationStrategy generate_strategy = GenerationStrategy::Brief;
    std::string generate_backend = "generator";
    std::string select_pool;
    LoopOptions select_loop;
    std::string embed_backend = "embedder";
    std::string target_backend = "target";

    FineTuneConfig finetune;
    CheckpointPolicy checkpoint_policy = CheckpointPolicy::Final;

    std::vector<std::string> eval_targets;
    std::string eval_split = "test";
    /// Dedicated (tuned-on-target) F1 on the 0-100 scale for every evaluation target other than
    /// the training dataset.
    std::map<std::string, double> transfer_reference;

    std::optional<fs::path> pricing;  // unset: self-hosted zero-rate sheet
    std::string pricing_model;

    std::optional<fs::path> templates;
    std::size_t max_in_flight = 8;

    json snapshot;  // normalized input, written as config.snapshot

    static ExperimentConfig from_json(const json& j, const fs::path& base);
    static ExperimentConfig load(const fs::path& path);

    /// Checks that every reference resolves: dataset files, backends, templates, pricing.
    void validate() const;
    bool has_stage(Stage s) const;
};

/// Applies `--backend` overrides: "name" replaces the target backend, "role=name" any role.
void apply_backend_override(ExperimentConfig& config, const std::string& override_spec);

struct StageRecord {
    std::string stage;
    std::string status = "pending";  // pending | done | failed
    std::string inputs_hash;
    std::string outputs_hash;
    std::string started;
    std::string finished;
    std::vector<std::string> artifacts;  // relative to the run directory
    std::string error;

    json to_json() const;
    static StageRecord from_json(const json& j);
};

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::vector<StageRecord> stages;

    StageRecord* find(std::string_view stage);
    const StageRecord* find(std::string_view stage) const;

    static RunManifest load(const fs::path& path);
    void save(const fs::path& path) const;
};

struct RunOptions {
    fs::path runs_dir = "runs";
    std::string run_id;  // default: <name>-<config hash prefix>
    bool dry_run = false;
    bool resume = false;
    /// Execute stages up to and including this one, leaving later stages pending.
    std::optional<Stage> stop_after;
    std::ostream* log = nullptr;
};

struct RunResult {
    fs::path run_dir;
    RunManifest manifest;
    std::vector<std::string> executed;
    std::vector<std::string> skipped;
    std::string plan_text;  // filled for dry runs

    bool complete() const;
};

/// Artifact names each stage reads and writes, for dry runs.
std::string describe_plan(const ExperimentConfig& config);

std::string default_run_id(const ExperimentConfig& config);

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// SHA-256 over the sorted (relative path, file hash) list of every file below `dir`.
std::string hash_tree(const fs::path& dir);

}  // namespace emtune
