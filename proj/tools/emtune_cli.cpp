#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "emtune/costing.hpp"
#include "emtune/error.hpp"
#include "emtune/evaluation.hpp"
#include "emtune/runner.hpp"

using namespace emtune;

namespace {

struct PipelineArgs {
    std::string config;
    std::string run_id;
    std::string runs_dir = "runs";
    bool dry_run = false;
    bool resume = false;
    std::vector<std::string> backend_overrides;
};

void add_pipeline_flags(CLI::App* cmd, PipelineArgs& a, bool config_required) {
    auto* opt = cmd->add_option("--config", a.config, "experiment config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--run-id", a.run_id, "run directory name under --runs-dir");
    cmd->add_option("--runs-dir", a.runs_dir, "root of run directories")->capture_default_str();
    cmd->add_flag("--dry-run", a.dry_run, "print the resolved plan and exit");
    cmd->add_flag("--resume", a.resume, "continue an existing run, skipping stages whose inputs are unchanged");
    cmd->add_option("--backend", a.backend_overrides, "replace the target backend by name, or role=name");
}

int run_pipeline(const PipelineArgs& a, std::optional<Stage> through, bool resume) {
    ExperimentConfig cfg = ExperimentConfig::load(a.config);
    for (const auto& o : a.backend_overrides) apply_backend_override(cfg, o);
    if (through && !cfg.has_stage(*through))
        throw ConfigError(fmt::format("stage '{}' is not part of the plan of '{}'", to_string(*through), cfg.name));
    RunOptions opt;
    opt.runs_dir = a.runs_dir;
    opt.run_id = a.run_id;
    opt.dry_run = a.dry_run;
    opt.resume = resume;
    opt.stop_after = through;
    opt.log = &std::cerr;
    const RunResult res = run_experiment(cfg, opt);
    if (a.dry_run) {
        std::cout << res.plan_text;
        return 0;
    }
    std::cout << fmt::format("run {}: {} executed, {} skipped\n", res.run_dir.string(), res.executed.size(),
                             res.skipped.size());
    for (const auto& s : res.manifest.stages) std::cout << fmt::format("  {:<14} {}\n", s.stage, s.status);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity-matching fine-tuning toolkit"};
    app.require_subcommand(1);

    PipelineArgs run_args;
    auto* run = app.add_subcommand("run", "execute the full experiment plan");
    add_pipeline_flags(run, run_args, true);

    // Stage commands run the plan through that stage inside the run directory.
    std::map<std::string, PipelineArgs> stage_args;
    std::map<std::string, CLI::App*> stage_cmds;
    for (const char* name : {"ingest", "build", "explain", "filter", "generate", "select-errors", "finetune", "predict"}) {
        auto* cmd = app.add_subcommand(name, fmt::format("run the plan through the {} stage", name));
        add_pipeline_flags(cmd, stage_args[name], true);
        stage_cmds[name] = cmd;
    }

    PipelineArgs eval_args;
    std::string eval_predictions, eval_manifest, eval_split = "test";
    auto* evaluate = app.add_subcommand("evaluate", "score predictions (pipeline, or --predictions with --manifest)");
    add_pipeline_flags(evaluate, eval_args, false);
    evaluate->add_option("--predictions", eval_predictions, "prediction records (JSON-lines)");
    evaluate->add_option("--manifest", eval_manifest, "dataset manifest holding the gold labels");
    evaluate->add_option("--split", eval_split, "split the predictions refer to")->capture_default_str();

    PipelineArgs transfer_args;
    std::string matrix_path;
    bool transfer_json = false;
    auto* transfer = app.add_subcommand("transfer", "transfer-gain report (pipeline, or --matrix)");
    add_pipeline_flags(transfer, transfer_args, false);
    transfer->add_option("--matrix", matrix_path, "F1 matrix (JSON)");
    transfer->add_flag("--json", transfer_json, "emit JSON instead of a table");

    PipelineArgs cost_args;
    std::string ledgers_path, pricing_path;
    bool cost_json = false;
    auto* cost = app.add_subcommand("cost", "cost report (pipeline, or --ledgers with --pricing)");
    add_pipeline_flags(cost, cost_args, false);
    cost->add_option("--ledgers", ledgers_path, "usage ledgers (JSON array)");
    cost->add_option("--pricing", pricing_path, "pricing sheet (JSON)");
    cost->add_flag("--json", cost_json, "emit JSON instead of a table");

    std::vector<std::string> stats_manifests;
    std::string stats_config;
    bool stats_json = false;
    auto* stats = app.add_subcommand("stats", "split statistics per dataset");
    stats->add_option("--manifest", stats_manifests, "dataset manifest(s)");
    stats->add_option("--config", stats_config, "experiment config; reports every declared dataset");
    stats->add_flag("--json", stats_json, "emit JSON instead of a table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return run_pipeline(run_args, std::nullopt, run_args.resume);
        for (const auto& [name, cmd] : stage_cmds)
            if (*cmd) return run_pipeline(stage_args[name], stage_from_string(name), true);

        if (*stats) {
            std::vector<std::pair<std::string, fs::path>> sources;
            for (const auto& m : stats_manifests) sources.emplace_back("", m);
            if (!stats_config.empty())
                for (const auto& [name, path] : ExperimentConfig::load(stats_config).datasets) sources.emplace_back(name, path);
            if (sources.empty()) throw ArgumentError("stats needs --manifest or --config");
            std::vector<std::pair<std::string, SplitStats>> rows;
            json out = json::object();
            for (const auto& [name, path] : sources) {
                const Dataset d = load_dataset(path);
                const std::string label = name.empty() ? d.name : name;
                rows.emplace_back(label, dataset_stats(d));
                out[label] = stats_to_json(rows.back().second);
            }
            std::cout << (stats_json ? out.dump(2) + "\n" : format_stats_table(rows));
            return 0;
        }

        if (*evaluate) {
            if (eval_predictions.empty()) {
                if (eval_args.config.empty()) throw ArgumentError("evaluate needs --config or --predictions");
                run_pipeline(eval_args, Stage::Evaluate, true);
                return 0;
            }
            if (eval_manifest.empty()) throw ArgumentError("--predictions needs --manifest for the gold labels");
            const Dataset d = load_dataset(fs::path(eval_manifest));
            std::vector<Decision> decisions;
            for (const auto& row : read_jsonl(eval_predictions)) decisions.push_back(parse_decision(row.at("raw").get<std::string>()));
            std::vector<Label> gold;
            for (const auto& p : d.split(eval_split)) gold.push_back(p.label);
            std::cout << compute_metrics(decisions, gold).to_json().dump(2) << "\n";
            return 0;
        }

        if (*transfer) {
            if (matrix_path.empty()) {
                if (transfer_args.config.empty()) throw ArgumentError("transfer needs --config or --matrix");
                run_pipeline(transfer_args, Stage::Transfer, true);
                return 0;
            }
            const TransferReport report = build_transfer_report(TransferMatrix::from_json(json::parse(read_file(matrix_path))));
            std::cout << (transfer_json ? report.to_json().dump(2) + "\n" : report.to_text());
            return 0;
        }

        if (*cost) {
            if (ledgers_path.empty()) {
                if (cost_args.config.empty()) throw ArgumentError("cost needs --config or --ledgers");
                run_pipeline(cost_args, Stage::Cost, true);
                return 0;
            }
            if (pricing_path.empty()) throw ArgumentError("--ledgers needs --pricing");
            std::vector<UsageLedger> ledgers;
            for (const auto& l : json::parse(read_file(ledgers_path))) ledgers.push_back(UsageLedger::from_json(l));
            const CostReport report = build_cost_report(ledgers, PricingSheet::load(pricing_path));
            std::cout << (cost_json ? report.to_json().dump(2) + "\n" : report.to_text());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
