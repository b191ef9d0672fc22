#include <doctest.h>

#include <cstdio>
#include <set>
#include <sstream>

#include "emtune/error.hpp"
#include "emtune/runner.hpp"
#include "support.hpp"

using namespace emtune;
using namespace emtune::testing;

namespace {

std::vector<std::string> names(const std::vector<Stage>& plan) {
    std::vector<std::string> out;
    for (Stage s : plan) out.emplace_back(to_string(s));
    return out;
}

ExperimentConfig toy_config() { return ExperimentConfig::load(source_path("data/toy/experiment.json")); }

RunOptions options_in(const fs::path& runs, bool resume = false) {
    RunOptions o;
    o.runs_dir = runs;
    o.run_id = "toy";
    o.resume = resume;
    return o;
}

std::string shell(const std::string& cmd, int* status) {
    std::string out;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int rc = ::pclose(pipe);
    *status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return out;
}

}  // namespace

TEST_CASE("resolve_plan") {
    CHECK(names(resolve_plan({"filter"})) == std::vector<std::string>{"filter", "build", "finetune", "predict", "evaluate"});
    CHECK(names(resolve_plan({"filter", "build"})) ==
          std::vector<std::string>{"filter", "build", "finetune", "predict", "evaluate"});
    CHECK_THROWS_AS(resolve_plan({"evaluate", "finetune"}), ConfigError);
    const auto gf = names(resolve_plan({"generate", "filter"}));
    const auto pos = [&](const std::string& s) { return std::find(gf.begin(), gf.end(), s) - gf.begin(); };
    CHECK(pos("generate") < pos("filter"));
    CHECK(pos("filter") < pos("build"));
    CHECK_THROWS_AS(resolve_plan({"filter", "generate"}), ConfigError);
    CHECK_THROWS_AS(resolve_plan({"filter", "filter"}), ConfigError);
    CHECK_THROWS_AS(resolve_plan({"distill"}), ConfigError);
    CHECK(names(resolve_plan({"ingest", "explain", "filter", "transfer", "cost"})) ==
          std::vector<std::string>{"ingest", "explain", "filter", "build", "finetune", "predict", "evaluate", "transfer",
                                   "cost"});
}

TEST_CASE("config validation happens before any stage runs") {
    const fs::path base = source_path("data/toy");
    json j = json::parse(read_file(base / "experiment.json"));
    SUBCASE("unknown dataset manifest") {
        j["datasets"]["toy-products"] = "missing/manifest.json";
        CHECK_THROWS_AS(ExperimentConfig::from_json(j, base).validate(), ConfigError);
    }
    SUBCASE("stage backend not declared") {
        j["backends"].erase("judge");
        CHECK_THROWS_AS(ExperimentConfig::from_json(j, base).validate(), ConfigError);
    }
    SUBCASE("literal credentials are refused") {
        j["backends"]["target"] = {{"kind", "http"}, {"base_url", "https://api.example.com/v1"}, {"model", "m"},
                                   {"api_key", "sk-123"}};
        CHECK_THROWS_AS(ExperimentConfig::from_json(j, base), ConfigError);
    }
    SUBCASE("missing credential variable") {
        j["backends"]["target"] = {{"kind", "http"}, {"base_url", "https://api.example.com/v1"}, {"model", "m"},
                                   {"api_key_env", "EMTUNE_TEST_UNSET_VARIABLE"}};
        ::unsetenv("EMTUNE_TEST_UNSET_VARIABLE");
        TempDir tmp;
        const auto cfg = ExperimentConfig::from_json(j, base);
        CHECK_THROWS_AS(run_experiment(cfg, options_in(tmp / "runs")), ConfigError);
        CHECK_FALSE(fs::exists(tmp / "runs" / "toy" / "manifest.jsonl"));
    }
    SUBCASE("backend override") {
        auto cfg = ExperimentConfig::from_json(j, base);
        apply_backend_override(cfg, "judge");
        CHECK(std::get<HeuristicMock>(cfg.backends.at("target").kind).threshold == 0.4);
        CHECK_THROWS_AS(apply_backend_override(cfg, "nobody"), ConfigError);
    }
}

TEST_CASE("dry run prints the plan without touching disk") {
    TempDir tmp;
    auto o = options_in(tmp / "runs");
    o.dry_run = true;
    const auto r = run_experiment(toy_config(), o);
    CHECK_FALSE(fs::exists(tmp / "runs"));
    CHECK(r.plan_text.find("9 stages") != std::string::npos);
    CHECK(r.plan_text.find("finetune") != std::string::npos);
    CHECK(r.plan_text.find("out:") != std::string::npos);
}

TEST_CASE("toy pipeline: determinism, artifacts, and resume") {
    TempDir tmp;
    const auto cfg = toy_config();
    const auto first = run_experiment(cfg, options_in(tmp / "a"));
    REQUIRE(first.complete());
    CHECK(first.executed.size() == 9);
    const auto second = run_experiment(cfg, options_in(tmp / "b"));
    REQUIRE(second.complete());
    CHECK(hash_tree(first.run_dir / "artifacts") == hash_tree(second.run_dir / "artifacts"));
    for (std::size_t i = 0; i < first.manifest.stages.size(); ++i)
        CHECK(first.manifest.stages[i].outputs_hash == second.manifest.stages[i].outputs_hash);

    // Every artifact a done stage lists exists.
    for (const auto& s : first.manifest.stages) {
        CHECK(s.status == "done");
        CHECK_FALSE(s.artifacts.empty());
        for (const auto& a : s.artifacts) CHECK_MESSAGE(fs::exists(first.run_dir / a), a);
    }
    const json hp = json::parse(read_file(first.run_dir / "artifacts/build/hyperparameters.json"));
    CHECK(hp["epochs"] == 10);
    CHECK(hp["learning_rate_multiplier"] == 1.8);
    CHECK(hp["batch_size"] == 16);
    const json metrics = json::parse(read_file(first.run_dir / "artifacts/evaluate/metrics.json"));
    CHECK(metrics.dump().find("toy-products") != std::string::npos);

    SUBCASE("an existing run is not overwritten without resume") {
        CHECK_THROWS_AS(run_experiment(cfg, options_in(tmp / "a")), ConfigError);
    }
    SUBCASE("resume skips every unchanged stage") {
        const auto again = run_experiment(cfg, options_in(tmp / "a", true));
        CHECK(again.executed.empty());
        CHECK(again.skipped.size() == 9);
    }
    SUBCASE("a killed finetune re-executes with the stages after it") {
        auto m = RunManifest::load(first.run_dir / "manifest.jsonl");
        bool after = false;
        for (auto& s : m.stages) {
            if (s.stage == "finetune") {
                s.status = "failed";
                s.error = "killed";
                after = true;
            } else if (after) {
                StageRecord pending;
                pending.stage = s.stage;
                s = pending;
            }
        }
        m.save(first.run_dir / "manifest.jsonl");
        fs::remove_all(first.run_dir / "artifacts/finetune");

        const auto resumed = run_experiment(cfg, options_in(tmp / "a", true));
        CHECK(resumed.skipped == std::vector<std::string>{"ingest", "explain", "filter", "build"});
        CHECK(resumed.executed ==
              std::vector<std::string>{"finetune", "predict", "evaluate", "transfer", "cost"});
        CHECK(resumed.complete());
        CHECK(hash_tree(first.run_dir / "artifacts") == hash_tree(second.run_dir / "artifacts"));
    }
    SUBCASE("a deleted artifact forces its stage to run again") {
        fs::remove(first.run_dir / "artifacts/cost/report.txt");
        const auto resumed = run_experiment(cfg, options_in(tmp / "a", true));
        CHECK(resumed.executed == std::vector<std::string>{"cost"});
    }
    SUBCASE("changing the checkpoint policy re-runs finetune and nothing before it") {
        json j = json::parse(read_file(source_path("data/toy/experiment.json")));
        j["finetune"]["checkpoint_policy"] = "final";
        const auto changed = ExperimentConfig::from_json(j, source_path("data/toy"));
        const auto resumed = run_experiment(changed, options_in(tmp / "a", true));
        CHECK(resumed.skipped == std::vector<std::string>{"ingest", "explain", "filter", "build"});
        CHECK(resumed.executed.front() == "finetune");
    }
    SUBCASE("stop_after leaves later stages pending") {
        auto o = options_in(tmp / "c");
        o.stop_after = Stage::Build;
        const auto partial = run_experiment(cfg, o);
        CHECK(partial.executed.size() == 4);
        CHECK_FALSE(partial.complete());
        CHECK(partial.manifest.find("finetune")->status == "pending");
        const auto rest = run_experiment(cfg, options_in(tmp / "c", true));
        CHECK(rest.executed.size() == 5);
        CHECK(hash_tree(rest.run_dir / "artifacts") == hash_tree(second.run_dir / "artifacts"));
    }
}

TEST_CASE("bundled explanation fixture covers every toy request") {
    const auto cfg = toy_config();
    const Dataset d = load_dataset(cfg.datasets.at("toy-products"));
    std::set<std::string> hashes;
    for (const auto& row : read_jsonl(source_path("data/toy/explanations.replay.jsonl")))
        hashes.insert(row.at("hash").get<std::string>());
    for (const auto& p : d.split("train"))
        CHECK(hashes.count(request_hash(render_explanation_request(p, d.serialization, ExplanationStyle::Structured))));
}

TEST_CASE("manifest round trip") {
    TempDir tmp;
    RunManifest m;
    m.run_id = "r";
    m.config_hash = "abc";
    StageRecord s;
    s.stage = "ingest";
    s.status = "done";
    s.artifacts = {"artifacts/ingest/stats.json"};
    m.stages = {s, StageRecord{}};
    m.stages[1].stage = "build";
    m.save(tmp / "manifest.jsonl");
    const auto back = RunManifest::load(tmp / "manifest.jsonl");
    CHECK(back.run_id == "r");
    REQUIRE(back.stages.size() == 2);
    CHECK(back.find("ingest")->to_json() == s.to_json());
    CHECK(back.find("build")->status == "pending");
    CHECK(back.find("cost") == nullptr);

    json bad = s.to_json();
    bad["status"] = "running";
    CHECK_THROWS(StageRecord::from_json(bad));
}

TEST_CASE("CLI") {
    int status = 0;
    const std::string cli = EMTUNE_CLI;
    SUBCASE("stats on WDC-small") {
        const std::string out = shell(cli + " stats --manifest " + source_path("tests/data/wdc-small/manifest.json").string(), &status);
        CHECK(status == 0);
        CHECK(out.find("500") != std::string::npos);
        CHECK(out.find("2,000") != std::string::npos);
        const json j = json::parse(
            shell(cli + " stats --json --manifest " + source_path("tests/data/wdc-small/manifest.json").string(), &status));
        CHECK(j.begin().value()["train"]["positive"] == 500);
        CHECK(j.begin().value()["train"]["negative"] == 2000);
    }
    SUBCASE("transfer from a matrix file") {
        const json j = json::parse(
            shell(cli + " transfer --json --matrix " + source_path("tests/data/transfer_llama8b.json").string(), &status));
        CHECK(status == 0);
        CHECK(j.dump().find("102") != std::string::npos);
    }
    SUBCASE("run, then a rerun without resume fails with a diagnostic") {
        TempDir tmp;
        const std::string base = cli + " run --config " + source_path("data/toy/experiment.json").string() +
                                 " --runs-dir " + (tmp / "runs").string() + " --run-id t";
        shell(base + " 2>&1", &status);
        CHECK(status == 0);
        CHECK(fs::exists(tmp / "runs/t/artifacts/cost/report.txt"));
        const std::string out = shell(base + " 2>&1", &status);
        CHECK(status == 2);
        CHECK(out.find("--resume") != std::string::npos);
        shell(base + " --resume 2>&1", &status);
        CHECK(status == 0);
    }
    SUBCASE("bad config exits nonzero") {
        shell(cli + " run --config /nonexistent.json 2>&1", &status);
        CHECK(status != 0);
    }
}
