#include "emtune/runner.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <ctime>
#include <ostream>

#include <fmt/core.h>

#include "emtune/error.hpp"

namespace emtune {

// ---------------------------------------------------------------------------
// Stages and plans

namespace {

struct StageInfo {
    Stage stage;
    std::string_view name;
    int rank;
};

constexpr StageInfo kStages[] = {
    {Stage::Ingest, "ingest", 0},       {Stage::Generate, "generate", 1},
    {Stage::Filter, "filter", 2},       {Stage::Explain, "explain", 2},
    {Stage::SelectErrors, "select-errors", 2}, {Stage::Build, "build", 3},
    {Stage::Finetune, "finetune", 4},   {Stage::Predict, "predict", 5},
    {Stage::Evaluate, "evaluate", 6},   {Stage::Transfer, "transfer", 7},
    {Stage::Cost, "cost", 8},
};

constexpr Stage kMandatory[] = {Stage::Build, Stage::Finetune, Stage::Predict, Stage::Evaluate};

const StageInfo& info(Stage s) {
    for (const auto& i : kStages)
        if (i.stage == s) return i;
    throw ArgumentError("unknown stage");
}

}  // namespace

std::string_view to_string(Stage s) { return info(s).name; }

Stage stage_from_string(std::string_view s) {
    for (const auto& i : kStages)
        if (i.name == s) return i.stage;
    throw ConfigError(fmt::format("unknown stage '{}'", s));
}

int stage_rank(Stage s) { return info(s).rank; }

std::vector<Stage> resolve_plan(const std::vector<std::string>& declared) {
    std::vector<Stage> plan;
    for (const auto& name : declared) {
        const Stage s = stage_from_string(name);
        if (std::find(plan.begin(), plan.end(), s) != plan.end())
            throw ConfigError(fmt::format("stage '{}' is declared twice", name));
        if (!plan.empty() && stage_rank(plan.back()) > stage_rank(s))
            throw ConfigError(fmt::format("stage '{}' cannot come after '{}'", name, to_string(plan.back())));
        plan.push_back(s);
    }
    for (Stage m : kMandatory) {
        if (std::find(plan.begin(), plan.end(), m) != plan.end()) continue;
        auto pos = std::find_if(plan.begin(), plan.end(), [&](Stage s) { return stage_rank(s) > stage_rank(m); });
        plan.insert(pos, m);
    }
    return plan;
}

std::string_view to_string(CheckpointPolicy p) { return p == CheckpointPolicy::Final ? "final" : "best-validation-f1"; }

// ---------------------------------------------------------------------------
// Configuration

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
    ExperimentConfig c;
    try {
        c.name = j.at("name").get<std::string>();
        c.seed = get_or<std::uint64_t>(j, "seed", 0);
        for (const auto& [name, path] : j.at("datasets").items()) c.datasets[name] = resolve(base, path.get<std::string>());
        c.train_dataset = j.at("train_dataset").get<std::string>();
        c.representation = variant_from_string(get_or<std::string>(j, "representation", "standard"));
        const json backends = j.value("backends", json::object());
        for (const auto& [name, b] : backends.items())
            c.backends[name] = BackendConfig::from_json(b, base);
        c.declared_plan = j.value("plan", std::vector<std::string>{});
        c.plan = resolve_plan(c.declared_plan);

        const json stages = j.value("stages", json::object());
        const json ex = stages.value("explain", json::object());
        c.explain_backend = get_or<std::string>(ex, "backend", c.explain_backend);
        c.explain_fallback = explanation_fallback_from_string(get_or<std::string>(ex, "fallback", "exclude"));
        if (ex.contains("demonstrations")) c.explain_demonstrations = resolve(base, ex["demonstrations"].get<std::string>());
        const json fi = stages.value("filter", json::object());
        c.filter_kind = get_or<std::string>(fi, "kind", c.filter_kind);
        c.filter_backend = get_or<std::string>(fi, "backend", c.filter_backend);
        const json ge = stages.value("generate", json::object());
        c.generate_strategy = generation_strategy_from_string(get_or<std::string>(ge, "strategy", "brief"));
        c.generate_backend = get_or<std::string>(ge, "backend", c.generate_backend);
        const json se = stages.value("select-errors", json::object());
        c.select_pool = get_or<std::string>(se, "pool", std::string());
        c.select_loop.iterations = get_or<int>(se, "iterations", c.select_loop.iterations);
        c.select_loop.batch = get_or<std::size_t>(se, "batch", c.select_loop.batch);
        c.select_loop.epochs = get_or<int>(se, "epochs", c.select_loop.epochs);
        c.embed_backend = get_or<std::string>(se, "embedder", c.embed_backend);
        c.target_backend = get_or<std::string>(j, "target_backend", c.target_backend);

        const json ft = j.value("finetune", json::object());
        c.finetune = FineTuneConfig::from_json(ft);
        const std::string policy = get_or<std::string>(ft, "checkpoint_policy", "final");
        if (policy == "final")
            c.checkpoint_policy = CheckpointPolicy::Final;
        else if (policy == "best-validation-f1")
            c.checkpoint_policy = CheckpointPolicy::BestValidationF1;
        else
            throw ConfigError(fmt::format("unknown checkpoint policy '{}'", policy));

        const json ev = j.value("evaluation", json::object());
        c.eval_targets = ev.value("targets", std::vector<std::string>{c.train_dataset});
        c.eval_split = get_or<std::string>(ev, "split", c.eval_split);
        const json tr = j.value("transfer", json::object());
        c.transfer_reference = tr.value("dedicated", std::map<std::string, double>{});

        const json co = j.value("cost", json::object());
        if (co.contains("pricing") && !co["pricing"].is_null()) c.pricing = resolve(base, co["pricing"].get<std::string>());
        c.pricing_model = get_or<std::string>(co, "model", std::string());

        if (j.contains("templates") && !j["templates"].is_null())
            c.templates = resolve(base, j["templates"].get<std::string>());
        c.max_in_flight = get_or<std::size_t>(j.value("batch", json::object()), "max_in_flight", c.max_in_flight);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("experiment config: {}", e.what()));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(fmt::format("experiment config: {}", e.what()));
    }
    c.snapshot = j;
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError(fmt::format("config file {} does not exist", path.string()));
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(j, path.parent_path());
}

bool ExperimentConfig::has_stage(Stage s) const { return std::find(plan.begin(), plan.end(), s) != plan.end(); }

void ExperimentConfig::validate() const {
    auto need_dataset = [&](const std::string& name, std::string_view role) {
        auto it = datasets.find(name);
        if (it == datasets.end()) throw ConfigError(fmt::format("{} '{}' is not a declared dataset", role, name));
    };
    auto need_backend = [&](const std::string& name, std::string_view role) {
        auto it = backends.find(name);
        if (it == backends.end()) throw ConfigError(fmt::format("{} backend '{}' is not declared", role, name));
        it->second.validate();
        if (const auto* r = std::get_if<ReplayMock>(&it->second.kind); r && !fs::exists(r->fixture))
            throw ConfigError(fmt::format("replay fixture {} does not exist", r->fixture.string()));
    };

    if (name.empty()) throw ConfigError("experiment needs a name");
    for (const auto& [n, path] : datasets) {
        if (!fs::exists(path)) throw ConfigError(fmt::format("dataset '{}': manifest {} does not exist", n, path.string()));
        const DatasetConfig dc = load_manifest(path);
        for (const auto& [split, file] : dc.split_files)
            if (!fs::exists(file))
                throw ConfigError(fmt::format("dataset '{}': {} file {} does not exist", n, split, file.string()));
    }
    need_dataset(train_dataset, "train dataset");
    need_backend(target_backend, "target");
    for (const auto& t : eval_targets) need_dataset(t, "evaluation target");

    if (has_stage(Stage::Explain)) {
        if (representation == RepresentationVariant::Standard)
            throw ConfigError("the explain stage needs an explanation representation, not 'standard'");
        need_backend(explain_backend, "explain");
        if (representation == RepresentationVariant::TextualConcise &&
            (explain_demonstrations.empty() || !fs::exists(explain_demonstrations)))
            throw ConfigError("concise explanations need an existing demonstrations file");
    } else if (representation != RepresentationVariant::Standard) {
        throw ConfigError(fmt::format("representation '{}' needs an explain stage", to_string(representation)));
    }
    if (has_stage(Stage::Filter)) {
        if (filter_kind != "error" && filter_kind != "relevancy")
            throw ConfigError(fmt::format("unknown filter kind '{}'", filter_kind));
        need_backend(filter_backend, "filter");
    }
    if (has_stage(Stage::Generate)) need_backend(generate_backend, "generate");
    if (has_stage(Stage::SelectErrors)) {
        need_dataset(select_pool, "selection pool");
        need_backend(embed_backend, "embedding");
        if (select_loop.iterations < 1) throw ConfigError("select-errors needs at least one iteration");
    }
    if (has_stage(Stage::Transfer)) {
        for (const auto& t : eval_targets)
            if (t != train_dataset && !transfer_reference.count(t))
                throw ConfigError(fmt::format("transfer needs a dedicated F1 reference for '{}'", t));
    }
    if (has_stage(Stage::Cost)) {
        if (pricing) {
            const PricingSheet sheet = PricingSheet::load(*pricing);
            if (pricing_model.empty()) throw ConfigError("cost stage needs a pricing model id");
            sheet.rates(pricing_model);
        }
    }
    if (templates) TemplateSet::from_manifest(*templates);
}

void apply_backend_override(ExperimentConfig& config, const std::string& spec) {
    const auto eq = spec.find('=');
    const std::string role = eq == std::string::npos ? config.target_backend : spec.substr(0, eq);
    const std::string name = eq == std::string::npos ? spec : spec.substr(eq + 1);
    auto it = config.backends.find(name);
    if (it == config.backends.end()) throw ConfigError(fmt::format("--backend names unknown backend '{}'", name));
    config.backends[role] = it->second;
    config.snapshot["backends"][role] = it->second.to_json();
}

// ---------------------------------------------------------------------------
// Manifest

json StageRecord::to_json() const {
    json j = {{"stage", stage},        {"status", status},         {"inputs_hash", inputs_hash},
              {"outputs_hash", outputs_hash}, {"started", started}, {"finished", finished},
              {"artifacts", artifacts}};
    if (!error.empty()) j["error"] = error;
    return j;
}

StageRecord StageRecord::from_json(const json& j) {
    StageRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.status = j.at("status").get<std::string>();
    if (r.status != "pending" && r.status != "done" && r.status != "failed")
        throw ParseError(fmt::format("stage '{}' has unknown status '{}'", r.stage, r.status));
    r.inputs_hash = j.value("inputs_hash", "");
    r.outputs_hash = j.value("outputs_hash", "");
    r.started = j.value("started", "");
    r.finished = j.value("finished", "");
    r.artifacts = j.value("artifacts", std::vector<std::string>{});
    r.error = j.value("error", "");
    return r;
}

StageRecord* RunManifest::find(std::string_view stage) {
    for (auto& s : stages)
        if (s.stage == stage) return &s;
    return nullptr;
}

const StageRecord* RunManifest::find(std::string_view stage) const {
    return const_cast<RunManifest*>(this)->find(stage);
}

RunManifest RunManifest::load(const fs::path& path) {
    RunManifest m;
    const auto rows = read_jsonl(path);
    if (rows.empty()) throw ParseError(fmt::format("{}: empty run manifest", path.string()));
    m.run_id = rows.front().at("run_id").get<std::string>();
    m.config_hash = rows.front().at("config_hash").get<std::string>();
    for (std::size_t i = 1; i < rows.size(); ++i) m.stages.push_back(StageRecord::from_json(rows[i]));
    return m;
}

void RunManifest::save(const fs::path& path) const {
    std::vector<json> rows = {json{{"run_id", run_id}, {"config_hash", config_hash}}};
    for (const auto& s : stages) rows.push_back(s.to_json());
    write_jsonl(path, rows);
}

bool RunResult::complete() const {
    return !manifest.stages.empty() && std::all_of(manifest.stages.begin(), manifest.stages.end(),
                                                   [](const StageRecord& s) { return s.status == "done"; });
}

std::string hash_tree(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> files;
    if (fs::exists(dir)) {
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file())
                files.emplace_back(fs::relative(e.path(), dir).generic_string(), sha256_file(e.path()));
    }
    std::sort(files.begin(), files.end());
    std::string buf;
    for (const auto& [p, h] : files) buf += p + '\0' + h + '\n';
    return sha256_hex(buf);
}

std::string default_run_id(const ExperimentConfig& config) {
    return fmt::format("{}-{}", config.name, sha256_hex(config.snapshot.dump()).substr(0, 12));
}

// ---------------------------------------------------------------------------
// Dry-run description

namespace {

std::vector<std::string> stage_inputs(const ExperimentConfig& c, Stage s) {
    switch (s) {
    case Stage::Ingest: return {"dataset manifests and split files"};
    case Stage::Generate: return {"trainset", "backend:" + c.generate_backend};
    case Stage::Filter: return {"trainset", "backend:" + c.filter_backend};
    case Stage::Explain: return {"trainset", "backend:" + c.explain_backend};
    case Stage::SelectErrors: return {"trainset", "pool:" + c.select_pool, "backend:" + c.target_backend,
                                      "backend:" + c.embed_backend};
    case Stage::Build: return {"trainset", c.has_stage(Stage::Explain) ? "explain/records.jsonl" : "-"};
    case Stage::Finetune: return {"build/train.jsonl", "build/validation.jsonl", "backend:" + c.target_backend};
    case Stage::Predict: return {"finetune/model.json", "backend:" + c.target_backend};
    case Stage::Evaluate: return {"predict/*.jsonl"};
    case Stage::Transfer: return {"evaluate/metrics.json", "transfer reference"};
    case Stage::Cost: return {"predict/usage.json", "finetune/job.json", "build/build_report.json", "pricing sheet"};
    }
    return {};
}

std::vector<std::string> stage_outputs(const ExperimentConfig& c, Stage s) {
    switch (s) {
    case Stage::Ingest: return {"ingest/<dataset>/", "ingest/stats.json", "ingest/stats.txt"};
    case Stage::Generate: return {"generate/batches.jsonl", "generate/trainset/", "generate/report.json"};
    case Stage::Filter:
        return {c.filter_kind == "error" ? "filter/predictions.jsonl" : "filter/judgments.jsonl", "filter/trainset/",
                "filter/report.json"};
    case Stage::Explain: return {"explain/records.jsonl", "explain/exclusions.jsonl", "explain/summary.txt"};
    case Stage::SelectErrors: return {"select-errors/loop/iter-<i>/", "select-errors/trainset/", "select-errors/result.json"};
    case Stage::Build:
        return {"build/train.jsonl", "build/train.meta.jsonl", "build/validation.jsonl", "build/hyperparameters.json",
                "build/build_report.json"};
    case Stage::Finetune: return {"finetune/job.json", "finetune/model.json"};
    case Stage::Predict: return {"predict/<target>.zero-shot.jsonl", "predict/<target>.fine-tuned.jsonl", "predict/usage.json"};
    case Stage::Evaluate: return {"evaluate/metrics.json", "evaluate/report.txt", "evaluate/report.json"};
    case Stage::Transfer: return {"transfer/matrix.json", "transfer/report.json", "transfer/report.txt"};
    case Stage::Cost: return {"cost/ledgers.json", "cost/report.json", "cost/report.txt"};
    }
    return {};
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
    return out;
}

}  // namespace

std::string describe_plan(const ExperimentConfig& config) {
    std::string out = fmt::format("plan for '{}' ({} stages)\n", config.name, config.plan.size());
    int n = 0;
    for (Stage s : config.plan) {
        out += fmt::format("{:>2}. {}\n      in:  {}\n      out: {}\n", ++n, to_string(s), join(stage_inputs(config, s)),
                           join(stage_outputs(config, s)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class RunLock {
public:
    explicit RunLock(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError(fmt::format("cannot open lock file {}", path.string()));
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw ConfigError(fmt::format("run directory {} is in use by another process", path.parent_path().string()));
        }
    }
    ~RunLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

json backend_fingerprint(const BackendConfig& b) {
    json j = b.to_json();
    if (const auto* r = std::get_if<ReplayMock>(&b.kind)) {
        j.erase("fixture");
        j["fixture_sha256"] = sha256_file(r->fixture);
    }
    return j;
}

std::string source_hash(const fs::path& manifest) {
    std::string buf = sha256_file(manifest);
    for (const auto& [split, file] : load_manifest(manifest).split_files) buf += split + sha256_file(file);
    return sha256_hex(buf);
}

std::vector<ExplanationDemo> load_demonstrations(const fs::path& path) {
    std::vector<ExplanationDemo> out;
    for (const auto& row : read_jsonl(path)) {
        ExplanationDemo d;
        auto entity = [](const json& j, std::string id) {
            EntityRecord r;
            r.id = std::move(id);
            for (const auto& [k, v] : j.items()) r.set(k, v.get<std::string>());
            return r;
        };
        d.pair.left = entity(row.at("left"), "demo-l");
        d.pair.right = entity(row.at("right"), "demo-r");
        d.pair.label = row.at("label").get<std::string>() == "match" ? Label::Match : Label::NonMatch;
        d.explanation = row.at("explanation").get<std::string>();
        out.push_back(std::move(d));
    }
    return out;
}

class Run {
public:
    Run(const ExperimentConfig& config, fs::path dir)
        : cfg_(config), dir_(std::move(dir)),
          templates_(config.templates ? TemplateSet::from_manifest(*config.templates) : TemplateSet::defaults()) {
        // Constructing every backend up front surfaces credential problems before any request.
        for (Stage s : cfg_.plan)
            for (const auto& role : roles(s)) backend(role);
        for (const auto& [name, path] : cfg_.datasets) sources_[name] = source_hash(path);
        batch_.max_in_flight = cfg_.max_in_flight;
    }

    std::string inputs_hash(Stage s, const RunManifest& m) const {
        json j = {{"stage", to_string(s)}, {"config", stage_config(s)}};
        json upstream = json::object();
        for (Stage p : cfg_.plan) {
            if (p == s) break;
            const auto* rec = m.find(to_string(p));
            upstream[std::string(to_string(p))] = rec ? rec->outputs_hash : "";
        }
        j["upstream"] = upstream;
        j["sources"] = sources_;
        return sha256_hex(j.dump());
    }

    void execute(Stage s) {
        const fs::path out = stage_dir(s);
        fs::remove_all(out);
        fs::create_directories(out);
        switch (s) {
        case Stage::Ingest: ingest(out); break;
        case Stage::Generate: generate(out); break;
        case Stage::Filter: filter(out); break;
        case Stage::Explain: explain(out); break;
        case Stage::SelectErrors: select_errors(out); break;
        case Stage::Build: build(out); break;
        case Stage::Finetune: finetune(out); break;
        case Stage::Predict: predict(out); break;
        case Stage::Evaluate: evaluate(out); break;
        case Stage::Transfer: transfer(out); break;
        case Stage::Cost: cost(out); break;
        }
    }

    fs::path stage_dir(Stage s) const { return dir_ / "artifacts" / std::string(to_string(s)); }

private:
    std::vector<std::string> roles(Stage s) const {
        switch (s) {
        case Stage::Generate: return {cfg_.generate_backend};
        case Stage::Filter: return {cfg_.filter_backend};
        case Stage::Explain: return {cfg_.explain_backend};
        case Stage::SelectErrors: return {cfg_.target_backend, cfg_.embed_backend};
        case Stage::Finetune:
        case Stage::Predict: return {cfg_.target_backend};
        default: return {};
        }
    }

    Backend& backend(const std::string& role) {
        auto it = live_.find(role);
        if (it != live_.end()) return *it->second;
        auto b = make_backend(cfg_.backends.at(role));
        Backend& ref = *b;
        live_[role] = std::move(b);
        return ref;
    }

    json stage_config(Stage s) const {
        auto be = [&](const std::string& role) { return backend_fingerprint(cfg_.backends.at(role)); };
        json templates = cfg_.templates ? json(sha256_file(*cfg_.templates)) : json(nullptr);
        switch (s) {
        case Stage::Ingest: return json::object();
        case Stage::Generate:
            return {{"strategy", to_string(cfg_.generate_strategy)}, {"backend", be(cfg_.generate_backend)},
                    {"seed", cfg_.seed}, {"templates", templates}};
        case Stage::Filter:
            return {{"kind", cfg_.filter_kind}, {"backend", be(cfg_.filter_backend)}, {"templates", templates}};
        case Stage::Explain:
            return {{"representation", to_string(cfg_.representation)},
                    {"backend", be(cfg_.explain_backend)},
                    {"fallback", cfg_.explain_fallback == ExplanationFallback::Exclude ? "exclude" : "downgrade"},
                    {"demonstrations",
                     cfg_.explain_demonstrations.empty() ? json(nullptr) : json(sha256_file(cfg_.explain_demonstrations))},
                    {"templates", templates}};
        case Stage::SelectErrors:
            return {{"pool", cfg_.select_pool},
                    {"iterations", cfg_.select_loop.iterations},
                    {"batch", cfg_.select_loop.batch},
                    {"epochs", cfg_.select_loop.epochs},
                    {"target", be(cfg_.target_backend)},
                    {"embedder", be(cfg_.embed_backend)},
                    {"finetune", cfg_.finetune.to_json()}};
        case Stage::Build:
            return {{"representation", to_string(cfg_.representation)},
                    {"finetune", cfg_.finetune.to_json()},
                    {"fallback", cfg_.explain_fallback == ExplanationFallback::Exclude ? "exclude" : "downgrade"},
                    {"templates", templates}};
        case Stage::Finetune:
            return {{"finetune", cfg_.finetune.to_json()},
                    {"policy", to_string(cfg_.checkpoint_policy)},
                    {"target", be(cfg_.target_backend)}};
        case Stage::Predict:
            return {{"targets", cfg_.eval_targets}, {"split", cfg_.eval_split}, {"target", be(cfg_.target_backend)},
                    {"templates", templates}};
        case Stage::Evaluate: return {{"targets", cfg_.eval_targets}, {"split", cfg_.eval_split}};
        case Stage::Transfer: return {{"targets", cfg_.eval_targets}, {"reference", cfg_.transfer_reference}};
        case Stage::Cost:
            return {{"pricing", cfg_.pricing ? json(sha256_file(*cfg_.pricing)) : json(nullptr)},
                    {"model", cfg_.pricing_model}};
        }
        return json::object();
    }

    Dataset input_dataset(const std::string& name) const {
        if (cfg_.has_stage(Stage::Ingest)) return load_dataset(stage_dir(Stage::Ingest) / name / "manifest.json");
        return load_dataset(cfg_.datasets.at(name));
    }

    /// Training set as left by the last curation stage before `s`.
    Dataset trainset_before(Stage s) const {
        std::optional<Stage> last;
        for (Stage p : cfg_.plan) {
            if (p == s) break;
            if (p == Stage::Generate || p == Stage::Filter || p == Stage::SelectErrors) last = p;
        }
        if (last) return load_dataset(stage_dir(*last) / "trainset" / "manifest.json");
        return input_dataset(cfg_.train_dataset);
    }

    BatchOptions batch_for(const fs::path& log) const {
        BatchOptions b = batch_;
        b.log_path = log;
        return b;
    }

    static void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

    void ingest(const fs::path& out) {
        json stats = json::object();
        std::vector<std::pair<std::string, SplitStats>> rows;
        for (const auto& [name, path] : cfg_.datasets) {
            const Dataset d = load_dataset(path);
            write_dataset(d, out / name);
            const SplitStats st = dataset_stats(d);
            stats[name] = stats_to_json(st);
            rows.emplace_back(name, st);
        }
        write_json(out / "stats.json", stats);
        write_file(out / "stats.txt", format_stats_table(rows));
    }

    void generate(const fs::path& out) {
        const Dataset seed = trainset_before(Stage::Generate);
        GenerationOptions go;
        go.strategy = cfg_.generate_strategy;
        go.seed = cfg_.seed;
        go.batch = batch_for(out / "requests.jsonl");
        go.templates = templates_;
        const auto batches = generate_examples(backend(cfg_.generate_backend), seed, go);
        std::vector<json> rows;
        std::vector<CandidatePair> generated;
        std::size_t diagnostics = 0, deviations = 0, failed = 0;
        for (const auto& b : batches) {
            rows.push_back(b.to_json());
            generated.insert(generated.end(), b.pairs.begin(), b.pairs.end());
            diagnostics += b.diagnostics.size();
            deviations += !b.composition_ok;
            failed += !b.error.empty();
        }
        write_jsonl(out / "batches.jsonl", rows);
        const Dataset combined = combine_datasets(seed, generated, true);
        write_dataset(combined, out / "trainset");
        write_json(out / "report.json", {{"seeds", batches.size()},
                                         {"generated", generated.size()},
                                         {"train_size", combined.split("train").size()},
                                         {"malformed_segments", diagnostics},
                                         {"composition_deviations", deviations},
                                         {"failed_seeds", failed}});
    }

    void filter(const fs::path& out) {
        const Dataset in = trainset_before(Stage::Filter);
        Dataset kept;
        if (cfg_.filter_kind == "error") {
            const auto preds = predict_pairs(backend(cfg_.filter_backend), in, "train", batch_for(out / "requests.jsonl"),
                                             templates_.match);
            std::vector<json> rows;
            for (const auto& p : preds) rows.push_back(p.to_json());
            write_jsonl(out / "predictions.jsonl", rows);
            kept = error_filter(in, preds);
        } else {
            const auto judgments =
                judge_relevancy(backend(cfg_.filter_backend), in, batch_for(out / "requests.jsonl"), templates_);
            std::vector<json> rows;
            std::size_t defaulted = 0;
            for (const auto& r : judgments) {
                rows.push_back(r.to_json());
                defaulted += r.defaulted;
            }
            write_jsonl(out / "judgments.jsonl", rows);
            kept = relevancy_filter(in, judgments);
        }
        write_dataset(kept, out / "trainset");
        write_json(out / "report.json", {{"kind", cfg_.filter_kind},
                                         {"before", stats_to_json(dataset_stats(in))["train"]},
                                         {"after", stats_to_json(dataset_stats(kept))["train"]}});
    }

    void explain(const fs::path& out) {
        const Dataset in = trainset_before(Stage::Explain);
        ExplanationOptions eo;
        eo.style = is_structured(cfg_.representation)          ? ExplanationStyle::Structured
                   : cfg_.representation == RepresentationVariant::TextualLong ? ExplanationStyle::Long
                                                                            : ExplanationStyle::ConciseWithDemos;
        if (is_structured(cfg_.representation)) eo.structured_variant = cfg_.representation;
        if (!cfg_.explain_demonstrations.empty()) eo.demonstrations = load_demonstrations(cfg_.explain_demonstrations);
        eo.fallback = cfg_.explain_fallback;
        eo.dataset_name = in.name;
        eo.batch = batch_for(out / "requests.jsonl");
        eo.templates = templates_;
        const AttachResult res = attach_explanations(in, backend(cfg_.explain_backend), eo);
        std::vector<json> rows, excl;
        for (const auto& r : res.records) rows.push_back(to_json(r));
        for (const auto& e : res.exclusions) excl.push_back(e.to_json());
        write_jsonl(out / "records.jsonl", rows);
        write_jsonl(out / "exclusions.jsonl", excl);
        write_file(out / "summary.txt", res.summary());
    }

    void select_errors(const fs::path& out) {
        const Dataset seed = trainset_before(Stage::SelectErrors);
        const Dataset pool = input_dataset(cfg_.select_pool);
        GatewayLoopModel model(cfg_.backends.at(cfg_.target_backend), cfg_.finetune, batch_);
        LoopOptions lo = cfg_.select_loop;
        lo.checkpoint_dir = out / "loop";
        const LoopResult res = run_error_selection_loop(seed, pool.split("train"), backend(cfg_.embed_backend), model, lo);
        Dataset best = seed;
        best.split("train") = load_dataset(lo.checkpoint_dir / fmt::format("iter-{}", res.best_iteration) / "train" /
                                           "manifest.json")
                                  .split("train");
        write_dataset(best, out / "trainset");
        json its = json::array();
        for (const auto& it : res.iterations) its.push_back(it.to_json());
        write_json(out / "result.json",
                   {{"best_iteration", res.best_iteration}, {"best_model", res.best_model}, {"iterations", its}});
    }

    void build(const fs::path& out) {
        const Dataset in = trainset_before(Stage::Build);
        const auto& train = in.split("train");
        std::vector<FineTuneRecord> records;
        json dropped = json::array();
        if (cfg_.representation == RepresentationVariant::Standard) {
            for (const auto& p : train)
                records.push_back(render_finetune_record(p, in.serialization, RepresentationVariant::Standard,
                                                         std::nullopt, in.name, templates_.match));
        } else {
            std::map<std::pair<std::string, std::string>, FineTuneRecord> explained;
            for (const auto& row : read_jsonl(stage_dir(Stage::Explain) / "records.jsonl")) {
                FineTuneRecord r = finetune_record_from_json(row);
                explained.emplace(std::make_pair(r.meta.left_id, r.meta.right_id), std::move(r));
            }
            for (const auto& p : train) {
                auto it = explained.find({p.left.id, p.right.id});
                if (it != explained.end()) {
                    records.push_back(it->second);
                } else if (cfg_.explain_fallback == ExplanationFallback::Downgrade) {
                    records.push_back(render_finetune_record(p, in.serialization, RepresentationVariant::Standard,
                                                             std::nullopt, in.name, templates_.match));
                } else {
                    dropped.push_back({{"left_id", p.left.id}, {"right_id", p.right.id}});
                }
            }
        }
        if (records.empty()) throw ValidationError("the build stage produced no training records");
        std::vector<json> upload, meta, validation;
        for (const auto& r : records) {
            upload.push_back(to_upload_json(r));
            meta.push_back(to_json(r));
        }
        for (const auto& p : in.split("validation"))
            validation.push_back(to_upload_json(render_finetune_record(p, in.serialization, RepresentationVariant::Standard,
                                                                       std::nullopt, in.name, templates_.match)));
        write_jsonl(out / "train.jsonl", upload);
        write_jsonl(out / "train.meta.jsonl", meta);
        validate_training_file(out / "train.jsonl");
        if (!validation.empty()) {
            write_jsonl(out / "validation.jsonl", validation);
            validate_training_file(out / "validation.jsonl");
        }
        write_json(out / "hyperparameters.json", cfg_.finetune.to_json());
        write_json(out / "build_report.json", {{"dataset", in.name},
                                               {"representation", to_string(cfg_.representation)},
                                               {"train_records", records.size()},
                                               {"validation_records", validation.size()},
                                               {"dropped", dropped}});
    }

    void finetune(const fs::path& out) {
        const fs::path build_dir = stage_dir(Stage::Build);
        const fs::path val = build_dir / "validation.jsonl";
        Backend& b = backend(cfg_.target_backend);
        const bool mock = cfg_.backends.at(cfg_.target_backend).is_mock();
        const FineTuneJob created = create_finetune_job(b, build_dir / "train.jsonl",
                                                        fs::exists(val) ? std::optional(val) : std::nullopt, cfg_.finetune);
        const FineTuneJob job = wait_for_job(b, created.id, std::chrono::milliseconds(mock ? 0 : 30000));
        write_json(out / "job.json", job.to_json());
        if (job.status != JobStatus::Succeeded)
            throw GatewayError(fmt::format("fine-tune job {} ended as {}: {}", job.id, to_string(job.status), job.error), 1);

        json model = {{"policy", to_string(cfg_.checkpoint_policy)}};
        if (cfg_.checkpoint_policy == CheckpointPolicy::Final || job.checkpoints.empty()) {
            model["model_ref"] = job.fine_tuned_model;
        } else {
            const Dataset in = trainset_before(Stage::Build);
            std::vector<Label> gold;
            for (const auto& p : in.split("validation")) gold.push_back(p.label);
            std::vector<CheckpointEval> evals;
            json evaluated = json::array();
            for (const auto& c : job.checkpoints) {
                auto cb = make_backend(with_model(cfg_.backends.at(cfg_.target_backend), c.model_id));
                const auto preds = predict_pairs(*cb, in, "validation", batch_, templates_.match);
                evals.push_back({c.model_id, c.epoch, compute_metrics(decisions_of(preds), gold)});
                evaluated.push_back({{"model_ref", c.model_id}, {"epoch", c.epoch}, {"validation", evals.back().validation.to_json()}});
            }
            model["model_ref"] = select_best_checkpoint(evals);
            model["checkpoints"] = evaluated;
        }
        write_json(out / "model.json", model);
    }

    void predict(const fs::path& out) {
        const std::string model_ref =
            json::parse(read_file(stage_dir(Stage::Finetune) / "model.json")).at("model_ref").get<std::string>();
        const BackendConfig& base = cfg_.backends.at(cfg_.target_backend);
        auto tuned = make_backend(with_model(base, model_ref));
        Usage zs_usage, ft_usage;
        std::size_t zs_n = 0, ft_n = 0;
        for (const auto& target : cfg_.eval_targets) {
            const Dataset d = input_dataset(target);
            for (const bool zero_shot : {true, false}) {
                const std::string tag = zero_shot ? "zero-shot" : "fine-tuned";
                Usage& u = zero_shot ? zs_usage : ft_usage;
                const auto preds = predict_pairs(zero_shot ? backend(cfg_.target_backend) : *tuned, d, cfg_.eval_split,
                                                 batch_for(out / "requests.jsonl"), templates_.match, &u);
                (zero_shot ? zs_n : ft_n) += preds.size();
                std::vector<json> rows;
                for (const auto& p : preds) rows.push_back(p.to_json());
                write_jsonl(out / fmt::format("{}.{}.jsonl", target, tag), rows);
            }
        }
        auto usage_json = [](const Usage& u, std::size_t n) {
            return json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}, {"examples", n},
                        {"estimated", u.estimated}};
        };
        write_json(out / "usage.json", {{"model_ref", model_ref},
                                        {"zero-shot", usage_json(zs_usage, zs_n)},
                                        {"fine-tuned", usage_json(ft_usage, ft_n)}});
    }

    void evaluate(const fs::path& out) {
        std::map<std::string, MetricsReport> zs, ft;
        json metrics = json::object();
        for (const auto& target : cfg_.eval_targets) {
            const Dataset d = input_dataset(target);
            std::vector<Label> gold;
            for (const auto& p : d.split(cfg_.eval_split)) gold.push_back(p.label);
            for (const bool zero_shot : {true, false}) {
                const std::string tag = zero_shot ? "zero-shot" : "fine-tuned";
                std::vector<PredictionRecord> preds;
                for (const auto& row : read_jsonl(stage_dir(Stage::Predict) / fmt::format("{}.{}.jsonl", target, tag)))
                    preds.push_back(PredictionRecord::from_json(row));
                const MetricsReport m = compute_metrics(decisions_of(preds), gold);
                (zero_shot ? zs : ft)[target] = m;
                metrics[target][tag] = m.to_json();
            }
        }
        write_json(out / "metrics.json", metrics);
        const DeltaReport report = build_delta_report("zero-shot", zs, {{"fine-tuned:" + cfg_.train_dataset, ft}});
        write_json(out / "report.json", report.to_json());
        write_file(out / "report.txt", report.to_text());
    }

    void transfer(const fs::path& out) {
        const json metrics = json::parse(read_file(stage_dir(Stage::Evaluate) / "metrics.json"));
        TransferMatrix m;
        m.model = cfg_.target_backend;
        TransferMatrix::Row row{cfg_.train_dataset, cfg_.train_dataset, {}};
        for (const auto& target : cfg_.eval_targets) {
            m.datasets.push_back({target, input_dataset(target).domain});
            m.zero_shot[target] = metrics.at(target).at("zero-shot").at("f1_display").get<double>();
            row.f1[target] = metrics.at(target).at("fine-tuned").at("f1_display").get<double>();
            if (target != cfg_.train_dataset) m.dedicated[target] = cfg_.transfer_reference.at(target);
        }
        m.rows.push_back(std::move(row));
        write_json(out / "matrix.json", m.to_json());
        const TransferReport report = build_transfer_report(m);
        write_json(out / "report.json", report.to_json());
        write_file(out / "report.txt", report.to_text());
    }

    void cost(const fs::path& out) {
        const json usage = json::parse(read_file(stage_dir(Stage::Predict) / "usage.json"));
        const FineTuneJob job = FineTuneJob::from_json(json::parse(read_file(stage_dir(Stage::Finetune) / "job.json")));
        const json build = json::parse(read_file(stage_dir(Stage::Build) / "build_report.json"));

        std::string model = cfg_.pricing_model;
        PricingSheet sheet;
        if (cfg_.pricing) {
            sheet = PricingSheet::load(*cfg_.pricing);
        } else {
            if (model.empty()) model = cfg_.target_backend;
            sheet = PricingSheet::zero_rate({model});
        }
        auto ledger = [&](const std::string& tag, Scenario sc) {
            UsageLedger l;
            l.label = tag;
            l.model = model;
            l.scenario = sc;
            const json& u = usage.at(tag);
            l.input_tokens = u.at("input_tokens").get<std::int64_t>();
            l.output_tokens = u.at("output_tokens").get<std::int64_t>();
            l.inference_examples = u.at("examples").get<std::size_t>();
            l.estimated = u.at("estimated").get<bool>();
            if (sc == Scenario::FineTuned) {
                l.training_tokens = job.trained_tokens;
                l.training_examples = build.at("train_records").get<std::size_t>();
            }
            return l;
        };
        const std::vector<UsageLedger> ledgers = {ledger("zero-shot", Scenario::ZeroShot),
                                                  ledger("fine-tuned", Scenario::FineTuned)};
        json lj = json::array();
        for (const auto& l : ledgers) lj.push_back(l.to_json());
        write_json(out / "ledgers.json", lj);
        const CostReport report = build_cost_report(ledgers, sheet);
        write_json(out / "report.json", report.to_json());
        write_file(out / "report.txt", report.to_text());
    }

    const ExperimentConfig& cfg_;
    fs::path dir_;
    TemplateSet templates_;
    BatchOptions batch_;
    std::map<std::string, std::shared_ptr<Backend>> live_;
    std::map<std::string, std::string> sources_;
};

std::vector<std::string> list_artifacts(const fs::path& run_dir, const fs::path& stage_dir) {
    std::vector<std::string> out;
    if (!fs::exists(stage_dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(stage_dir))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), run_dir).generic_string());
    std::sort(out.begin(), out.end());
    return out;
}

StageRecord pending_record(std::string stage) {
    StageRecord r;
    r.stage = std::move(stage);
    return r;
}

bool artifacts_intact(const fs::path& run_dir, const StageRecord& rec, const fs::path& stage_dir) {
    for (const auto& a : rec.artifacts)
        if (!fs::exists(run_dir / a)) return false;
    return hash_tree(stage_dir) == rec.outputs_hash;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    RunResult result;
    if (options.dry_run) {
        result.plan_text = describe_plan(config);
        if (options.log) *options.log << result.plan_text;
        return result;
    }

    const std::string run_id = options.run_id.empty() ? default_run_id(config) : options.run_id;
    const fs::path dir = options.runs_dir / run_id;
    result.run_dir = dir;
    fs::create_directories(dir);
    RunLock lock(dir / ".lock");

    const fs::path manifest_path = dir / "manifest.jsonl";
    RunManifest manifest;
    if (fs::exists(manifest_path)) {
        if (!options.resume)
            throw ConfigError(fmt::format("run '{}' already exists; pass --resume to continue it", run_id));
        manifest = RunManifest::load(manifest_path);
    }
    const std::string snapshot = config.snapshot.dump(2) + "\n";
    manifest.run_id = run_id;
    manifest.config_hash = sha256_hex(snapshot);
    write_file(dir / "config.snapshot", snapshot);

    Run run(config, dir);

    // Keep records of stages still in the plan, in plan order.
    std::vector<StageRecord> records;
    for (Stage s : config.plan) {
        if (const auto* r = manifest.find(to_string(s)))
            records.push_back(*r);
        else
            records.push_back(pending_record(std::string(to_string(s))));
    }
    manifest.stages = std::move(records);
    manifest.save(manifest_path);

    for (Stage s : config.plan) {
        StageRecord& rec = *manifest.find(to_string(s));
        const std::string inputs = run.inputs_hash(s, manifest);
        if (rec.status == "done" && rec.inputs_hash == inputs && artifacts_intact(dir, rec, run.stage_dir(s))) {
            result.skipped.push_back(rec.stage);
            if (options.log) *options.log << fmt::format("[skip] {} (inputs unchanged)\n", rec.stage);
        } else {
            if (options.log) *options.log << fmt::format("[run ] {}\n", rec.stage);
            rec = pending_record(rec.stage);
            rec.inputs_hash = inputs;
            rec.started = iso_now();
            try {
                run.execute(s);
            } catch (const std::exception& e) {
                rec.status = "failed";
                rec.error = e.what();
                rec.finished = iso_now();
                manifest.save(manifest_path);
                throw;
            }
            rec.artifacts = list_artifacts(dir, run.stage_dir(s));
            rec.outputs_hash = hash_tree(run.stage_dir(s));
            rec.finished = iso_now();
            rec.status = "done";
            manifest.save(manifest_path);
            result.executed.push_back(rec.stage);
        }
        if (options.stop_after && *options.stop_after == s) break;
    }
    result.manifest = manifest;
    return result;
}

}  // namespace emtune
