#include "emtune/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <fstream>
#include <mutex>
#include <random>
#include <regex>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

#include "emtune/error.hpp"
#include "gateway_internal.hpp"

namespace emtune {

// ---------------------------------------------------------------------------
// Config

std::string_view BackendConfig::kind_name() const {
    if (std::holds_alternative<HttpEndpoint>(kind)) return "http";
    if (std::holds_alternative<HeuristicMock>(kind)) return "mock-heuristic";
    return "mock-replay";
}

void BackendConfig::validate() const {
    if (!std::isfinite(params.temperature) || params.temperature < 0.0)
        throw ConfigError("temperature must be a non-negative number");
    if (params.max_tokens < 1) throw ConfigError("max_tokens must be positive");
    if (const auto* h = std::get_if<HttpEndpoint>(&kind)) {
        static const std::regex url(R"(^https?://[A-Za-z0-9.\-]+(:[0-9]+)?(/[^\s]*)?$)");
        if (!std::regex_match(h->base_url, url))
            throw ConfigError(fmt::format("base_url '{}' is not a well-formed http(s) URL", h->base_url));
        if (h->model.empty()) throw ConfigError("http backend needs a model id");
    } else if (const auto* m = std::get_if<HeuristicMock>(&kind)) {
        if (!(m->threshold >= 0.0 && m->threshold <= 1.0)) throw ConfigError("threshold must be in [0,1]");
    } else if (const auto* r = std::get_if<ReplayMock>(&kind)) {
        if (r->fixture.empty()) throw ConfigError("mock-replay backend needs a fixture path");
    }
}

BackendConfig BackendConfig::from_json(const json& j, const fs::path& base) {
    BackendConfig c;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "http") {
            HttpEndpoint h;
            h.base_url = j.at("base_url").get<std::string>();
            h.api_key_env = j.value("api_key_env", std::string());
            h.model = j.at("model").get<std::string>();
            h.embedding_model = j.value("embedding_model", std::string());
            h.timeout_seconds = j.value("timeout_seconds", h.timeout_seconds);
            h.finetune_base_model = j.value("finetune_base_model", std::string());
            if (j.contains("api_key")) throw ConfigError("credentials may only be referenced via api_key_env");
            c.kind = h;
        } else if (kind == "mock-heuristic") {
            HeuristicMock m;
            m.threshold = j.value("threshold", m.threshold);
            m.provider_limited = j.value("provider_limited", false);
            m.latency_jitter_ms = j.value("latency_jitter_ms", 0);
            m.seed = j.value("seed", std::uint64_t{0});
            c.kind = m;
        } else if (kind == "mock-replay") {
            ReplayMock r;
            fs::path p = j.at("fixture").get<std::string>();
            r.fixture = p.is_absolute() || base.empty() ? p : base / p;
            r.provider_limited = j.value("provider_limited", false);
            r.latency_jitter_ms = j.value("latency_jitter_ms", 0);
            r.seed = j.value("seed", std::uint64_t{0});
            c.kind = r;
        } else {
            throw ConfigError(fmt::format("unknown backend kind '{}'", kind));
        }
        c.params.temperature = j.value("temperature", 0.0);
        c.params.max_tokens = j.value("max_tokens", c.params.max_tokens);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("backend config: {}", e.what()));
    }
    c.validate();
    return c;
}

json BackendConfig::to_json() const {
    json j;
    if (const auto* h = std::get_if<HttpEndpoint>(&kind)) {
        j = {{"kind", "http"}, {"base_url", h->base_url}, {"api_key_env", h->api_key_env}, {"model", h->model}};
        if (!h->embedding_model.empty()) j["embedding_model"] = h->embedding_model;
        if (!h->finetune_base_model.empty()) j["finetune_base_model"] = h->finetune_base_model;
    } else if (const auto* m = std::get_if<HeuristicMock>(&kind)) {
        j = {{"kind", "mock-heuristic"}, {"threshold", m->threshold}, {"provider_limited", m->provider_limited}};
    } else if (const auto* r = std::get_if<ReplayMock>(&kind)) {
        j = {{"kind", "mock-replay"}, {"fixture", r->fixture.string()}, {"provider_limited", r->provider_limited}};
    }
    j["temperature"] = params.temperature;
    j["max_tokens"] = params.max_tokens;
    return j;
}

BackendConfig with_model(const BackendConfig& config, const std::string& model_id) {
    BackendConfig out = config;
    if (auto* h = std::get_if<HttpEndpoint>(&out.kind)) {
        h->model = model_id;
    } else if (auto* m = std::get_if<HeuristicMock>(&out.kind)) {
        static const std::regex re(R"(threshold=([0-9]*\.?[0-9]+))");
        std::smatch match;
        if (std::regex_search(model_id, match, re)) m->threshold = std::stod(match[1].str());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fine-tune config and jobs

void FineTuneConfig::validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be at least 1");
    if (!(learning_rate_multiplier > 0.0)) throw ArgumentError("learning rate multiplier must be positive");
    if (batch_size < 1) throw ArgumentError("batch size must be positive");
    if (lora) {
        if (!(lora->alpha > 0.0) || lora->rank < 1 || !(lora->learning_rate > 0.0))
            throw ArgumentError("LoRA alpha, rank, and learning rate must be positive");
        if (!(lora->dropout >= 0.0 && lora->dropout < 1.0)) throw ArgumentError("LoRA dropout must be in [0,1)");
    }
}

json FineTuneConfig::to_json() const {
    json j = {{"epochs", epochs}, {"learning_rate_multiplier", learning_rate_multiplier}, {"batch_size", batch_size}};
    if (lora)
        j["lora"] = {{"alpha", lora->alpha},
                     {"dropout", lora->dropout},
                     {"rank", lora->rank},
                     {"learning_rate", lora->learning_rate}};
    return j;
}

FineTuneConfig FineTuneConfig::from_json(const json& j) {
    FineTuneConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate_multiplier = j.value("learning_rate_multiplier", c.learning_rate_multiplier);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("lora") && !j["lora"].is_null()) {
        LoraConfig l;
        const auto& lj = j["lora"];
        l.alpha = lj.value("alpha", l.alpha);
        l.dropout = lj.value("dropout", l.dropout);
        l.rank = lj.value("rank", l.rank);
        l.learning_rate = lj.value("learning_rate", l.learning_rate);
        c.lora = l;
    }
    c.validate();
    return c;
}

FineTuneConfig FineTuneConfig::hosted_defaults() { return FineTuneConfig{}; }

FineTuneConfig FineTuneConfig::open_weight_defaults() {
    FineTuneConfig c;
    c.lora = LoraConfig{};
    return c;
}

std::string_view to_string(JobStatus s) {
    switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Succeeded: return "succeeded";
    case JobStatus::Failed: return "failed";
    }
    return "queued";
}

JobStatus job_status_from_string(std::string_view s) {
    if (s == "queued" || s == "validating_files") return JobStatus::Queued;
    if (s == "running") return JobStatus::Running;
    if (s == "succeeded") return JobStatus::Succeeded;
    if (s == "failed" || s == "cancelled") return JobStatus::Failed;
    throw ParseError(fmt::format("unknown job status '{}'", s));
}

json FineTuneJob::to_json() const {
    json cps = json::array();
    for (const auto& c : checkpoints) cps.push_back({{"model_id", c.model_id}, {"epoch", c.epoch}});
    return json{{"id", id},
                {"status", to_string(status)},
                {"hyperparameters", hyperparameters.to_json()},
                {"checkpoints", cps},
                {"fine_tuned_model", fine_tuned_model},
                {"trained_tokens", trained_tokens},
                {"error", error}};
}

FineTuneJob FineTuneJob::from_json(const json& j) {
    FineTuneJob job;
    job.id = j.at("id").get<std::string>();
    job.status = job_status_from_string(j.at("status").get<std::string>());
    job.hyperparameters = FineTuneConfig::from_json(j.value("hyperparameters", json::object()));
    for (const auto& c : j.value("checkpoints", json::array()))
        job.checkpoints.push_back({c.at("model_id").get<std::string>(), c.at("epoch").get<int>()});
    job.fine_tuned_model = j.value("fine_tuned_model", "");
    job.trained_tokens = j.value("trained_tokens", std::int64_t{0});
    job.error = j.value("error", "");
    return job;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
    const double ms = static_cast<double>(base_delay.count()) * std::pow(factor, attempt - 2);
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

void RetryPolicy::wait(std::chrono::milliseconds d) const {
    if (sleep)
        sleep(d);
    else
        std::this_thread::sleep_for(d);
}

std::string request_hash(const Conversation& messages) {
    std::string buf;
    for (const auto& m : messages) {
        buf += to_string(m.role);
        buf.push_back('\0');
        buf += m.content;
        buf.push_back('\0');
    }
    return sha256_hex(buf);
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

Usage estimate_usage(const Conversation& messages, std::string_view response) {
    Usage u;
    for (const auto& m : messages) u.input_tokens += estimate_tokens(m.content);
    u.output_tokens = estimate_tokens(response);
    u.estimated = true;
    return u;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::unordered_set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

EmbeddingVector mock_embedding(std::string_view text) {
    EmbeddingVector v;
    v.values.assign(kMockEmbeddingDim, 0.0);
    for (const auto& tok : alnum_tokens(text)) v.values[fnv1a64(tok) % kMockEmbeddingDim] += 1.0;
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v.values) x /= norm;
    }
    v.source_hash = sha256_hex(text);
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ArgumentError("cosine of vectors with different lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t validate_training_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(fmt::format("cannot read training file '{}'", path.string()));
    std::string line;
    std::size_t lineno = 0, records = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) throw ValidationError(fmt::format("line {}: empty line", lineno));
        try {
            const json j = json::parse(line);
            if (!j.is_object() || !j.contains("messages")) throw ValidationError("missing 'messages'");
            const auto conv = conversation_from_json(j["messages"]);
            validate_conversation(conv);
            if (conv.back().role != Role::Assistant) throw ValidationError("last message is not from the assistant");
        } catch (const std::exception& e) {
            throw ValidationError(fmt::format("{}: line {}: {}", path.string(), lineno, e.what()));
        }
        ++records;
    }
    if (records == 0) throw ValidationError(fmt::format("{}: no training records", path.string()));
    return records;
}

// ---------------------------------------------------------------------------
// Offline backends

namespace {

void jitter(int max_ms, std::uint64_t seed, std::size_t index) {
    if (max_ms <= 0) return;
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + index);
    std::uniform_int_distribution<int> d(0, max_ms);
    std::this_thread::sleep_for(std::chrono::milliseconds(d(rng)));
}

/// Scripted fine-tune jobs shared by both offline backends. A job is queued on creation,
/// running after the first poll, and succeeded from the second poll on.
class MockJobs {
public:
    MockJobs(double base_threshold, bool provider_limited)
        : base_threshold_(base_threshold), provider_limited_(provider_limited) {}

    FineTuneJob create(const fs::path& training_file, const std::optional<fs::path>& validation_file,
                       const FineTuneConfig& config) {
        validate_training_file(training_file);
        if (validation_file) validate_training_file(*validation_file);
        config.validate();

        const std::string contents = read_file(training_file);
        State s;
        s.job.id = "ftjob-mock-" + sha256_hex(contents + config.to_json().dump()).substr(0, 16);
        s.job.status = JobStatus::Queued;
        s.job.hyperparameters = config;
        s.threshold = learn_threshold(training_file, s.tokens);
        s.job.trained_tokens = s.tokens * config.epochs;

        std::lock_guard lock(mu_);
        jobs_[s.job.id] = s;
        return s.job;
    }

    FineTuneJob poll(const std::string& id) {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) throw GatewayError(fmt::format("unknown fine-tune job '{}'", id), 1, 404);
        State& s = it->second;
        ++s.polls;
        const int epochs = s.job.hyperparameters.epochs;
        const int done = s.polls >= 2 ? epochs : (epochs + 1) / 2;
        s.job.status = s.polls >= 2 ? JobStatus::Succeeded : JobStatus::Running;
        s.job.checkpoints.clear();
        const int first_kept = provider_limited_ ? std::max(1, epochs - 2) : 1;
        for (int e = first_kept; e <= done; ++e) {
            s.job.checkpoints.push_back(
                {fmt::format("mock-ft:{}:epoch-{}:threshold={:.2f}", s.job.id, e, s.threshold), e});
        }
        if (s.job.status == JobStatus::Succeeded) s.job.fine_tuned_model = s.job.checkpoints.back().model_id;
        return s.job;
    }

private:
    struct State {
        FineTuneJob job;
        double threshold = 0.5;
        std::int64_t tokens = 0;
        int polls = 0;
    };

    /// Threshold on a 0.05 grid that best separates the training labels by token overlap.
    /// Ties go to the value closest to the configured threshold, then the lower one.
    double learn_threshold(const fs::path& training_file, std::int64_t& tokens) const {
        std::vector<std::pair<double, bool>> samples;
        for (const auto& row : read_jsonl(training_file)) {
            const auto conv = conversation_from_json(row.at("messages"));
            for (const auto& m : conv) tokens += estimate_tokens(m.content);
            const auto ents = extract_entities(conv);
            if (!ents) continue;
            const bool match = to_lower(conv.back().content).rfind("yes", 0) == 0;
            samples.emplace_back(jaccard(alnum_tokens(ents->first), alnum_tokens(ents->second)), match);
        }
        double best = base_threshold_;
        std::size_t best_correct = 0;
        bool have = false;
        for (int step = 0; step <= 20; ++step) {
            const double t = step * 0.05;
            std::size_t correct = 0;
            for (const auto& [score, match] : samples) correct += (score >= t - 1e-12) == match;
            const bool better = !have || correct > best_correct ||
                                (correct == best_correct && std::fabs(t - base_threshold_) <
                                                                std::fabs(best - base_threshold_) - 1e-12);
            if (better) {
                best = t;
                best_correct = correct;
                have = true;
            }
        }
        return best;
    }

    double base_threshold_;
    bool provider_limited_;
    std::mutex mu_;
    std::unordered_map<std::string, State> jobs_;
};

class HeuristicBackend final : public Backend {
public:
    explicit HeuristicBackend(HeuristicMock cfg)
        : cfg_(cfg), jobs_(cfg.threshold, cfg.provider_limited) {}

    Completion chat(const Conversation& messages, std::size_t index) override {
        jitter(cfg_.latency_jitter_ms, cfg_.seed, index);
        std::string answer = "No";
        if (auto ents = extract_entities(messages)) {
            const double overlap = jaccard(alnum_tokens(ents->first), alnum_tokens(ents->second));
            if (overlap >= cfg_.threshold - 1e-12) answer = "Yes";
        }
        Completion c;
        c.usage = estimate_usage(messages, answer);
        c.text = std::move(answer);
        c.request_index = index;
        return c;
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(mock_embedding(t));
        return out;
    }

    FineTuneJob create_job(const fs::path& train, const std::optional<fs::path>& val,
                           const FineTuneConfig& config) override {
        return jobs_.create(train, val, config);
    }
    FineTuneJob poll_job(const std::string& id) override { return jobs_.poll(id); }

private:
    HeuristicMock cfg_;
    MockJobs jobs_;
};

class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(ReplayMock cfg) : cfg_(std::move(cfg)), jobs_(0.5, cfg_.provider_limited) {
        for (const auto& row : read_jsonl(cfg_.fixture)) {
            Entry e;
            e.text = row.at("response").get<std::string>();
            if (row.contains("usage")) {
                e.usage.input_tokens = row["usage"].value("input", std::int64_t{0});
                e.usage.output_tokens = row["usage"].value("output", std::int64_t{0});
                e.has_usage = true;
            }
            entries_[row.at("hash").get<std::string>()].entries.push_back(std::move(e));
        }
    }

    Completion chat(const Conversation& messages, std::size_t index) override {
        jitter(cfg_.latency_jitter_ms, cfg_.seed, index);
        const std::string hash = request_hash(messages);
        Entry e;
        {
            std::lock_guard lock(mu_);
            auto it = entries_.find(hash);
            if (it == entries_.end())
                throw FixtureError(fmt::format("replay fixture has no response for request {}", hash), hash);
            auto& cursor = it->second;
            // Entries for one hash are served in order; the last one repeats once exhausted.
            e = cursor.entries[std::min(cursor.next, cursor.entries.size() - 1)];
            ++cursor.next;
        }
        Completion c;
        c.usage = e.has_usage ? e.usage : estimate_usage(messages, e.text);
        c.text = std::move(e.text);
        c.request_index = index;
        return c;
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        for (const auto& t : texts) out.push_back(mock_embedding(t));
        return out;
    }

    FineTuneJob create_job(const fs::path& train, const std::optional<fs::path>& val,
                           const FineTuneConfig& config) override {
        return jobs_.create(train, val, config);
    }
    FineTuneJob poll_job(const std::string& id) override { return jobs_.poll(id); }

private:
    struct Entry {
        std::string text;
        Usage usage;
        bool has_usage = false;
    };
    struct Cursor {
        std::vector<Entry> entries;
        std::size_t next = 0;
    };

    ReplayMock cfg_;
    MockJobs jobs_;
    std::mutex mu_;
    std::unordered_map<std::string, Cursor> entries_;
};

}  // namespace

std::shared_ptr<Backend> make_backend(const BackendConfig& config) {
    config.validate();
    if (const auto* h = std::get_if<HttpEndpoint>(&config.kind)) return detail::make_http_backend(*h, config.params);
    if (const auto* m = std::get_if<HeuristicMock>(&config.kind)) return std::make_shared<HeuristicBackend>(*m);
    return std::make_shared<ReplayBackend>(std::get<ReplayMock>(config.kind));
}

// ---------------------------------------------------------------------------
// Retrying entry points

namespace {

template <typename F>
auto with_retries(const RetryPolicy& retry, F&& call, int* attempts_out = nullptr) {
    for (int attempt = 1;; ++attempt) {
        if (attempts_out) *attempts_out = attempt;
        if (attempt > 1) retry.wait(retry.delay_before(attempt));
        try {
            return call();
        } catch (const GatewayError& e) {
            if (!e.transient()) throw GatewayError(e.what(), attempt, e.status(), false);
            if (attempt >= retry.max_attempts)
                throw GatewayError(fmt::format("{} (gave up after {} attempts)", e.what(), attempt), attempt,
                                   e.status(), true);
        }
    }
}

void require_user_last(const Conversation& messages) {
    if (messages.empty()) throw ArgumentError("chat request has no messages");
    if (messages.back().role != Role::User) throw ArgumentError("chat request must end with a user message");
}

}  // namespace

Completion chat_complete(Backend& backend, const Conversation& messages, const RetryPolicy& retry) {
    require_user_last(messages);
    return with_retries(retry, [&] { return backend.chat(messages, 0); });
}

Usage BatchResult::total_usage() const {
    Usage u;
    for (const auto& c : completions)
        if (c) u += c->usage;
    return u;
}

BatchResult batch_complete(Backend& backend, const std::vector<Conversation>& requests, const BatchOptions& options) {
    if (options.max_in_flight < 1) throw ArgumentError("max_in_flight must be at least 1");
    for (const auto& r : requests) require_user_last(r);

    BatchResult result;
    result.completions.resize(requests.size());
    std::vector<std::optional<BatchFailure>> failures(requests.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            int attempts = 0;
            try {
                Completion c = with_retries(options.retry, [&] { return backend.chat(requests[i], i); }, &attempts);
                c.request_index = i;
                result.completions[i] = std::move(c);
            } catch (const std::exception& e) {
                failures[i] = BatchFailure{i, e.what(), attempts};
            }
        }
    };
    const std::size_t n_workers = std::min(options.max_in_flight, requests.size());
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
        if (n_workers > 0) worker();
    }
    for (auto& f : failures)
        if (f) result.failures.push_back(std::move(*f));

    if (options.log_path) {
        std::string out;
        for (std::size_t i = 0; i < requests.size(); ++i) {
            json row = {{"index", i}, {"hash", request_hash(requests[i])}, {"messages", to_json(requests[i])}};
            if (const auto& c = result.completions[i]) {
                row["response"] = c->text;
                row["usage"] = {{"input", c->usage.input_tokens},
                                {"output", c->usage.output_tokens},
                                {"estimated", c->usage.estimated}};
            } else if (failures[i]) {
                row["error"] = failures[i]->message;
            }
            out += row.dump() + "\n";
        }
        if (options.log_path->has_parent_path()) fs::create_directories(options.log_path->parent_path());
        std::ofstream log(*options.log_path, std::ios::app | std::ios::binary);
        log << out;
    }
    return result;
}

std::vector<EmbeddingVector> embed(Backend& backend, const std::vector<std::string>& texts,
                                   const RetryPolicy& retry) {
    if (texts.empty()) return {};
    auto out = with_retries(retry, [&] { return backend.embed(texts); });
    if (out.size() != texts.size())
        throw GatewayError(fmt::format("expected {} embeddings, got {}", texts.size(), out.size()), 1);
    for (const auto& v : out) {
        if (v.values.size() != out.front().values.size())
            throw GatewayError("embedding backend returned vectors of different lengths", 1);
        for (double x : v.values)
            if (!std::isfinite(x)) throw GatewayError("embedding backend returned a non-finite value", 1);
    }
    return out;
}

FineTuneJob create_finetune_job(Backend& backend, const fs::path& training_file,
                                const std::optional<fs::path>& validation_file, const FineTuneConfig& config,
                                const RetryPolicy& retry) {
    validate_training_file(training_file);
    if (validation_file) validate_training_file(*validation_file);
    config.validate();
    return with_retries(retry, [&] { return backend.create_job(training_file, validation_file, config); });
}

FineTuneJob poll_finetune_job(Backend& backend, const std::string& job_id, const RetryPolicy& retry) {
    return with_retries(retry, [&] { return backend.poll_job(job_id); });
}

FineTuneJob wait_for_job(Backend& backend, const std::string& job_id, std::chrono::milliseconds interval,
                         const RetryPolicy& retry, int max_polls) {
    for (int i = 0; i < max_polls; ++i) {
        FineTuneJob job = poll_finetune_job(backend, job_id, retry);
        if (job.terminal()) return job;
        retry.wait(interval);
    }
    throw GatewayError(fmt::format("fine-tune job '{}' did not finish after {} polls", job_id, max_polls), max_polls);
}

}  // namespace emtune
