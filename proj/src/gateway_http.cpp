// OpenAI-compatible HTTP backend. Kept in its own translation unit because httplib.h is heavy.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <regex>

#include <fmt/core.h>

#include "emtune/error.hpp"
#include "gateway_internal.hpp"

namespace emtune::detail {

namespace {

bool is_transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::string provider_message(const httplib::Result& res) {
    try {
        const json j = json::parse(res->body);
        if (j.contains("error")) {
            const auto& e = j["error"];
            if (e.is_object() && e.contains("message")) return e["message"].get<std::string>();
            if (e.is_string()) return e.get<std::string>();
        }
    } catch (const json::exception&) {
    }
    return res->body.substr(0, 500);
}

class HttpBackend final : public Backend {
public:
    HttpBackend(HttpEndpoint endpoint, RequestParams params) : ep_(std::move(endpoint)), params_(params) {
        static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(ep_.base_url, m, url))
            throw ConfigError(fmt::format("base_url '{}' is not a well-formed URL", ep_.base_url));
        origin_ = m[1].str();
        prefix_ = m[2].matched ? m[2].str() : std::string();
        while (prefix_.ends_with('/')) prefix_.pop_back();
        if (!ep_.api_key_env.empty()) {
            const char* key = std::getenv(ep_.api_key_env.c_str());
            if (!key || !*key)
                throw ConfigError(fmt::format("environment variable {} is not set", ep_.api_key_env));
            key_ = key;
        }
    }

    Completion chat(const Conversation& messages, std::size_t index) override {
        json body = {{"model", ep_.model},
                     {"messages", to_json(messages)},
                     {"temperature", params_.temperature},
                     {"max_tokens", params_.max_tokens}};
        const json res = post_json("/chat/completions", body);
        Completion c;
        c.request_index = index;
        try {
            const auto& content = res.at("choices").at(0).at("message").at("content");
            c.text = content.is_null() ? std::string() : content.get<std::string>();
            if (res.contains("usage")) {
                c.usage.input_tokens = res["usage"].value("prompt_tokens", std::int64_t{0});
                c.usage.output_tokens = res["usage"].value("completion_tokens", std::int64_t{0});
            } else {
                c.usage = estimate_usage(messages, c.text);
            }
        } catch (const json::exception& e) {
            throw GatewayError(fmt::format("malformed chat completion response: {}", e.what()), 1);
        }
        return c;
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        const std::string model = ep_.embedding_model.empty() ? ep_.model : ep_.embedding_model;
        const json res = post_json("/embeddings", json{{"model", model}, {"input", texts}});
        std::vector<EmbeddingVector> out(texts.size());
        try {
            for (const auto& item : res.at("data")) {
                const std::size_t i = item.value("index", std::size_t{0});
                if (i >= out.size()) throw GatewayError("embedding index out of range", 1);
                out[i].values = item.at("embedding").get<std::vector<double>>();
                out[i].source_hash = sha256_hex(texts[i]);
            }
        } catch (const json::exception& e) {
            throw GatewayError(fmt::format("malformed embeddings response: {}", e.what()), 1);
        }
        return out;
    }

    FineTuneJob create_job(const fs::path& training_file, const std::optional<fs::path>& validation_file,
                           const FineTuneConfig& config) override {
        json body = {{"model", ep_.finetune_base_model.empty() ? ep_.model : ep_.finetune_base_model},
                     {"training_file", upload(training_file)},
                     {"hyperparameters",
                      {{"n_epochs", config.epochs},
                       {"batch_size", config.batch_size},
                       {"learning_rate_multiplier", config.learning_rate_multiplier}}}};
        if (validation_file) body["validation_file"] = upload(*validation_file);
        FineTuneJob job = parse_job(post_json("/fine_tuning/jobs", body));
        job.hyperparameters = config;
        return job;
    }

    FineTuneJob poll_job(const std::string& job_id) override {
        FineTuneJob job = parse_job(get_json("/fine_tuning/jobs/" + job_id));
        if (job.status == JobStatus::Running || job.status == JobStatus::Succeeded) {
            const json cps = get_json("/fine_tuning/jobs/" + job_id + "/checkpoints");
            std::vector<std::pair<std::int64_t, std::string>> steps;
            for (const auto& c : cps.value("data", json::array()))
                steps.emplace_back(c.value("step_number", std::int64_t{0}),
                                   c.value("fine_tuned_model_checkpoint", std::string()));
            std::sort(steps.begin(), steps.end());
            // The provider lists the last checkpoints only; the newest belongs to the last finished epoch.
            const int last_epoch = job.status == JobStatus::Succeeded
                                       ? job.hyperparameters.epochs
                                       : std::max<int>(1, static_cast<int>(steps.size()));
            for (std::size_t i = 0; i < steps.size(); ++i) {
                const int epoch = last_epoch - static_cast<int>(steps.size() - 1 - i);
                job.checkpoints.push_back({steps[i].second, std::max(1, epoch)});
            }
        }
        return job;
    }

private:
    httplib::Client client() const {
        httplib::Client cli(origin_);
        const auto secs = static_cast<time_t>(ep_.timeout_seconds);
        cli.set_connection_timeout(secs, 0);
        cli.set_read_timeout(secs, 0);
        cli.set_write_timeout(secs, 0);
        if (!key_.empty()) cli.set_bearer_token_auth(key_);
        return cli;
    }

    json handle(const httplib::Result& res, const std::string& path) const {
        if (!res)
            throw GatewayError(fmt::format("{}{}: transport error: {}", origin_, path, httplib::to_string(res.error())),
                               1, 0, true);
        if (res->status < 200 || res->status >= 300) {
            throw GatewayError(fmt::format("{}{}: HTTP {}: {}", origin_, path, res->status, provider_message(res)), 1,
                               res->status, is_transient_status(res->status));
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw GatewayError(fmt::format("{}{}: invalid JSON body: {}", origin_, path, e.what()), 1, res->status);
        }
    }

    json post_json(const std::string& path, const json& body) const {
        auto cli = client();
        return handle(cli.Post(prefix_ + path, body.dump(), "application/json"), path);
    }

    json get_json(const std::string& path) const {
        auto cli = client();
        return handle(cli.Get(prefix_ + path), path);
    }

    std::string upload(const fs::path& file) const {
        auto cli = client();
        httplib::MultipartFormDataItems items = {
            {"purpose", "fine-tune", "", ""},
            {"file", read_file(file), file.filename().string(), "application/jsonl"},
        };
        const json res = handle(cli.Post(prefix_ + "/files", items), "/files");
        return res.at("id").get<std::string>();
    }

    static FineTuneJob parse_job(const json& j) {
        FineTuneJob job;
        try {
            job.id = j.at("id").get<std::string>();
            job.status = job_status_from_string(j.at("status").get<std::string>());
            if (j.contains("fine_tuned_model") && j["fine_tuned_model"].is_string())
                job.fine_tuned_model = j["fine_tuned_model"].get<std::string>();
            if (j.contains("trained_tokens") && j["trained_tokens"].is_number())
                job.trained_tokens = j["trained_tokens"].get<std::int64_t>();
            if (j.contains("hyperparameters")) {
                const auto& h = j["hyperparameters"];
                if (h.contains("n_epochs") && h["n_epochs"].is_number_integer())
                    job.hyperparameters.epochs = h["n_epochs"].get<int>();
                if (h.contains("batch_size") && h["batch_size"].is_number_integer())
                    job.hyperparameters.batch_size = h["batch_size"].get<int>();
                if (h.contains("learning_rate_multiplier") && h["learning_rate_multiplier"].is_number())
                    job.hyperparameters.learning_rate_multiplier = h["learning_rate_multiplier"].get<double>();
            }
            if (j.contains("error") && j["error"].is_object())
                job.error = j["error"].value("message", std::string());
        } catch (const std::exception& e) {
            throw GatewayError(fmt::format("malformed fine-tune job: {}", e.what()), 1);
        }
        return job;
    }

    HttpEndpoint ep_;
    RequestParams params_;
    std::string origin_;
    std::string prefix_;
    std::string key_;
};

}  // namespace

std::shared_ptr<Backend> make_http_backend(const HttpEndpoint& endpoint, const RequestParams& params) {
    return std::make_shared<HttpBackend>(endpoint, params);
}

}  // namespace emtune::detail
