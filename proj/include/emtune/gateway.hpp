#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "emtune/promptforge.hpp"

namespace emtune {

struct RequestParams {
    double temperature = 0.0;
    int max_tokens = 512;
};

/// OpenAI-compatible endpoint. The credential is looked up by environment variable name.
struct HttpEndpoint {
    std::string base_url;
    std::string api_key_env;
    std::string model;
    std::string embedding_model;
    double timeout_seconds = 120.0;
    /// Base model id for fine-tune jobs; defaults to `model`.
    std::string finetune_base_model;
};

/// Offline matcher: "Yes" iff the Jaccard overlap of the two entities' tokens reaches the threshold.
struct HeuristicMock {
    double threshold = 0.5;
    /// Fine-tune jobs expose only the last three checkpoints, like the hosted provider.
    bool provider_limited = false;
    int latency_jitter_ms = 0;
    std::uint64_t seed = 0;
};

/// Offline replay of recorded responses keyed by request hash.
struct ReplayMock {
    fs::path fixture;
    bool provider_limited = false;
    int latency_jitter_ms = 0;
    std::uint64_t seed = 0;
};

struct BackendConfig {
    std::variant<HttpEndpoint, HeuristicMock, ReplayMock> kind = HeuristicMock{};
    RequestParams params;

    bool is_mock() const { return !std::holds_alternative<HttpEndpoint>(kind); }
    std::string_view kind_name() const;
    void validate() const;

    /// Relative fixture paths resolve against `base`.
    static BackendConfig from_json(const json& j, const fs::path& base = {});
    json to_json() const;
};

/// Same backend pointed at another model. For the offline matcher a `threshold=X` token in the
/// model id replaces the threshold.
BackendConfig with_model(const BackendConfig& config, const std::string& model_id);

struct Usage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    /// True when the counts come from the byte estimator instead of a provider.
    bool estimated = false;

    Usage& operator+=(const Usage& o) {
        input_tokens += o.input_tokens;
        output_tokens += o.output_tokens;
        estimated = estimated || o.estimated;
        return *this;
    }
};

struct Completion {
    std::string text;
    Usage usage;
    std::size_t request_index = 0;
};

struct LoraConfig {
    double alpha = 16.0;
    double dropout = 0.1;
    int rank = 64;
    double learning_rate = 2e-4;
};

struct FineTuneConfig {
    int epochs = 10;
    double learning_rate_multiplier = 1.8;
    int batch_size = 16;
    std::optional<LoraConfig> lora;

    void validate() const;
    json to_json() const;
    static FineTuneConfig from_json(const json& j);

    /// Hosted defaults: 10 epochs, multiplier 1.8, batch 16.
    static FineTuneConfig hosted_defaults();
    /// Hosted defaults plus LoRA alpha 16, dropout 0.1, rank 64, learning rate 2e-4.
    static FineTuneConfig open_weight_defaults();
};

enum class JobStatus { Queued, Running, Succeeded, Failed };
std::string_view to_string(JobStatus s);
JobStatus job_status_from_string(std::string_view s);

struct Checkpoint {
    std::string model_id;
    int epoch = 0;
};

struct FineTuneJob {
    std::string id;
    JobStatus status = JobStatus::Queued;
    FineTuneConfig hyperparameters;
    std::vector<Checkpoint> checkpoints;
    std::string fine_tuned_model;
    std::int64_t trained_tokens = 0;
    std::string error;

    bool terminal() const { return status == JobStatus::Succeeded || status == JobStatus::Failed; }
    json to_json() const;
    static FineTuneJob from_json(const json& j);
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string source_hash;
};

inline constexpr std::size_t kMockEmbeddingDim = 256;

/// One provider connection. Methods make a single attempt; retry policy lives in the free
/// functions below. Implementations are safe to call from several threads.
class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion chat(const Conversation& messages, std::size_t request_index) = 0;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual FineTuneJob create_job(const fs::path& training_file, const std::optional<fs::path>& validation_file,
                                   const FineTuneConfig& config) = 0;
    virtual FineTuneJob poll_job(const std::string& job_id) = 0;
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{1000};
    double factor = 2.0;
    /// Replaced in tests to avoid real sleeping.
    std::function<void(std::chrono::milliseconds)> sleep;

    std::chrono::milliseconds delay_before(int attempt) const;  // attempt >= 2
    void wait(std::chrono::milliseconds d) const;
};

/// Stable request hash: SHA-256 over role, NUL, content, NUL for each message.
std::string request_hash(const Conversation& messages);

/// ceil(bytes / 4).
std::int64_t estimate_tokens(std::string_view text);
Usage estimate_usage(const Conversation& messages, std::string_view response);

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);
/// Hashed bag of lower-cased alphanumeric tokens (FNV-1a mod 256), L2-normalized.
EmbeddingVector mock_embedding(std::string_view text);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

Completion chat_complete(Backend& backend, const Conversation& messages, const RetryPolicy& retry = {});

struct BatchFailure {
    std::size_t index = 0;
    std::string message;
    int attempts = 0;
};

struct BatchOptions {
    std::size_t max_in_flight = 8;
    RetryPolicy retry;
    /// When set, every request/response pair is appended here as JSON-lines, in index order.
    std::optional<fs::path> log_path;
};

struct BatchResult {
    std::vector<std::optional<Completion>> completions;
    std::vector<BatchFailure> failures;

    Usage total_usage() const;
    bool ok() const { return failures.empty(); }
};

/// Results come back in submission order; failed indices are listed without aborting the batch.
BatchResult batch_complete(Backend& backend, const std::vector<Conversation>& requests,
                           const BatchOptions& options = {});

std::vector<EmbeddingVector> embed(Backend& backend, const std::vector<std::string>& texts,
                                   const RetryPolicy& retry = {});

/// Every line must be {"messages": [...]} with a valid conversation ending in an assistant turn.
/// Throws ValidationError naming the first bad line.
std::size_t validate_training_file(const fs::path& path);

FineTuneJob create_finetune_job(Backend& backend, const fs::path& training_file,
                                const std::optional<fs::path>& validation_file, const FineTuneConfig& config,
                                const RetryPolicy& retry = {});
FineTuneJob poll_finetune_job(Backend& backend, const std::string& job_id, const RetryPolicy& retry = {});
/// Polls until the job is terminal.
FineTuneJob wait_for_job(Backend& backend, const std::string& job_id, std::chrono::milliseconds interval,
                         const RetryPolicy& retry = {}, int max_polls = 100000);

}  // namespace emtune
