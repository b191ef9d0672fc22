#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emtune/datamodel.hpp"
#include "emtune/evaluation.hpp"
#include "emtune/gateway.hpp"
#include "emtune/promptforge.hpp"

namespace emtune {

struct PairRef {
    std::string dataset;
    std::string split;
    std::size_t index = 0;

    std::string to_string() const;
    friend bool operator==(const PairRef&, const PairRef&) = default;
};

struct PredictionRecord {
    PairRef ref;
    std::string raw;
    Decision::Value decision = Decision::Value::Unparsed;
    /// Unset for unparsed decisions.
    std::optional<bool> correct;

    json to_json() const;
    static PredictionRecord from_json(const json& j);
};

PredictionRecord make_prediction(PairRef ref, std::string raw, Label gold);

/// Asks the backend to match every pair of one split. Throws GatewayError listing failed indices.
std::vector<PredictionRecord> predict_pairs(Backend& backend, const Dataset& dataset, const std::string& split,
                                            const BatchOptions& options = {},
                                            const PromptTemplate& tmpl = TemplateSet::defaults().match,
                                            Usage* usage = nullptr);

/// Decisions in pair order, for compute_metrics.
std::vector<Decision> decisions_of(const std::vector<PredictionRecord>& predictions);

enum class Verdict { Keep, Discard };
std::string_view to_string(Verdict v);

struct RelevancyJudgment {
    PairRef ref;
    Verdict verdict = Verdict::Discard;
    std::string raw;
    /// No verdict word was found; the pair was discarded by default.
    bool defaulted = false;

    json to_json() const;
    static RelevancyJudgment from_json(const json& j);
};

/// First whole word among keep/discard/yes/no decides (yes keeps, no discards). None: discard.
RelevancyJudgment parse_relevancy(PairRef ref, std::string raw);

std::vector<RelevancyJudgment> judge_relevancy(Backend& backend, const Dataset& dataset,
                                               const BatchOptions& options = {},
                                               const TemplateSet& templates = TemplateSet::defaults(),
                                               Usage* usage = nullptr);

/// Keeps train pairs whose prediction is correct. Unparsed counts as incorrect.
/// `predictions` must cover every train index exactly once.
Dataset error_filter(const Dataset& trainset, const std::vector<PredictionRecord>& predictions);
Dataset relevancy_filter(const Dataset& trainset, const std::vector<RelevancyJudgment>& judgments);

struct GenerationDiagnostic {
    std::size_t line = 0;
    std::string text;
    std::string reason;
};

/// Reads `MATCH ||| <entity 1> ||| <entity 2>` / `NONMATCH ||| ...` lines. Lines holding "|||" or
/// starting with a label word are segments; malformed segments are skipped and reported.
/// Throws GenerationParseError when nothing parses.
std::vector<CandidatePair> parse_generated(std::string_view raw, const CandidatePair& seed,
                                           const SerializationRule& rule,
                                           std::vector<GenerationDiagnostic>* diagnostics = nullptr);

struct GeneratedBatch {
    std::string seed_ref;
    GenerationStrategy strategy = GenerationStrategy::Brief;
    std::vector<CandidatePair> pairs;
    std::string raw;
    std::vector<GenerationDiagnostic> diagnostics;
    /// Brief prompts ask for one match and three non-matches; false flags a deviation.
    bool composition_ok = true;
    /// Set when the whole response failed to parse.
    std::string error;

    json to_json() const;
};

struct GenerationOptions {
    GenerationStrategy strategy = GenerationStrategy::Brief;
    std::uint64_t seed = 0;  // demonstration sampling
    BatchOptions batch;
    TemplateSet templates = TemplateSet::defaults();
};

/// One generation request per train pair of `seedset`.
std::vector<GeneratedBatch> generate_examples(Backend& backend, const Dataset& seedset,
                                              const GenerationOptions& options, Usage* usage = nullptr);

/// Parses the fenced attribute block. Missing decision or malformed lines: ParseError;
/// scores outside [0,1]: RangeError. Cells are trimmed.
StructuredExplanation parse_structured_explanation(std::string_view raw);

enum class ExplanationFallback { Exclude, Downgrade };
ExplanationFallback explanation_fallback_from_string(std::string_view s);

struct ExplanationOptions {
    ExplanationStyle style = ExplanationStyle::Structured;
    RepresentationVariant structured_variant = RepresentationVariant::Structured;
    std::vector<ExplanationDemo> demonstrations;
    ExplanationFallback fallback = ExplanationFallback::Exclude;
    int max_regenerations = 2;
    std::string dataset_name;
    BatchOptions batch;
    TemplateSet templates = TemplateSet::defaults();
};

struct ExclusionEntry {
    std::size_t index = 0;
    std::string left_id;
    std::string right_id;
    std::string reason;
    std::vector<std::string> attempts;
    bool downgraded = false;

    json to_json() const;
};

struct AttachResult {
    std::vector<FineTuneRecord> records;
    std::vector<ExclusionEntry> exclusions;
    Usage usage;

    std::string summary() const;
};

/// Explanation-augmented training records for every train pair. Responses that fail to parse
/// (or contradict the gold label) are requested again up to max_regenerations times.
AttachResult attach_explanations(const Dataset& trainset, Backend& backend, const ExplanationOptions& options);

/// Serialized left + " [SEP] " + serialized right.
std::string pair_text(const CandidatePair& pair, const SerializationRule& rule);

/// Round-robin over errors: each takes its most similar unchosen candidate (ties: lowest index)
/// until k are chosen. Returns candidate indices in selection order.
std::vector<std::size_t> round_robin_nearest(const std::vector<std::vector<double>>& errors,
                                             const std::vector<std::vector<double>>& candidates, std::size_t k);

/// Pool pairs nearest to the errors in embedding space. Pool entries that share ids or the
/// serialized key with `exclude` are not eligible. Throws SelectionError when fewer than k remain.
std::vector<CandidatePair> select_by_error_similarity(const std::vector<CandidatePair>& errors,
                                                      const std::vector<CandidatePair>& pool, Backend& embedder,
                                                      std::size_t k, const std::vector<CandidatePair>& exclude,
                                                      const SerializationRule& rule, const RetryPolicy& retry = {});

/// Trains and queries the model inside the selection loop.
class LoopModel {
public:
    virtual ~LoopModel() = default;
    virtual std::string train(const Dataset& trainset, int epochs, const fs::path& workdir) = 0;
    virtual std::vector<PredictionRecord> predict(const std::string& model_ref, const Dataset& dataset,
                                                  const std::string& split) = 0;
};

/// LoopModel over a gateway backend: standard records, hosted fine-tune job, batch prediction.
class GatewayLoopModel final : public LoopModel {
public:
    GatewayLoopModel(BackendConfig config, FineTuneConfig finetune, BatchOptions batch = {});
    std::string train(const Dataset& trainset, int epochs, const fs::path& workdir) override;
    std::vector<PredictionRecord> predict(const std::string& model_ref, const Dataset& dataset,
                                          const std::string& split) override;

private:
    BackendConfig config_;
    FineTuneConfig finetune_;
    BatchOptions batch_;
    std::shared_ptr<Backend> backend_;
};

struct SelectionIteration {
    int index = 0;
    std::vector<std::string> error_refs;
    std::vector<CandidatePair> selected;
    std::size_t cumulative_size = 0;
    std::string model_ref;
    MetricsReport validation;

    json to_json() const;
};

struct LoopOptions {
    int iterations = 5;
    std::size_t batch = 2500;
    int epochs = 5;
    /// One `iter-<i>` directory per iteration. Completed iterations found here are reused.
    fs::path checkpoint_dir;
};

struct LoopResult {
    /// Index 0 is the seed model; iterations 1..n each add one selected batch.
    std::vector<SelectionIteration> iterations;
    std::string best_model;
    int best_iteration = 0;
};

/// Iteration 0 trains on the seed. Iteration i selects `batch` pool pairs nearest to the previous
/// model's validation errors, retrains on the union, and validates. Best = highest validation F1,
/// earliest on ties.
LoopResult run_error_selection_loop(const Dataset& seed, const std::vector<CandidatePair>& pool, Backend& embedder,
                                    LoopModel& model, const LoopOptions& options);

}  // namespace emtune
