#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emtune/util.hpp"

namespace emtune {

/// Dollars per million tokens.
struct ModelRates {
    double input = 0.0;
    double output = 0.0;
    std::optional<double> training;
    std::optional<double> tuned_input;
    std::optional<double> tuned_output;

    bool supports_finetuning() const { return training.has_value(); }
};

struct PricingSheet {
    std::string effective_date;
    std::map<std::string, ModelRates> models;

    /// Rates must be >= 0; tuned rates come as a set with the training rate.
    void validate() const;
    const ModelRates& rates(const std::string& model) const;

    static PricingSheet from_json(const json& j);
    static PricingSheet load(const fs::path& path);
    json to_json() const;

    /// Every rate zero. Models self-hosted inference and training.
    static PricingSheet zero_rate(const std::vector<std::string>& models, std::string effective_date = "self-hosted");
};

enum class Scenario { ZeroShot, FineTuned };
std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

struct UsageLedger {
    std::string label;  // column heading, e.g. "standard"
    std::string model;
    Scenario scenario = Scenario::ZeroShot;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::int64_t training_tokens = 0;
    std::size_t training_examples = 0;
    std::size_t inference_examples = 0;
    /// Counts came from the byte estimator.
    bool estimated = false;

    void validate() const;
    json to_json() const;
    static UsageLedger from_json(const json& j);
};

/// Unrounded dollars.
double training_cost(std::int64_t tokens, const PricingSheet& sheet, const std::string& model);
double inference_cost(const UsageLedger& ledger, const PricingSheet& sheet, const std::string& model);
/// Unrounded cents per training example.
double cost_per_example(double training_cost_dollars, std::size_t examples);

struct CostColumn {
    std::string label;
    std::string model;
    Scenario scenario = Scenario::ZeroShot;
    std::int64_t training_tokens = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::size_t training_examples = 0;
    std::size_t inference_examples = 0;
    double training_cost = 0.0;
    double inference_cost = 0.0;
    double cost_per_example_cents = 0.0;
    double mean_token_count = 0.0;
    bool estimated = false;

    std::int64_t total_tokens() const { return input_tokens + output_tokens; }
};

struct CostReport {
    std::string effective_date;
    std::vector<CostColumn> columns;

    json to_json() const;
    /// Rows in the order: training tokens, cost per example, fine-tuning cost, input tokens,
    /// output tokens, mean token count, total token count, inference cost.
    std::string to_text() const;
};

CostReport build_cost_report(const std::vector<UsageLedger>& ledgers, const PricingSheet& sheet);

}  // namespace emtune
