#include "emtune/costing.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/core.h>

#include "emtune/error.hpp"

namespace emtune {

namespace {

void check_rate(double v, const std::string& model, std::string_view what) {
    if (!std::isfinite(v) || v < 0.0) throw PricingError(fmt::format("{}: {} rate must be >= 0", model, what));
}

std::optional<double> opt_rate(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

std::string thousands(std::int64_t v) {
    std::string digits = std::to_string(v < 0 ? -v : v);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i && (digits.size() - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return v < 0 ? "-" + out : out;
}

}  // namespace

void PricingSheet::validate() const {
    if (effective_date.empty()) throw PricingError("pricing sheet has no effective date");
    for (const auto& [model, r] : models) {
        check_rate(r.input, model, "input");
        check_rate(r.output, model, "output");
        const int tuned = r.training.has_value() + r.tuned_input.has_value() + r.tuned_output.has_value();
        if (tuned != 0 && tuned != 3)
            throw PricingError(fmt::format("{}: training, tuned_input and tuned_output go together", model));
        if (r.training) {
            check_rate(*r.training, model, "training");
            check_rate(*r.tuned_input, model, "tuned input");
            check_rate(*r.tuned_output, model, "tuned output");
        }
    }
}

const ModelRates& PricingSheet::rates(const std::string& model) const {
    auto it = models.find(model);
    if (it == models.end())
        throw PricingError(fmt::format("model '{}' is not in the pricing sheet ({})", model, effective_date));
    return it->second;
}

PricingSheet PricingSheet::from_json(const json& j) {
    PricingSheet s;
    try {
        s.effective_date = j.at("effective_date").get<std::string>();
        for (const auto& [model, r] : j.at("models").items()) {
            ModelRates m;
            m.input = r.at("input").get<double>();
            m.output = r.at("output").get<double>();
            m.training = opt_rate(r, "training");
            m.tuned_input = opt_rate(r, "tuned_input");
            m.tuned_output = opt_rate(r, "tuned_output");
            s.models[model] = m;
        }
    } catch (const json::exception& e) {
        throw PricingError(fmt::format("malformed pricing sheet: {}", e.what()));
    }
    s.validate();
    return s;
}

PricingSheet PricingSheet::load(const fs::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw PricingError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

json PricingSheet::to_json() const {
    json ms = json::object();
    for (const auto& [model, r] : models) {
        json m = {{"input", r.input}, {"output", r.output}};
        if (r.training) {
            m["training"] = *r.training;
            m["tuned_input"] = *r.tuned_input;
            m["tuned_output"] = *r.tuned_output;
        }
        ms[model] = m;
    }
    return json{{"effective_date", effective_date}, {"models", ms}};
}

PricingSheet PricingSheet::zero_rate(const std::vector<std::string>& models, std::string effective_date) {
    PricingSheet s;
    s.effective_date = std::move(effective_date);
    for (const auto& m : models) s.models[m] = ModelRates{0.0, 0.0, 0.0, 0.0, 0.0};
    return s;
}

std::string_view to_string(Scenario s) { return s == Scenario::ZeroShot ? "zero-shot" : "fine-tuned"; }

Scenario scenario_from_string(std::string_view s) {
    if (s == "zero-shot") return Scenario::ZeroShot;
    if (s == "fine-tuned") return Scenario::FineTuned;
    throw ArgumentError(fmt::format("unknown scenario '{}'", s));
}

void UsageLedger::validate() const {
    if (input_tokens < 0 || output_tokens < 0 || training_tokens < 0)
        throw ArgumentError(fmt::format("ledger '{}': token counts must be >= 0", label));
    if (scenario == Scenario::ZeroShot && training_tokens != 0)
        throw ArgumentError(fmt::format("ledger '{}': zero-shot ledgers carry no training tokens", label));
}

json UsageLedger::to_json() const {
    return json{{"label", label},
                {"model", model},
                {"scenario", to_string(scenario)},
                {"input_tokens", input_tokens},
                {"output_tokens", output_tokens},
                {"training_tokens", training_tokens},
                {"training_examples", training_examples},
                {"inference_examples", inference_examples},
                {"estimated", estimated}};
}

UsageLedger UsageLedger::from_json(const json& j) {
    UsageLedger l;
    try {
        l.model = j.at("model").get<std::string>();
        l.label = j.value("label", l.model);
        l.scenario = scenario_from_string(j.value("scenario", std::string("zero-shot")));
        l.input_tokens = j.value("input_tokens", std::int64_t{0});
        l.output_tokens = j.value("output_tokens", std::int64_t{0});
        l.training_tokens = j.value("training_tokens", std::int64_t{0});
        l.training_examples = j.value("training_examples", std::size_t{0});
        l.inference_examples = j.value("inference_examples", std::size_t{0});
        l.estimated = j.value("estimated", false);
    } catch (const json::exception& e) {
        throw ArgumentError(fmt::format("malformed usage ledger: {}", e.what()));
    }
    l.validate();
    return l;
}

double training_cost(std::int64_t tokens, const PricingSheet& sheet, const std::string& model) {
    if (tokens < 0) throw ArgumentError("training tokens must be >= 0");
    const auto& r = sheet.rates(model);
    if (!r.training) throw PricingError(fmt::format("model '{}' has no training rate", model));
    return static_cast<double>(tokens) * *r.training / 1e6;
}

double inference_cost(const UsageLedger& ledger, const PricingSheet& sheet, const std::string& model) {
    ledger.validate();
    const auto& r = sheet.rates(model);
    double in = r.input, out = r.output;
    if (ledger.scenario == Scenario::FineTuned) {
        if (!r.tuned_input) throw PricingError(fmt::format("model '{}' has no fine-tuned inference rates", model));
        in = *r.tuned_input;
        out = *r.tuned_output;
    }
    return static_cast<double>(ledger.input_tokens) * in / 1e6 + static_cast<double>(ledger.output_tokens) * out / 1e6;
}

double cost_per_example(double training_cost_dollars, std::size_t examples) {
    if (examples == 0) throw ArgumentError("cost per example needs at least one example");
    return training_cost_dollars / static_cast<double>(examples) * 100.0;
}

CostReport build_cost_report(const std::vector<UsageLedger>& ledgers, const PricingSheet& sheet) {
    CostReport report{sheet.effective_date, {}};
    for (const auto& l : ledgers) {
        l.validate();
        CostColumn c;
        c.label = l.label;
        c.model = l.model;
        c.scenario = l.scenario;
        c.training_tokens = l.training_tokens;
        c.input_tokens = l.input_tokens;
        c.output_tokens = l.output_tokens;
        c.training_examples = l.training_examples;
        c.inference_examples = l.inference_examples;
        c.estimated = l.estimated;
        if (l.scenario == Scenario::FineTuned) {
            c.training_cost = training_cost(l.training_tokens, sheet, l.model);
            if (l.training_examples) c.cost_per_example_cents = cost_per_example(c.training_cost, l.training_examples);
        }
        c.inference_cost = inference_cost(l, sheet, l.model);
        if (l.inference_examples)
            c.mean_token_count = static_cast<double>(c.total_tokens()) / static_cast<double>(l.inference_examples);
        report.columns.push_back(std::move(c));
    }
    return report;
}

json CostReport::to_json() const {
    json cols = json::array();
    for (const auto& c : columns) {
        cols.push_back({{"label", c.label},
                        {"model", c.model},
                        {"scenario", to_string(c.scenario)},
                        {"training_tokens", c.training_tokens},
                        {"training_examples", c.training_examples},
                        {"cost_per_example_cents", c.cost_per_example_cents},
                        {"training_cost", c.training_cost},
                        {"input_tokens", c.input_tokens},
                        {"output_tokens", c.output_tokens},
                        {"inference_examples", c.inference_examples},
                        {"mean_token_count", c.mean_token_count},
                        {"total_tokens", c.total_tokens()},
                        {"inference_cost", c.inference_cost},
                        {"estimated", c.estimated}});
    }
    return json{{"effective_date", effective_date}, {"columns", cols}};
}

std::string CostReport::to_text() const {
    using Cell = std::function<std::string(const CostColumn&)>;
    const std::vector<std::pair<std::string, Cell>> rows = {
        {"Training tokens", [](const CostColumn& c) { return thousands(c.training_tokens); }},
        {"Cost per example",
         [](const CostColumn& c) {
             return c.scenario == Scenario::ZeroShot ? std::string("0")
                                                     : format_fixed(c.cost_per_example_cents, 2) + "c";
         }},
        {"Total fine-tuning cost",
         [](const CostColumn& c) {
             return c.scenario == Scenario::ZeroShot ? std::string("0") : "$" + format_fixed(c.training_cost, 2);
         }},
        {"Total input tokens", [](const CostColumn& c) { return thousands(c.input_tokens); }},
        {"Total output tokens", [](const CostColumn& c) { return thousands(c.output_tokens); }},
        {"Mean token count", [](const CostColumn& c) { return format_fixed(c.mean_token_count, 2); }},
        {"Total token count", [](const CostColumn& c) { return thousands(c.total_tokens()); }},
        {"Total inference cost", [](const CostColumn& c) { return "$" + format_fixed(c.inference_cost, 2); }},
    };

    auto heading = [](const CostColumn& c) { return c.estimated ? c.model + " (estimate)" : c.model; };
    std::size_t label_w = 22;
    std::vector<std::size_t> widths;
    for (const auto& c : columns) {
        std::size_t w = std::max(c.label.size(), heading(c).size());
        for (const auto& [_, f] : rows) w = std::max(w, f(c).size());
        widths.push_back(w);
    }

    std::string out = fmt::format("Pricing as of {}\n", effective_date);
    std::string h1 = fmt::format("{:<{}}", "", label_w), h2 = fmt::format("{:<{}}", "Metric", label_w);
    for (std::size_t i = 0; i < columns.size(); ++i) {
        h1 += fmt::format(" | {:>{}}", columns[i].label, widths[i]);
        h2 += fmt::format(" | {:>{}}", heading(columns[i]), widths[i]);
    }
    out += h1 + "\n" + h2 + "\n" + std::string(h2.size(), '-') + "\n";
    for (const auto& [name, f] : rows) {
        std::string line = fmt::format("{:<{}}", name, label_w);
        for (std::size_t i = 0; i < columns.size(); ++i) line += fmt::format(" | {:>{}}", f(columns[i]), widths[i]);
        out += line + "\n";
    }
    if (std::any_of(columns.begin(), columns.end(), [](const CostColumn& c) { return c.estimated; }))
        out += "Columns marked (estimate) use byte-estimated token counts, not provider usage.\n";
    return out;
}

}  // namespace emtune
