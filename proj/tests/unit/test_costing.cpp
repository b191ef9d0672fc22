#include <doctest.h>

#include <random>

#include "emtune/costing.hpp"
#include "emtune/error.hpp"
#include "support.hpp"

using namespace emtune;
using namespace emtune::testing;

namespace {

const std::string kMini = "gpt-4o-mini-2024-07-18";
const std::string kFull = "gpt-4o-2024-08-06";

PricingSheet sheet() { return PricingSheet::load(source_path("data/pricing/openai-2025-01.json")); }

UsageLedger ledger(Scenario s, std::int64_t in, std::int64_t out, std::int64_t train = 0) {
    UsageLedger l;
    l.label = "l";
    l.model = kMini;
    l.scenario = s;
    l.input_tokens = in;
    l.output_tokens = out;
    l.training_tokens = train;
    l.inference_examples = 4500;
    l.training_examples = train ? 2500 : 0;
    return l;
}

double cents(double dollars) { return round_half_away(dollars, 2); }

}  // namespace

TEST_CASE("training_cost") {
    const auto p = sheet();
    CHECK(cents(training_cost(1'841'460, p, kMini)) == 5.52);
    CHECK(training_cost(0, p, kMini) == 0.0);
    CHECK(cents(training_cost(5'750'330, p, kFull)) == 143.76);
    CHECK(training_cost(1'841'460, p, kMini) == doctest::Approx(1'841'460 * 3.0 / 1e6).epsilon(1e-12));
    CHECK_THROWS_AS(training_cost(10, p, "gpt-unknown"), PricingError);
    CHECK_THROWS_AS(training_cost(-1, p, kMini), ArgumentError);
}

TEST_CASE("inference_cost") {
    const auto p = sheet();
    CHECK(cents(inference_cost(ledger(Scenario::ZeroShot, 338'735, 4'500), p, kMini)) == 0.05);
    auto tuned = ledger(Scenario::FineTuned, 338'735, 14'683, 5'750'330);
    CHECK(cents(inference_cost(tuned, p, kFull)) == 1.49);
    CHECK(inference_cost(ledger(Scenario::ZeroShot, 0, 0), p, kMini) == 0.0);

    PricingSheet no_tuning = p;
    no_tuning.models["base-only"] = ModelRates{1.0, 2.0, std::nullopt, std::nullopt, std::nullopt};
    CHECK_THROWS_AS(inference_cost(tuned, no_tuning, "base-only"), PricingError);
    CHECK_THROWS_AS(training_cost(1, no_tuning, "base-only"), PricingError);
}

TEST_CASE("cost_per_example") {
    CHECK(round_half_away(cost_per_example(5.52, 2500), 2) == 0.22);
    CHECK(round_half_away(cost_per_example(143.76, 2500), 2) == 5.75);
    CHECK(cost_per_example(0.0, 2500) == 0.0);
    CHECK_THROWS_AS(cost_per_example(5.52, 0), ArgumentError);
}

TEST_CASE("cost is linear in tokens before rounding") {
    const auto p = sheet();
    std::mt19937_64 rng(12);
    for (int i = 0; i < 1000; ++i) {
        const std::int64_t a = static_cast<std::int64_t>(rng() % 10'000'000), b = static_cast<std::int64_t>(rng() % 10'000'000);
        CHECK(training_cost(a + b, p, kFull) ==
              doctest::Approx(training_cost(a, p, kFull) + training_cost(b, p, kFull)).epsilon(1e-12));
        const auto s = rng() % 2 ? Scenario::ZeroShot : Scenario::FineTuned;
        const auto la = ledger(s, a, b), lb = ledger(s, b, a), lab = ledger(s, a + b, a + b);
        CHECK(std::abs(inference_cost(lab, p, kMini) - inference_cost(la, p, kMini) - inference_cost(lb, p, kMini)) <
              1e-9);
    }
}

TEST_CASE("cost report columns") {
    const auto p = sheet();
    auto std_mini = ledger(Scenario::FineTuned, 338'735, 4'500, 1'841'460);
    std_mini.label = "standard";
    auto structured = ledger(Scenario::FineTuned, 338'735, 14'758, 5'750'330);
    structured.label = "structured";
    UsageLedger empty;
    empty.label = "empty";
    empty.model = kMini;

    const auto report = build_cost_report({std_mini, structured, empty}, p);
    REQUIRE(report.columns.size() == 3);
    CHECK(report.effective_date == "2025-01");
    CHECK(round_half_away(report.columns[0].mean_token_count, 2) == 76.27);
    CHECK(report.columns[0].total_tokens() == 343'235);
    CHECK(round_half_away(report.columns[1].mean_token_count, 2) == 78.55);
    const auto& z = report.columns[2];
    CHECK(z.training_cost == 0.0);
    CHECK(z.inference_cost == 0.0);
    CHECK(z.mean_token_count == 0.0);
    CHECK(z.cost_per_example_cents == 0.0);

    const std::string text = report.to_text();
    const auto row = [&](const std::string& name) { return text.find(name); };
    CHECK(row("Training tokens") < row("Cost per example"));
    CHECK(row("Cost per example") < row("Total fine-tuning cost"));
    CHECK(row("Total fine-tuning cost") < row("Total input tokens"));
    CHECK(row("Mean token count") < row("Total token count"));
    CHECK(row("Total token count") < row("Total inference cost"));
    CHECK(text.find("$5.52") != std::string::npos);
    CHECK(text.find("1,841,460") != std::string::npos);
    CHECK(report.to_json()["columns"][0]["total_tokens"] == 343'235);
}

TEST_CASE("estimated usage is labeled") {
    auto l = ledger(Scenario::ZeroShot, 100, 10);
    l.estimated = true;
    const auto report = build_cost_report({l}, sheet());
    CHECK(report.to_text().find("(estimate)") != std::string::npos);
    CHECK(report.to_json()["columns"][0]["estimated"] == true);
}

TEST_CASE("self-hosted pricing has no inference cost gap") {
    const auto p = PricingSheet::zero_rate({"llama-3.1-8b"});
    auto z = ledger(Scenario::ZeroShot, 338'735, 4'500);
    auto f = ledger(Scenario::FineTuned, 338'735, 4'500, 1'841'460);
    z.model = f.model = "llama-3.1-8b";
    CHECK(inference_cost(z, p, z.model) == inference_cost(f, p, f.model));
    CHECK(training_cost(1'841'460, p, "llama-3.1-8b") == 0.0);
}

TEST_CASE("pricing sheet validation") {
    const auto p = sheet();
    CHECK(PricingSheet::from_json(p.to_json()).to_json() == p.to_json());
    CHECK(p.rates(kFull).tuned_input == 3.75);

    json bad = p.to_json();
    bad["models"][kMini]["input"] = -0.1;
    CHECK_THROWS_AS(PricingSheet::from_json(bad), PricingError);
    bad = p.to_json();
    bad["models"][kMini].erase("tuned_output");
    CHECK_THROWS_AS(PricingSheet::from_json(bad), PricingError);
    bad = p.to_json();
    bad.erase("effective_date");
    CHECK_THROWS_AS(PricingSheet::from_json(bad), PricingError);
    CHECK_THROWS_AS(PricingSheet::load("/nonexistent/pricing.json"), IoError);
    CHECK_THROWS_AS(p.rates("nope"), PricingError);
}

TEST_CASE("ledger validation") {
    auto l = ledger(Scenario::ZeroShot, 10, 1, 5);
    CHECK_THROWS_AS(l.validate(), ArgumentError);
    l = ledger(Scenario::ZeroShot, -1, 1);
    CHECK_THROWS_AS(l.validate(), ArgumentError);
    l = ledger(Scenario::FineTuned, 10, 1, 5);
    CHECK(UsageLedger::from_json(l.to_json()).to_json() == l.to_json());
    CHECK_THROWS_AS(scenario_from_string("few-shot"), ArgumentError);
}
