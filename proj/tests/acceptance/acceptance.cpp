// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>

#include <fmt/core.h>

#include "emtune/costing.hpp"
#include "emtune/curation.hpp"
#include "emtune/error.hpp"
#include "emtune/evaluation.hpp"
#include "emtune/runner.hpp"

using namespace emtune;

namespace {

fs::path source_path(const std::string& rel) { return fs::path(EMTUNE_SOURCE_DIR) / rel; }

/// Collects failed expectations of one criterion.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok && failures_.size() < 10) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(std::string line) { notes_.push_back(std::move(line)); }

    std::size_t count() const { return count_; }
    std::size_t failed() const { return failed_; }
    const std::vector<std::string>& failures() const { return failures_; }
    const std::vector<std::string>& notes() const { return notes_; }

private:
    std::size_t count_ = 0, failed_ = 0;
    std::vector<std::string> failures_, notes_;
};

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / fmt::format("emtune-acceptance-{:x}", (std::uint64_t(rd()) << 32) | rd());
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string random_word(std::mt19937_64& rng, std::size_t max_len = 8) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string w;
    const std::size_t n = 1 + rng() % max_len;
    for (std::size_t i = 0; i < n; ++i) w += alphabet[rng() % alphabet.size()];
    return w;
}

CandidatePair title_pair(const std::string& id, const std::string& l, const std::string& r, Label label) {
    CandidatePair p;
    p.left.id = id + "L";
    p.right.id = id + "R";
    p.left.attributes = {{"title", l}};
    p.right.attributes = {{"title", r}};
    p.label = label;
    return p;
}

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol + 1e-12; }

// ---------------------------------------------------------------------------

void transfer_gain_reproduction(Check& c) {
    const json j = json::parse(read_file(source_path("tests/data/transfer_llama8b.json")));
    const TransferMatrix m = TransferMatrix::from_json(j);
    const TransferReport report = build_transfer_report(m);
    std::size_t compared = 0;
    for (const auto& row : report.rows) {
        for (const auto& agg : row.aggregates) {
            const long expected = j.at("expected_percent").at(agg.domain).at(row.name).get<long>();
            // Independent ratio of delta sums straight from the matrix.
            double num = 0, den = 0;
            for (const auto& d : m.datasets) {
                if (d.domain != agg.domain || d.name == row.source) continue;
                num += m.rows.at(&row - report.rows.data()).f1.at(d.name) - m.zero_shot.at(d.name);
                den += m.dedicated_f1(d.name) - m.zero_shot.at(d.name);
            }
            const long oracle = std::lround(num / den * 100.0);
            c.expect(agg.percent.has_value(), fmt::format("{} / {}: aggregate undefined", row.name, agg.domain));
            if (!agg.percent) continue;
            c.expect(*agg.percent == oracle,
                     fmt::format("{} / {}: {}% vs ratio-of-sums oracle {}%", row.name, agg.domain, *agg.percent, oracle));
            c.expect(std::labs(*agg.percent - expected) <= 1,
                     fmt::format("{} / {}: {}% vs expected {}%", row.name, agg.domain, *agg.percent, expected));
            ++compared;
        }
    }
    c.expect(compared == 12, fmt::format("{} aggregates compared, expected 12", compared));
    c.note("12 domain aggregates, each within 1 point of the expected value");
}

void cost_grid_reproduction(Check& c) {
    const PricingSheet sheet = PricingSheet::load(source_path("data/pricing/openai-2025-01.json"));
    const std::string mini = "gpt-4o-mini-2024-07-18", full = "gpt-4o-2024-08-06";
    struct Column {
        std::string label, model;
        Scenario scenario;
        std::int64_t train, in, out;
        double train_cost, per_example, infer_cost, mean;
    };
    const std::vector<Column> table = {
        {"zero-shot", mini, Scenario::ZeroShot, 0, 338735, 4500, 0, 0, 0.05, 76.27},
        {"zero-shot", full, Scenario::ZeroShot, 0, 338735, 4626, 0, 0, 0.89, 76.30},
        {"standard", mini, Scenario::FineTuned, 1841460, 338735, 4500, 5.52, 0.22, 0.11, 76.27},
        {"standard", full, Scenario::FineTuned, 1841460, 338735, 4500, 46.04, 1.84, 1.34, 76.27},
        {"structured", mini, Scenario::FineTuned, 5750330, 338735, 14758, 17.25, 0.69, 0.12, 78.55},
        {"structured", full, Scenario::FineTuned, 5750330, 338735, 14683, 143.76, 5.75, 1.49, 78.54},
    };
    std::vector<UsageLedger> ledgers;
    for (const auto& col : table) {
        UsageLedger l;
        l.label = col.label;
        l.model = col.model;
        l.scenario = col.scenario;
        l.training_tokens = col.train;
        l.input_tokens = col.in;
        l.output_tokens = col.out;
        l.training_examples = col.scenario == Scenario::FineTuned ? 2500 : 0;
        l.inference_examples = 4500;
        ledgers.push_back(l);
    }
    const CostReport report = build_cost_report(ledgers, sheet);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& want = table[i];
        const auto& got = report.columns[i];
        const std::string tag = want.label + "/" + want.model;
        c.expect(near(got.training_cost, want.train_cost, 0.01),
                 fmt::format("{} training ${:.4f} vs ${:.2f}", tag, got.training_cost, want.train_cost));
        c.expect(near(got.cost_per_example_cents, want.per_example, 0.01),
                 fmt::format("{} per example {:.4f}c vs {:.2f}c", tag, got.cost_per_example_cents, want.per_example));
        c.expect(near(got.inference_cost, want.infer_cost, 0.01),
                 fmt::format("{} inference ${:.4f} vs ${:.2f}", tag, got.inference_cost, want.infer_cost));
        c.expect(near(got.mean_token_count, want.mean, 0.01),
                 fmt::format("{} mean tokens {:.4f} vs {:.2f}", tag, got.mean_token_count, want.mean));
        // Values rounded for display equal the expected cells.
        c.expect(round_half_away(got.training_cost, 2) == want.train_cost, tag + " displayed training cost");
        c.expect(round_half_away(got.inference_cost, 2) == want.infer_cost, tag + " displayed inference cost");
    }
    c.note("24 dollar figures and 6 mean token counts");
}

void metrics_oracle(Check& c) {
    using V = Decision::Value;
    std::mt19937_64 rng(101);
    for (int round = 0; round < 1000; ++round) {
        const std::size_t n = rng() % 10001;
        std::vector<Decision> d(n);
        std::vector<Label> g(n);
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0, up = 0, un = 0;
        // Skewed vectors exercise the empty-denominator paths.
        const unsigned mode = rng() % 5;
        for (std::size_t i = 0; i < n; ++i) {
            V v = static_cast<V>(rng() % 3);
            if (mode == 1) v = V::NonMatch;
            if (mode == 2) v = V::Unparsed;
            d[i].value = v;
            if (v != V::Unparsed) d[i].span = Decision::Span{0, v == V::Match ? "yes" : "no"};
            g[i] = (mode == 3 || rng() % 2) ? Label::NonMatch : Label::Match;
            const bool pos = g[i] == Label::Match;
            if (v == V::Unparsed) (pos ? up : un)++;
            else if (v == V::Match) (pos ? tp : fp)++;
            else (pos ? fn : tn)++;
        }
        const MetricsReport r = compute_metrics(d, g);
        const bool counts = r.tp == tp && r.fp == fp && r.fn == fn && r.tn == tn && r.unparsed_positive == up &&
                            r.unparsed_negative == un && r.evaluated() == n;
        c.expect(counts, fmt::format("round {}: confusion counts differ", round));
        const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double rc = tp + fn + up ? double(tp) / double(tp + fn + up) : 0.0;
        const double f = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
        c.expect(near(r.precision, p, 1e-12) && near(r.recall, rc, 1e-12) && near(r.f1, f, 1e-12),
                 fmt::format("round {}: scores differ", round));
    }
    // Degenerate conventions.
    const auto none = compute_metrics({}, {});
    c.expect(none.precision == 0 && none.recall == 0 && none.f1 == 0, "empty input scores 0");
    Decision no;
    no.value = V::NonMatch;
    no.span = Decision::Span{0, "no"};
    const auto zero_pred = compute_metrics({no, no}, {Label::Match, Label::NonMatch});
    c.expect(zero_pred.precision == 0 && zero_pred.recall == 0 && zero_pred.f1 == 0, "no predicted positives");
    bool threw = false;
    try {
        compute_metrics({no}, {});
    } catch (const ArgumentError&) {
        threw = true;
    }
    c.expect(threw, "length mismatch raises");
    c.note("1000 randomized vectors up to 10,000 pairs");
}

void parser_properties(Check& c) {
    using V = Decision::Value;
    struct Case {
        const char* raw;
        V value;
        std::size_t offset;
    };
    constexpr std::size_t kNone = std::string::npos;
    const std::vector<Case> table = {
        {"Yes", V::Match, 0},
        {"No", V::NonMatch, 0},
        {"yes", V::Match, 0},
        {"no", V::NonMatch, 0},
        {"YES.", V::Match, 0},
        {"NO!", V::NonMatch, 0},
        {"Yes, the two offers match.", V::Match, 0},
        {"No. Different storage capacity.", V::NonMatch, 0},
        {"These records are identical.", V::Unparsed, kNone},
        {"Yes, but no warranty match", V::Match, 0},
        {"No, although yes on brand", V::NonMatch, 0},
        {"Answer: yes", V::Match, 8},
        {"Answer: No", V::NonMatch, 8},
        {"I think no, not yes", V::NonMatch, 8},
        {"I'd say yes; no doubt", V::Match, 8},
        {"yesterday", V::Unparsed, kNone},
        {"nobody", V::Unparsed, kNone},
        {"eyes", V::Unparsed, kNone},
        {"know", V::Unparsed, kNone},
        {"nope", V::Unparsed, kNone},
        {"yes_no", V::Unparsed, kNone},
        {"no_yes", V::Unparsed, kNone},
        {"yes1", V::Unparsed, kNone},
        {"1no", V::Unparsed, kNone},
        {"eyes no", V::NonMatch, 5},
        {"nobody yes", V::Match, 7},
        {"yesno no", V::NonMatch, 6},
        {"noyes yes", V::Match, 6},
        {"(yes)", V::Match, 1},
        {"[no]", V::NonMatch, 1},
        {"'Yes'", V::Match, 1},
        {"\"no\"", V::NonMatch, 1},
        {"-yes-", V::Match, 1},
        {"yes-no", V::Match, 0},
        {"no-yes", V::NonMatch, 0},
        {"\nyes\n", V::Match, 1},
        {"\tNo\t", V::NonMatch, 1},
        {"", V::Unparsed, kNone},
        {"   ", V::Unparsed, kNone},
        {"Maybe.", V::Unparsed, kNone},
        {"Same product", V::Unparsed, kNone},
        {"The answer is yES", V::Match, 14},
        {"nO match", V::NonMatch, 0},
        {"Match: yes. Non-match: no.", V::Match, 7},
        {"non-match", V::Unparsed, kNone},
        {"Yesss", V::Unparsed, kNone},
        {"noo", V::Unparsed, kNone},
        {"ja/yes", V::Match, 3},
        {"é no", V::NonMatch, 3},
        {"yes\xC3\xA9", V::Match, 0},
    };
    std::size_t n = 0;
    for (const auto& t : table) {
        const Decision d = parse_decision(t.raw);
        ++n;
        bool ok = d.value == t.value && d.span.has_value() == (t.value != V::Unparsed);
        if (ok && d.span) ok = d.span->offset == t.offset && std::string(t.raw).substr(d.span->offset, d.span->text.size()) == d.span->text;
        c.expect(ok, fmt::format("case '{}': got {}", t.raw, to_string(d.value)));
    }
    c.expect(n == 50, fmt::format("{} table cases", n));

    // Fuzzed strings without a standalone "yes" never parse as a match.
    std::mt19937_64 rng(77);
    const std::string alphabet = "yesnoYESNO _-.,!\n1";
    std::size_t fuzzed = 0, false_matches = 0;
    while (fuzzed < 10000) {
        std::string s;
        const std::size_t len = rng() % 40;
        for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
        // Token scan for a standalone yes.
        bool has_yes = false;
        std::string tok;
        for (std::size_t i = 0; i <= s.size(); ++i) {
            const char ch = i < s.size() ? s[i] : ' ';
            if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
                tok += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            } else {
                has_yes = has_yes || tok == "yes";
                tok.clear();
            }
        }
        if (has_yes) continue;
        ++fuzzed;
        if (parse_decision(s).value == V::Match) ++false_matches;
    }
    c.expect(false_matches == 0, fmt::format("{} false matches on yes-free strings", false_matches));
    c.note("50 table cases, 10,000 fuzzed yes-free strings");
}

bool ordered_subset(const std::vector<CandidatePair>& sub, const std::vector<CandidatePair>& all) {
    std::size_t j = 0;
    for (const auto& p : sub) {
        while (j < all.size() && !(all[j] == p)) ++j;
        if (j == all.size()) return false;
        ++j;
    }
    return true;
}

void filtration_fixtures(Check& c) {
    const Dataset d = load_dataset(source_path("tests/data/wdc-small/manifest.json"));
    const auto& train = d.split("train");
    c.expect(train.size() == 2500, fmt::format("fixture has {} train pairs", train.size()));

    std::vector<PredictionRecord> preds;
    for (const auto& row : read_jsonl(source_path("tests/data/wdc-small/predictions.jsonl"))) {
        const auto stored = PredictionRecord::from_json(row);
        preds.push_back(make_prediction(stored.ref, stored.raw, train.at(stored.ref.index).label));
    }
    const auto ef = error_filter(d, preds);
    c.expect(ef.split("train").size() == 2006, fmt::format("error filter kept {}", ef.split("train").size()));

    std::vector<RelevancyJudgment> judgments;
    for (const auto& row : read_jsonl(source_path("tests/data/wdc-small/judgments.jsonl"))) {
        const auto stored = RelevancyJudgment::from_json(row);
        judgments.push_back(parse_relevancy(stored.ref, stored.raw));
    }
    const auto rf = relevancy_filter(d, judgments);
    c.expect(rf.split("train").size() == 608, fmt::format("relevancy filter kept {}", rf.split("train").size()));

    std::mt19937_64 rng(55);
    const std::vector<std::string> answers = {"Yes.", "No.", "unclear", "yes, no", "NO match"};
    const std::vector<std::string> verdicts = {"keep", "discard", "Yes", "no", "hmm", "KEEP it"};
    for (int round = 0; round < 200; ++round) {
        std::vector<CandidatePair> pairs;
        const std::size_t n = rng() % 80;
        for (std::size_t i = 0; i < n; ++i)
            pairs.push_back(title_pair(std::to_string(i), random_word(rng), random_word(rng), rng() % 2 ? Label::Match : Label::NonMatch));
        Dataset t;
        t.name = "r";
        t.schema = {"title"};
        t.serialization = SerializationRule::single("title");
        t.splits["train"] = pairs;
        t.splits["test"] = {title_pair("t", "a", "b", Label::Match)};

        std::vector<PredictionRecord> p;
        std::vector<RelevancyJudgment> r;
        std::size_t correct = 0, keep = 0;
        for (std::size_t i = 0; i < n; ++i) {
            p.push_back(make_prediction({"r", "train", i}, answers[rng() % answers.size()], pairs[i].label));
            correct += p.back().correct.value_or(false);
            r.push_back(parse_relevancy({"r", "train", i}, verdicts[rng() % verdicts.size()]));
            keep += r.back().verdict == Verdict::Keep;
        }
        const auto a = error_filter(t, p);
        const auto b = relevancy_filter(t, r);
        c.expect(a.split("train").size() == correct, fmt::format("round {}: error filter size", round));
        c.expect(b.split("train").size() == keep, fmt::format("round {}: relevancy filter size", round));
        c.expect(ordered_subset(a.split("train"), pairs) && ordered_subset(b.split("train"), pairs),
                 fmt::format("round {}: output is not an ordered subset with unchanged labels", round));
        c.expect(a.split("test") == t.split("test") && b.split("test") == t.split("test"),
                 fmt::format("round {}: other splits changed", round));
    }
    c.note("2006 and 608 from WDC-small fixtures, 200 randomized instances");
}

void selection_oracle(Check& c) {
    BackendConfig cfg;
    cfg.kind = HeuristicMock{};
    auto embedder = make_backend(cfg);
    const auto rule = SerializationRule::single("title");
    std::mt19937_64 rng(66);
    for (int round = 0; round < 100; ++round) {
        std::vector<CandidatePair> errors, pool;
        auto text = [&] { return random_word(rng, 2) + " " + random_word(rng, 2) + " " + random_word(rng, 3); };
        const std::size_t ne = rng() % 6, np = 1 + rng() % 50;
        for (std::size_t i = 0; i < ne; ++i) errors.push_back(title_pair("e" + std::to_string(i), text(), text(), Label::Match));
        std::set<std::string> seen;
        for (std::size_t i = 0; i < np; ++i) {
            auto p = title_pair("p" + std::to_string(i), text(), text(), Label::NonMatch);
            if (seen.insert(pair_text(p, rule)).second) pool.push_back(p);
        }
        const std::size_t k = rng() % (pool.size() + 1);

        // Brute force: all cosines, then the round-robin pick.
        std::vector<std::vector<double>> sim(ne, std::vector<double>(pool.size()));
        for (std::size_t e = 0; e < ne; ++e) {
            const auto ev = mock_embedding(pair_text(errors[e], rule)).values;
            for (std::size_t q = 0; q < pool.size(); ++q) sim[e][q] = cosine(ev, mock_embedding(pair_text(pool[q], rule)).values);
        }
        std::vector<std::size_t> expected;
        std::vector<bool> taken(pool.size(), false);
        while (ne > 0 && expected.size() < k) {
            for (std::size_t e = 0; e < ne && expected.size() < k; ++e) {
                std::size_t best = pool.size();
                for (std::size_t q = 0; q < pool.size(); ++q)
                    if (!taken[q] && (best == pool.size() || sim[e][q] > sim[e][best])) best = q;
                taken[best] = true;
                expected.push_back(best);
            }
        }
        const auto got = select_by_error_similarity(errors, pool, *embedder, k, {}, rule);
        bool same = got.size() == expected.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].left.id == pool[expected[i]].left.id;
        c.expect(same, fmt::format("round {}: selection differs from the oracle", round));
    }
    c.note("100 randomized instances, pools up to 50 pairs");
}

void end_to_end_pipeline(Check& c) {
    const ExperimentConfig cfg = ExperimentConfig::load(source_path("data/toy/experiment.json"));
    std::vector<std::string> plan;
    for (Stage s : cfg.plan) plan.emplace_back(to_string(s));
    c.expect(plan == std::vector<std::string>{"ingest", "explain", "filter", "build", "finetune", "predict", "evaluate",
                                              "transfer", "cost"},
             "plan differs from ingest..cost");
    c.expect(cfg.representation == RepresentationVariant::Structured, "representation is not structured");
    c.expect(cfg.filter_kind == "error", "filter is not error-based");
    for (const auto& [name, b] : cfg.backends) c.expect(b.is_mock(), fmt::format("backend {} is not a mock", name));
    bool has_replay = false, has_heuristic = false;
    for (const auto& [_, b] : cfg.backends) {
        has_replay = has_replay || std::holds_alternative<ReplayMock>(b.kind);
        has_heuristic = has_heuristic || std::holds_alternative<HeuristicMock>(b.kind);
    }
    c.expect(has_replay && has_heuristic, "needs mock-heuristic and mock-replay backends");
    const Dataset toy = load_dataset(cfg.datasets.at(cfg.train_dataset));
    std::size_t pairs = 0;
    for (const auto& [_, s] : toy.splits) pairs += s.size();
    c.expect(pairs == 60, fmt::format("toy dataset has {} pairs", pairs));

    TempDir tmp;
    std::vector<std::string> hashes;
    for (const char* id : {"first", "second"}) {
        RunOptions o;
        o.runs_dir = tmp.path;
        o.run_id = id;
        const RunResult r = run_experiment(cfg, o);
        c.expect(r.complete(), fmt::format("{} run incomplete", id));
        for (const auto& s : r.manifest.stages) {
            c.expect(s.status == "done", fmt::format("{} run: stage {} is {}", id, s.stage, s.status));
            for (const auto& a : s.artifacts) c.expect(fs::exists(r.run_dir / a), fmt::format("missing artifact {}", a));
        }
        hashes.push_back(hash_tree(r.run_dir / "artifacts"));
    }
    c.expect(hashes[0] == hashes[1], "artifact hashes differ between the two runs");
    c.note(fmt::format("9 stages done twice, artifact tree {}", hashes[0].substr(0, 16)));
}

void round_trips(Check& c) {
    std::mt19937_64 rng(88);
    for (int i = 0; i < 500; ++i) {
        StructuredExplanation e;
        const int n = 1 + static_cast<int>(rng() % 6);
        for (int k = 0; k < n; ++k)
            e.comparisons.push_back({"attr" + std::to_string(k), rng() % 5 ? random_word(rng) : "", random_word(rng) + " x",
                                     static_cast<double>(rng() % 101) / 100.0, static_cast<double>(rng() % 101) / 100.0});
        e.decision = rng() % 2 ? Label::Match : Label::NonMatch;
        const RepresentationVariant v = RepresentationVariant::Structured;
        bool ok = false;
        try {
            ok = parse_structured_explanation(render_structured_block(e, v)) == e;
        } catch (const Error&) {
        }
        c.expect(ok, fmt::format("explanation {} does not round-trip", i));
    }

    TempDir tmp;
    const std::vector<std::string> pieces = {"a", "b,c", "q\"d", "two\nlines", "ünï", "x y", "", "semi;colon"};
    for (int i = 0; i < 100; ++i) {
        Dataset d;
        d.name = "rt" + std::to_string(i);
        d.domain = rng() % 2 ? "product" : "scholar";
        const std::size_t na = 1 + rng() % 4;
        for (std::size_t a = 0; a < na; ++a) d.schema.push_back("attr" + std::to_string(a));
        d.serialization = na == 1 ? SerializationRule::single(d.schema[0]) : SerializationRule::concat(d.schema);
        for (auto split : kSplitNames) {
            if (rng() % 4 == 0) continue;
            auto& pairs = d.splits[std::string(split)];
            const std::size_t n = rng() % 15;
            for (std::size_t k = 0; k < n; ++k) {
                CandidatePair p;
                p.left.id = "l" + std::to_string(k);
                p.right.id = "r" + std::to_string(k);
                for (const auto& attr : d.schema) {
                    p.left.attributes.emplace_back(attr, trim(pieces[rng() % pieces.size()] + random_word(rng)));
                    p.right.attributes.emplace_back(attr, rng() % 5 ? trim(random_word(rng) + pieces[rng() % pieces.size()]) : "");
                }
                p.label = rng() % 3 ? Label::NonMatch : Label::Match;
                pairs.push_back(std::move(p));
            }
        }
        const fs::path dir = tmp.path / d.name;
        write_dataset(d, dir);
        c.expect(load_dataset(dir / "manifest.json") == d, fmt::format("dataset {} does not round-trip", i));
    }
    c.note("500 explanations, 100 datasets");
}

void export_schema(Check& c) {
    const auto hosted = FineTuneConfig::hosted_defaults();
    c.expect(hosted.epochs == 10 && hosted.learning_rate_multiplier == 1.8 && hosted.batch_size == 16,
             "hosted defaults are not 10 / 1.8 / 16");
    const auto open = FineTuneConfig::open_weight_defaults();
    c.expect(open.lora && open.lora->alpha == 16 && open.lora->dropout == 0.1 && open.lora->rank == 64 &&
                 open.lora->learning_rate == 2e-4,
             "LoRA defaults are not 16 / 0.1 / 64 / 2e-4");
    const json oj = open.to_json();
    c.expect(FineTuneConfig::from_json(oj).to_json() == oj, "open-weight config does not round-trip");

    const ExperimentConfig cfg = ExperimentConfig::load(source_path("data/toy/experiment.json"));
    TempDir tmp;
    RunOptions o;
    o.runs_dir = tmp.path;
    o.run_id = "export";
    o.stop_after = Stage::Build;
    const RunResult r = run_experiment(cfg, o);
    const fs::path build = r.run_dir / "artifacts/build";
    const json hp = json::parse(read_file(build / "hyperparameters.json"));
    c.expect(hp == json{{"epochs", 10}, {"learning_rate_multiplier", 1.8}, {"batch_size", 16}},
             "exported hyperparameters: " + hp.dump());

    // Upload file: one {"messages": [...]} object per line, ending with the assistant answer.
    std::size_t lines = 0;
    bool ok = true;
    try {
        validate_training_file(build / "train.jsonl");
    } catch (const ValidationError& e) {
        ok = false;
        c.expect(false, e.what());
    }
    for (const auto& row : read_jsonl(build / "train.jsonl")) {
        ++lines;
        ok = ok && row.size() == 1 && row.contains("messages") && row["messages"].back()["role"] == "assistant";
        const std::string answer = row["messages"].back()["content"];
        ok = ok && (answer.rfind("Yes", 0) == 0 || answer.rfind("No", 0) == 0);
    }
    c.expect(ok && lines > 0, "training file schema");
    c.note(fmt::format("{} exported training records; absolute F1 of hosted and GPU-tuned models is not reproduced",
                       lines));
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        std::string name;
        double budget_s;
        std::function<void(Check&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "transfer-gain reproduction", 1.0, transfer_gain_reproduction},
        {2, "cost-grid reproduction", 1.0, cost_grid_reproduction},
        {3, "metrics oracle", 10.0, metrics_oracle},
        {4, "decision parser properties", 5.0, parser_properties},
        {5, "filtration fixtures", 10.0, filtration_fixtures},
        {6, "selection oracle", 10.0, selection_oracle},
        {7, "end-to-end mock pipeline", 60.0, end_to_end_pipeline},
        {8, "round-trip properties", 10.0, round_trips},
        {9, "fine-tune export schema", 10.0, export_schema},
    };

    int failed = 0;
    for (const auto& cr : criteria) {
        Check c;
        const auto t0 = std::chrono::steady_clock::now();
        std::string crash;
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            crash = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs < cr.budget_s;
        const bool pass = crash.empty() && c.failed() == 0 && in_budget;
        failed += !pass;
        std::cout << fmt::format("[{}] {}. {:<28} {:>5} checks  {:7.3f}s (budget {}s)\n", pass ? "PASS" : "FAIL", cr.id,
                                 cr.name, c.count(), secs, cr.budget_s);
        for (const auto& n : c.notes()) std::cout << "         " << n << "\n";
        if (!crash.empty()) std::cout << "         exception: " << crash << "\n";
        if (!in_budget) std::cout << "         over the runtime budget\n";
        for (const auto& f : c.failures()) std::cout << "         failed: " << f << "\n";
        if (c.failed() > c.failures().size())
            std::cout << fmt::format("         ... {} more\n", c.failed() - c.failures().size());
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed ? 1 : 0;
}
