#include "emtune/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <unordered_set>

#include <fmt/core.h>

#include "emtune/error.hpp"

namespace emtune {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

/// Whole words of `text`, lower-cased, with their offsets.
std::vector<std::pair<std::size_t, std::string>> words(std::string_view text) {
    std::vector<std::pair<std::size_t, std::string>> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_word_char(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) ++i;
        out.emplace_back(start, to_lower(text.substr(start, i - start)));
    }
    return out;
}

PairRef ref_from_json(const json& j) {
    return PairRef{j.value("dataset", std::string()), j.value("split", std::string("train")),
                   j.at("index").get<std::size_t>()};
}

json ref_to_json(const PairRef& r) { return json{{"dataset", r.dataset}, {"split", r.split}, {"index", r.index}}; }

/// Position of each train index in `refs`; throws unless every index appears exactly once.
template <typename T>
std::vector<const T*> by_index(const std::vector<T>& items, std::size_t n, std::string_view what) {
    if (items.size() != n)
        throw ArgumentError(fmt::format("{} {} for {} train pairs", items.size(), what, n));
    std::vector<const T*> out(n, nullptr);
    for (const auto& it : items) {
        if (it.ref.index >= n) throw ArgumentError(fmt::format("{} refers to train index {} of {}", what, it.ref.index, n));
        if (out[it.ref.index]) throw ArgumentError(fmt::format("train index {} has two {}", it.ref.index, what));
        out[it.ref.index] = &it;
    }
    return out;
}

void require_labeled(const std::vector<CandidatePair>& pairs, std::string_view what) {
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].label == Label::Unlabeled)
            throw ArgumentError(fmt::format("{}: pair {} is unlabeled", what, i));
}

std::string join_failures(const BatchResult& r) {
    std::string out;
    for (std::size_t i = 0; i < r.failures.size() && i < 5; ++i)
        out += fmt::format("{}[{}] {}", i ? "; " : "", r.failures[i].index, r.failures[i].message);
    if (r.failures.size() > 5) out += fmt::format("; ... {} more", r.failures.size() - 5);
    return out;
}

}  // namespace

std::string PairRef::to_string() const { return fmt::format("{}/{}/{}", dataset, split, index); }

// ---------------------------------------------------------------------------
// Predictions

json PredictionRecord::to_json() const {
    return json{{"ref", ref_to_json(ref)},
                {"raw", raw},
                {"decision", emtune::to_string(decision)},
                {"correct", correct ? json(*correct) : json(nullptr)}};
}

PredictionRecord PredictionRecord::from_json(const json& j) {
    PredictionRecord p;
    try {
        p.ref = ref_from_json(j.at("ref"));
        p.raw = j.value("raw", std::string());
        const std::string d = j.at("decision").get<std::string>();
        if (d == "match")
            p.decision = Decision::Value::Match;
        else if (d == "non-match")
            p.decision = Decision::Value::NonMatch;
        else if (d == "unparsed")
            p.decision = Decision::Value::Unparsed;
        else
            throw ParseError(fmt::format("unknown decision '{}'", d));
        if (j.contains("correct") && !j["correct"].is_null()) p.correct = j["correct"].get<bool>();
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("malformed prediction record: {}", e.what()));
    }
    if (p.decision == Decision::Value::Unparsed && p.correct)
        throw ParseError("unparsed prediction cannot carry a correctness flag");
    return p;
}

PredictionRecord make_prediction(PairRef ref, std::string raw, Label gold) {
    PredictionRecord p;
    p.ref = std::move(ref);
    p.decision = parse_decision(raw).value;
    p.raw = std::move(raw);
    if (p.decision != Decision::Value::Unparsed && gold != Label::Unlabeled)
        p.correct = (p.decision == Decision::Value::Match) == (gold == Label::Match);
    return p;
}

std::vector<PredictionRecord> predict_pairs(Backend& backend, const Dataset& dataset, const std::string& split,
                                            const BatchOptions& options, const PromptTemplate& tmpl, Usage* usage) {
    const auto& pairs = dataset.split(split);
    std::vector<Conversation> requests;
    requests.reserve(pairs.size());
    for (const auto& p : pairs) requests.push_back(render_match_prompt(p, dataset.serialization, tmpl));
    const BatchResult res = batch_complete(backend, requests, options);
    if (!res.ok())
        throw GatewayError(fmt::format("{} of {} prediction requests failed: {}", res.failures.size(), pairs.size(),
                                       join_failures(res)),
                           res.failures.front().attempts);
    if (usage) *usage += res.total_usage();
    std::vector<PredictionRecord> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        out.push_back(make_prediction({dataset.name, split, i}, res.completions[i]->text, pairs[i].label));
    return out;
}

std::vector<Decision> decisions_of(const std::vector<PredictionRecord>& predictions) {
    std::vector<Decision> out;
    out.reserve(predictions.size());
    for (const auto& p : predictions) out.push_back(parse_decision(p.raw));
    return out;
}

// ---------------------------------------------------------------------------
// Relevancy

std::string_view to_string(Verdict v) { return v == Verdict::Keep ? "keep" : "discard"; }

json RelevancyJudgment::to_json() const {
    return json{{"ref", ref_to_json(ref)}, {"verdict", emtune::to_string(verdict)}, {"raw", raw}, {"defaulted", defaulted}};
}

RelevancyJudgment RelevancyJudgment::from_json(const json& j) {
    try {
        if (j.contains("verdict")) {
            RelevancyJudgment r;
            r.ref = ref_from_json(j.at("ref"));
            r.raw = j.value("raw", std::string());
            const std::string v = j["verdict"].get<std::string>();
            if (v != "keep" && v != "discard") throw ParseError(fmt::format("unknown verdict '{}'", v));
            r.verdict = v == "keep" ? Verdict::Keep : Verdict::Discard;
            r.defaulted = j.value("defaulted", false);
            return r;
        }
        return parse_relevancy(ref_from_json(j.at("ref")), j.at("raw").get<std::string>());
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("malformed relevancy judgment: {}", e.what()));
    }
}

RelevancyJudgment parse_relevancy(PairRef ref, std::string raw) {
    RelevancyJudgment r;
    r.ref = std::move(ref);
    r.defaulted = true;
    for (const auto& [_, w] : words(raw)) {
        if (w == "keep" || w == "yes") {
            r.verdict = Verdict::Keep;
            r.defaulted = false;
            break;
        }
        if (w == "discard" || w == "no") {
            r.verdict = Verdict::Discard;
            r.defaulted = false;
            break;
        }
    }
    r.raw = std::move(raw);
    return r;
}

std::vector<RelevancyJudgment> judge_relevancy(Backend& backend, const Dataset& dataset, const BatchOptions& options,
                                               const TemplateSet& templates, Usage* usage) {
    const auto& pairs = dataset.split("train");
    std::vector<Conversation> requests;
    for (const auto& p : pairs) requests.push_back(render_relevancy_prompt(p, dataset.serialization, templates));
    const BatchResult res = batch_complete(backend, requests, options);
    if (!res.ok())
        throw GatewayError(fmt::format("{} of {} relevancy requests failed: {}", res.failures.size(), pairs.size(),
                                       join_failures(res)),
                           res.failures.front().attempts);
    if (usage) *usage += res.total_usage();
    std::vector<RelevancyJudgment> out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        out.push_back(parse_relevancy({dataset.name, "train", i}, res.completions[i]->text));
    return out;
}

// ---------------------------------------------------------------------------
// Filters

Dataset error_filter(const Dataset& trainset, const std::vector<PredictionRecord>& predictions) {
    const auto& train = trainset.split("train");
    const auto idx = by_index(predictions, train.size(), "predictions");
    Dataset out = trainset;
    auto& kept = out.split("train");
    kept.clear();
    for (std::size_t i = 0; i < train.size(); ++i)
        if (idx[i]->correct.value_or(false)) kept.push_back(train[i]);
    return out;
}

Dataset relevancy_filter(const Dataset& trainset, const std::vector<RelevancyJudgment>& judgments) {
    const auto& train = trainset.split("train");
    const auto idx = by_index(judgments, train.size(), "judgments");
    Dataset out = trainset;
    auto& kept = out.split("train");
    kept.clear();
    for (std::size_t i = 0; i < train.size(); ++i)
        if (idx[i]->verdict == Verdict::Keep) kept.push_back(train[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find("|||", start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 3;
    }
    return out;
}

/// Drops list markers like "1.", "2)", "-", "*" and surrounding quotes.
std::string strip_marker(std::string s) {
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = trim(s.substr(i + 1));
    else if (!s.empty() && (s[0] == '-' || s[0] == '*')) s = trim(s.substr(1));
    return s;
}

std::string unquote(std::string s) {
    if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) return s.substr(1, s.size() - 2);
    return s;
}

EntityRecord generated_entity(const std::string& id, const std::string& text, const EntityRecord& like,
                              const SerializationRule& rule) {
    EntityRecord r;
    r.id = id;
    for (const auto& [name, _] : like.attributes) r.set(name, "");
    for (const auto& a : rule.attributes)
        if (!r.find(a)) r.set(a, "");
    if (rule.mode == SerializationRule::Mode::Concat && rule.attributes.size() > 1) {
        std::vector<std::string> parts;
        std::size_t start = 0;
        for (;;) {
            const std::size_t pos = text.find(rule.delimiter, start);
            parts.push_back(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + rule.delimiter.size();
        }
        if (parts.size() == rule.attributes.size()) {
            for (std::size_t i = 0; i < parts.size(); ++i) r.set(rule.attributes[i], parts[i]);
            return r;
        }
    }
    r.set(rule.attributes.front(), text);
    return r;
}

}  // namespace

std::vector<CandidatePair> parse_generated(std::string_view raw, const CandidatePair& seed,
                                           const SerializationRule& rule, std::vector<GenerationDiagnostic>* diagnostics) {
    std::vector<CandidatePair> out;
    std::vector<GenerationDiagnostic> diags;
    std::size_t line_no = 0, start = 0;
    const std::string base = fmt::format("gen:{}:{}", seed.left.id, seed.right.id);
    while (start <= raw.size()) {
        const std::size_t nl = raw.find('\n', start);
        const std::string line = trim(raw.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        ++line_no;
        start = nl == std::string_view::npos ? raw.size() + 1 : nl + 1;
        if (line.empty() || line.starts_with("```")) continue;

        const std::string body = strip_marker(line);
        const auto fields = split_fields(body);
        const std::string head = to_lower(fields.front());
        const bool labelled = head == "match" || head == "nonmatch" || head == "non-match";
        if (fields.size() == 1 && !labelled) {
            const auto w = words(body);
            const bool starts_with_label =
                !w.empty() && w.front().first == 0 && (w.front().second == "match" || w.front().second == "nonmatch");
            if (!starts_with_label) continue;  // chatter
        }
        auto fail = [&](std::string reason) { diags.push_back({line_no, line, std::move(reason)}); };
        if (fields.size() != 3) {
            fail(fmt::format("expected 3 fields separated by |||, found {}", fields.size()));
            continue;
        }
        if (!labelled) {
            fail(fmt::format("unknown label '{}'", fields[0]));
            continue;
        }
        const std::string left = unquote(fields[1]), right = unquote(fields[2]);
        if (left.empty() || right.empty()) {
            fail("empty entity description");
            continue;
        }
        const std::size_t k = out.size();
        CandidatePair p;
        p.left = generated_entity(fmt::format("{}:{}:l", base, k), left, seed.left, rule);
        p.right = generated_entity(fmt::format("{}:{}:r", base, k), right, seed.right, rule);
        p.label = head == "match" ? Label::Match : Label::NonMatch;
        p.provenance = Provenance::Synthetic;
        out.push_back(std::move(p));
    }
    if (diagnostics) *diagnostics = diags;
    if (out.empty())
        throw GenerationParseError(
            fmt::format("no generated pair could be parsed ({} malformed segments)", diags.size()), std::string(raw));
    return out;
}

json GeneratedBatch::to_json() const {
    json ps = json::array();
    for (const auto& p : pairs) {
        ps.push_back({{"id_left", p.left.id},
                      {"id_right", p.right.id},
                      {"label", emtune::to_string(p.label)},
                      {"left", p.left.attributes},
                      {"right", p.right.attributes}});
    }
    json ds = json::array();
    for (const auto& d : diagnostics) ds.push_back({{"line", d.line}, {"text", d.text}, {"reason", d.reason}});
    json j = {{"seed", seed_ref},          {"strategy", emtune::to_string(strategy)}, {"pairs", ps},
              {"raw", raw},                {"diagnostics", ds},                       {"composition_ok", composition_ok}};
    if (!error.empty()) j["error"] = error;
    return j;
}

std::vector<GeneratedBatch> generate_examples(Backend& backend, const Dataset& seedset, const GenerationOptions& options,
                                              Usage* usage) {
    const auto& train = seedset.split("train");
    require_labeled(train, "generation seeds");
    std::mt19937_64 rng(options.seed);
    std::vector<Conversation> requests;
    for (std::size_t i = 0; i < train.size(); ++i) {
        std::vector<CandidatePair> demos;
        if (options.strategy == GenerationStrategy::Demonstration) {
            std::vector<std::size_t> others;
            for (std::size_t j = 0; j < train.size(); ++j)
                if (j != i) others.push_back(j);
            if (others.size() < kGenerationDemonstrations)
                throw ArgumentError(fmt::format("demonstration-based generation needs {} other train pairs, found {}",
                                                kGenerationDemonstrations, others.size()));
            std::shuffle(others.begin(), others.end(), rng);
            others.resize(kGenerationDemonstrations);
            std::sort(others.begin(), others.end());
            for (auto j : others) demos.push_back(train[j]);
        }
        requests.push_back(
            render_generation_prompt(train[i], seedset.serialization, options.strategy, demos, options.templates));
    }
    const BatchResult res = batch_complete(backend, requests, options.batch);
    if (usage) *usage += res.total_usage();

    std::vector<GeneratedBatch> out;
    for (std::size_t i = 0; i < train.size(); ++i) {
        GeneratedBatch b;
        b.seed_ref = PairRef{seedset.name, "train", i}.to_string();
        b.strategy = options.strategy;
        if (!res.completions[i]) {
            b.error = "request failed";
            b.composition_ok = false;
            out.push_back(std::move(b));
            continue;
        }
        b.raw = res.completions[i]->text;
        try {
            b.pairs = parse_generated(b.raw, train[i], seedset.serialization, &b.diagnostics);
        } catch (const GenerationParseError& e) {
            b.error = e.what();
        }
        if (options.strategy == GenerationStrategy::Brief) {
            const auto matches = std::count_if(b.pairs.begin(), b.pairs.end(),
                                               [](const CandidatePair& p) { return p.label == Label::Match; });
            b.composition_ok = matches == 1 && b.pairs.size() == 4;
        }
        out.push_back(std::move(b));
    }
    for (const auto& f : res.failures) out[f.index].error = f.message;
    return out;
}

// ---------------------------------------------------------------------------
// Structured explanations

namespace {

std::vector<std::string> split_cells(std::string_view line, std::size_t line_no) {
    std::vector<std::string> cells(1);
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '\\') {
            if (i + 1 >= line.size()) throw ParseError(fmt::format("line {}: dangling escape", line_no));
            const char n = line[++i];
            if (n == 'n')
                cells.back() += '\n';
            else if (n == '|' || n == '\\')
                cells.back() += n;
            else
                throw ParseError(fmt::format("line {}: unknown escape \\{}", line_no, n));
        } else if (c == '|') {
            cells.emplace_back();
        } else {
            cells.back() += c;
        }
    }
    // Only separator padding is dropped; a value may legitimately hold inner spaces.
    for (auto& cell : cells) {
        if (cell.starts_with(' ')) cell.erase(0, 1);
        if (cell.ends_with(' ')) cell.pop_back();
    }
    return cells;
}

double parse_score(const std::string& text, std::string_view name, std::size_t line_no) {
    double v = 0.0;
    std::size_t used = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v))
        throw ParseError(fmt::format("line {}: {} '{}' is not a number", line_no, name, text));
    if (v < 0.0 || v > 1.0) throw RangeError(fmt::format("line {}: {}={} is outside [0,1]", line_no, name, text));
    return v;
}

}  // namespace

StructuredExplanation parse_structured_explanation(std::string_view raw) {
    std::vector<std::pair<std::size_t, std::string>> lines;
    {
        std::size_t start = 0, no = 0;
        while (start <= raw.size()) {
            const std::size_t nl = raw.find('\n', start);
            std::string l(raw.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
            if (l.ends_with('\r')) l.pop_back();
            lines.emplace_back(++no, std::move(l));
            start = nl == std::string_view::npos ? raw.size() + 1 : nl + 1;
        }
    }
    auto open = std::find_if(lines.begin(), lines.end(), [](const auto& l) { return trim(l.second).starts_with("```"); });
    if (open == lines.end()) throw ParseError("no fenced block found");
    auto close = std::find_if(std::next(open), lines.end(), [](const auto& l) { return trim(l.second) == "```"; });
    if (close == lines.end()) throw ParseError("fenced block is not closed");

    StructuredExplanation e;
    bool have_decision = false;
    for (auto it = std::next(open); it != close; ++it) {
        const auto& [no, line] = *it;
        if (trim(line).empty()) continue;
        if (have_decision) throw ParseError(fmt::format("line {}: content after the decision line", no));
        const std::string t = trim(line);
        if (to_lower(t).starts_with("decision:")) {
            const std::string d = to_lower(trim(t.substr(9)));
            if (d == "match")
                e.decision = Label::Match;
            else if (d == "non-match" || d == "nonmatch")
                e.decision = Label::NonMatch;
            else
                throw ParseError(fmt::format("line {}: unknown decision '{}'", no, d));
            have_decision = true;
            continue;
        }
        const auto cells = split_cells(line, no);
        if (cells.size() < 3 || cells.size() > 5)
            throw ParseError(fmt::format("line {}: expected 3 to 5 cells, found {}", no, cells.size()));
        AttributeComparison c;
        c.attribute = trim(cells[0]);
        if (c.attribute.empty()) throw ParseError(fmt::format("line {}: empty attribute name", no));
        c.value_left = cells[1];
        c.value_right = cells[2];
        bool sim = false, imp = false;
        for (std::size_t k = 3; k < cells.size(); ++k) {
            const std::string cell = trim(cells[k]);
            const auto eq = cell.find('=');
            const std::string key = to_lower(trim(cell.substr(0, eq)));
            if (eq == std::string::npos || (key != "similarity" && key != "importance"))
                throw ParseError(fmt::format("line {}: expected similarity=X or importance=X, found '{}'", no, cell));
            const double v = parse_score(trim(cell.substr(eq + 1)), key, no);
            bool& seen = key == "similarity" ? sim : imp;
            if (seen) throw ParseError(fmt::format("line {}: {} given twice", no, key));
            seen = true;
            (key == "similarity" ? c.similarity : c.importance) = v;
        }
        e.comparisons.push_back(std::move(c));
    }
    if (!have_decision) throw ParseError("structured explanation has no decision line");
    if (e.comparisons.empty()) throw ParseError("structured explanation lists no attributes");
    return e;
}

ExplanationFallback explanation_fallback_from_string(std::string_view s) {
    if (s == "exclude") return ExplanationFallback::Exclude;
    if (s == "downgrade") return ExplanationFallback::Downgrade;
    throw ArgumentError(fmt::format("unknown explanation fallback '{}'", s));
}

json ExclusionEntry::to_json() const {
    return json{{"index", index},       {"left_id", left_id},   {"right_id", right_id},
                {"reason", reason},     {"attempts", attempts}, {"downgraded", downgraded}};
}

std::string AttachResult::summary() const {
    const auto downgraded =
        std::count_if(exclusions.begin(), exclusions.end(), [](const ExclusionEntry& e) { return e.downgraded; });
    return fmt::format("{} records written, {} pairs excluded, {} downgraded to the standard representation\n",
                       records.size(), exclusions.size() - static_cast<std::size_t>(downgraded), downgraded);
}

AttachResult attach_explanations(const Dataset& trainset, Backend& backend, const ExplanationOptions& options) {
    const auto& train = trainset.split("train");
    require_labeled(train, "explanation targets");
    if (options.style == ExplanationStyle::ConciseWithDemos && options.demonstrations.empty())
        throw ArgumentError("concise explanations need at least one demonstration");
    if (options.max_regenerations < 0) throw ArgumentError("max_regenerations must be >= 0");
    if (!is_structured(options.structured_variant))
        throw ArgumentError(fmt::format("'{}' is not a structured variant", to_string(options.structured_variant)));

    const RepresentationVariant variant = options.style == ExplanationStyle::Structured ? options.structured_variant
                                          : options.style == ExplanationStyle::Long    ? RepresentationVariant::TextualLong
                                                                                       : RepresentationVariant::TextualConcise;
    const std::string dataset_name = options.dataset_name.empty() ? trainset.name : options.dataset_name;

    std::vector<Conversation> requests;
    for (const auto& p : train)
        requests.push_back(render_explanation_request(p, trainset.serialization, options.style, options.demonstrations,
                                                      options.templates));

    AttachResult result;
    std::vector<std::optional<FineTuneRecord>> records(train.size());
    std::vector<std::vector<std::string>> attempts(train.size());
    std::vector<std::string> last_error(train.size());
    std::vector<std::size_t> pending(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) pending[i] = i;

    for (int round = 0; round <= options.max_regenerations && !pending.empty(); ++round) {
        std::vector<Conversation> batch;
        for (auto i : pending) batch.push_back(requests[i]);
        const BatchResult res = batch_complete(backend, batch, options.batch);
        result.usage += res.total_usage();
        std::vector<std::size_t> still;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            const std::size_t i = pending[k];
            if (!res.completions[k]) {
                const auto f = std::find_if(res.failures.begin(), res.failures.end(),
                                            [&](const BatchFailure& bf) { return bf.index == k; });
                last_error[i] = f == res.failures.end() ? "request failed" : f->message;
                attempts[i].push_back("");
                still.push_back(i);
                continue;
            }
            const std::string& text = res.completions[k]->text;
            attempts[i].push_back(text);
            try {
                std::optional<Explanation> expl;
                if (options.style == ExplanationStyle::Structured) {
                    expl = parse_structured_explanation(text);
                } else {
                    expl = TextualExplanation{text, options.style == ExplanationStyle::Long
                                                        ? TextualExplanation::Style::Long
                                                        : TextualExplanation::Style::Concise};
                }
                records[i] = render_finetune_record(train[i], trainset.serialization, variant, expl, dataset_name,
                                                    options.templates.match);
            } catch (const Error& e) {
                last_error[i] = e.what();
                still.push_back(i);
            }
        }
        pending = std::move(still);
    }

    for (auto i : pending) {
        ExclusionEntry ex{i, train[i].left.id, train[i].right.id, last_error[i], attempts[i], false};
        if (options.fallback == ExplanationFallback::Downgrade) {
            records[i] = render_finetune_record(train[i], trainset.serialization, RepresentationVariant::Standard,
                                                std::nullopt, dataset_name, options.templates.match);
            ex.downgraded = true;
        }
        result.exclusions.push_back(std::move(ex));
    }
    for (auto& r : records)
        if (r) result.records.push_back(std::move(*r));
    return result;
}

// ---------------------------------------------------------------------------
// Error-based selection

std::string pair_text(const CandidatePair& pair, const SerializationRule& rule) {
    return serialize_entity(pair.left, rule) + " [SEP] " + serialize_entity(pair.right, rule);
}

std::vector<std::size_t> round_robin_nearest(const std::vector<std::vector<double>>& errors,
                                             const std::vector<std::vector<double>>& candidates, std::size_t k) {
    if (k > candidates.size())
        throw SelectionError(fmt::format("need {} candidates, only {} eligible (short by {})", k, candidates.size(),
                                         k - candidates.size()));
    std::vector<std::size_t> chosen;
    if (k == 0 || errors.empty()) return chosen;
    std::vector<std::vector<double>> sim(errors.size(), std::vector<double>(candidates.size()));
    for (std::size_t e = 0; e < errors.size(); ++e)
        for (std::size_t c = 0; c < candidates.size(); ++c) sim[e][c] = cosine(errors[e], candidates[c]);
    std::vector<bool> taken(candidates.size(), false);
    while (chosen.size() < k) {
        for (std::size_t e = 0; e < errors.size() && chosen.size() < k; ++e) {
            std::size_t best = candidates.size();
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                if (taken[c]) continue;
                if (best == candidates.size() || sim[e][c] > sim[e][best]) best = c;
            }
            taken[best] = true;
            chosen.push_back(best);
        }
    }
    return chosen;
}

std::vector<CandidatePair> select_by_error_similarity(const std::vector<CandidatePair>& errors,
                                                      const std::vector<CandidatePair>& pool, Backend& embedder,
                                                      std::size_t k, const std::vector<CandidatePair>& exclude,
                                                      const SerializationRule& rule, const RetryPolicy& retry) {
    if (k == 0) return {};
    std::unordered_set<std::string> ids, keys;
    for (const auto& p : exclude) {
        ids.insert(p.left.id + '\x1f' + p.right.id);
        keys.insert(pair_text(p, rule));
    }
    std::vector<std::size_t> eligible;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const std::string text = pair_text(pool[i], rule);
        if (ids.count(pool[i].left.id + '\x1f' + pool[i].right.id) || keys.count(text)) continue;
        if (!seen.insert(text).second) continue;
        eligible.push_back(i);
    }
    if (eligible.size() < k)
        throw SelectionError(fmt::format("need {} pool pairs, only {} eligible (short by {})", k, eligible.size(),
                                         k - eligible.size()));
    if (errors.empty()) return {};

    std::vector<std::string> texts;
    for (const auto& e : errors) texts.push_back(pair_text(e, rule));
    for (auto i : eligible) texts.push_back(pair_text(pool[i], rule));
    const auto vecs = embed(embedder, texts, retry);
    std::vector<std::vector<double>> ev, pv;
    for (std::size_t i = 0; i < errors.size(); ++i) ev.push_back(vecs[i].values);
    for (std::size_t i = errors.size(); i < vecs.size(); ++i) pv.push_back(vecs[i].values);

    std::vector<CandidatePair> out;
    for (auto c : round_robin_nearest(ev, pv, k)) {
        CandidatePair p = pool[eligible[c]];
        p.provenance = Provenance::Selected;
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selection loop

GatewayLoopModel::GatewayLoopModel(BackendConfig config, FineTuneConfig finetune, BatchOptions batch)
    : config_(std::move(config)), finetune_(std::move(finetune)), batch_(std::move(batch)),
      backend_(make_backend(config_)) {}

std::string GatewayLoopModel::train(const Dataset& trainset, int epochs, const fs::path& workdir) {
    std::vector<json> rows;
    for (const auto& p : trainset.split("train"))
        rows.push_back(to_upload_json(render_finetune_record(p, trainset.serialization, RepresentationVariant::Standard,
                                                             std::nullopt, trainset.name)));
    const fs::path file = workdir / "train.jsonl";
    write_jsonl(file, rows);
    FineTuneConfig cfg = finetune_;
    cfg.epochs = epochs;
    const FineTuneJob created = create_finetune_job(*backend_, file, std::nullopt, cfg, batch_.retry);
    const FineTuneJob job = wait_for_job(*backend_, created.id,
                                         std::chrono::milliseconds(config_.is_mock() ? 0 : 10000), batch_.retry);
    if (job.status != JobStatus::Succeeded)
        throw GatewayError(fmt::format("fine-tune job {} failed: {}", job.id, job.error), 1);
    return job.fine_tuned_model;
}

std::vector<PredictionRecord> GatewayLoopModel::predict(const std::string& model_ref, const Dataset& dataset,
                                                        const std::string& split) {
    auto backend = make_backend(with_model(config_, model_ref));
    return predict_pairs(*backend, dataset, split, batch_);
}

json SelectionIteration::to_json() const {
    json sel = json::array();
    for (const auto& p : selected) sel.push_back({{"id_left", p.left.id}, {"id_right", p.right.id}});
    return json{{"index", index},
                {"error_refs", error_refs},
                {"selected", sel},
                {"cumulative_size", cumulative_size},
                {"model_ref", model_ref},
                {"validation", validation.to_json()}};
}

LoopResult run_error_selection_loop(const Dataset& seed, const std::vector<CandidatePair>& pool, Backend& embedder,
                                    LoopModel& model, const LoopOptions& options) {
    if (options.iterations < 1) throw ArgumentError("the selection loop needs at least one iteration");
    if (options.epochs < 1) throw ArgumentError("epochs per iteration must be >= 1");
    if (pool.size() < static_cast<std::size_t>(options.iterations) * options.batch)
        throw SelectionError(fmt::format("pool of {} cannot supply {} iterations of {}", pool.size(),
                                         options.iterations, options.batch));
    if (seed.split("validation").empty()) throw ArgumentError("the selection loop needs a validation split");

    // Pool pairs must never come from the evaluation splits.
    std::vector<CandidatePair> held_out = seed.split("validation");
    held_out.insert(held_out.end(), seed.split("test").begin(), seed.split("test").end());

    LoopResult result;
    Dataset current = seed;
    for (int i = 0; i <= options.iterations; ++i) {
        const fs::path dir = options.checkpoint_dir.empty() ? fs::path() : options.checkpoint_dir / fmt::format("iter-{}", i);
        const fs::path state = dir / "iteration.json";
        if (!dir.empty() && fs::exists(state)) {
            const json j = json::parse(read_file(state));
            SelectionIteration it;
            it.index = i;
            it.error_refs = j.at("error_refs").get<std::vector<std::string>>();
            it.cumulative_size = j.at("cumulative_size").get<std::size_t>();
            it.model_ref = j.at("model_ref").get<std::string>();
            it.validation = MetricsReport::from_json(j.at("validation"));
            current = seed;
            current.split("train") = load_dataset(dir / "train" / "manifest.json").split("train");
            const auto& tr = current.split("train");
            it.selected.assign(tr.end() - static_cast<std::ptrdiff_t>(j.at("selected").size()), tr.end());
            result.iterations.push_back(std::move(it));
            continue;
        }

        SelectionIteration it;
        it.index = i;
        if (i > 0) {
            const auto& prev = result.iterations.back();
            const auto& validation = seed.split("validation");
            std::vector<CandidatePair> errors;
            for (const auto& ref : prev.error_refs) errors.push_back(validation.at(std::stoul(ref.substr(ref.rfind('/') + 1))));
            std::vector<CandidatePair> exclude = current.split("train");
            exclude.insert(exclude.end(), held_out.begin(), held_out.end());
            it.selected = select_by_error_similarity(errors, pool, embedder, options.batch, exclude, seed.serialization);
            current = combine_datasets(current, it.selected, false);
        }
        it.cumulative_size = current.split("train").size();

        const fs::path work = dir.empty() ? fs::temp_directory_path() / fmt::format("emtune-loop-{}", i) : dir;
        fs::create_directories(work);
        it.model_ref = model.train(current, options.epochs, work);
        const auto predictions = model.predict(it.model_ref, current, "validation");
        std::vector<Label> gold;
        for (const auto& p : current.split("validation")) gold.push_back(p.label);
        it.validation = compute_metrics(decisions_of(predictions), gold);
        for (const auto& p : predictions)
            if (!p.correct.value_or(false)) it.error_refs.push_back(p.ref.to_string());

        if (!dir.empty()) {
            Dataset snapshot = current;
            snapshot.splits = {{"train", current.split("train")}};
            write_dataset(snapshot, dir / "train");
            std::vector<json> sel;
            for (const auto& p : it.selected) sel.push_back({{"id_left", p.left.id}, {"id_right", p.right.id}});
            write_jsonl(dir / "selection.jsonl", sel);
            write_file(state, it.to_json().dump(2) + "\n");
        }
        result.iterations.push_back(std::move(it));
    }

    const auto best = std::max_element(result.iterations.begin(), result.iterations.end(),
                                       [](const SelectionIteration& a, const SelectionIteration& b) {
                                           return a.validation.f1 < b.validation.f1;
                                       });
    result.best_iteration = best->index;
    result.best_model = best->model_ref;
    return result;
}

}  // namespace emtune
