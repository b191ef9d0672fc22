#include "emtune/promptforge.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "emtune/error.hpp"

namespace emtune {

std::string_view to_string(Role r) {
    switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    throw ValidationError(fmt::format("unknown role '{}'", s));
}

json to_json(const ChatMessage& m) { return json{{"role", to_string(m.role)}, {"content", m.content}}; }

json to_json(const Conversation& messages) {
    json arr = json::array();
    for (const auto& m : messages) arr.push_back(to_json(m));
    return arr;
}

Conversation conversation_from_json(const json& messages) {
    if (!messages.is_array()) throw ValidationError("messages must be an array");
    Conversation out;
    for (const auto& m : messages) {
        if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["role"].is_string() ||
            !m["content"].is_string())
            throw ValidationError("each message needs string 'role' and 'content'");
        out.push_back({role_from_string(m["role"].get<std::string>()), m["content"].get<std::string>()});
    }
    return out;
}

void validate_conversation(const Conversation& messages) {
    if (messages.empty()) throw ValidationError("conversation is empty");
    std::size_t i = 0;
    if (messages[0].role == Role::System) ++i;
    Role expected = Role::User;
    for (; i < messages.size(); ++i) {
        const auto& m = messages[i];
        if (m.role != expected)
            throw ValidationError(fmt::format("message {} has role {}, expected {}", i, to_string(m.role),
                                              to_string(expected)));
        if (m.content.empty()) throw ValidationError(fmt::format("message {} has empty content", i));
        expected = expected == Role::User ? Role::Assistant : Role::User;
    }
}

// ---------------------------------------------------------------------------

namespace {

struct VariantName {
    RepresentationVariant v;
    std::string_view name;
};

constexpr VariantName kVariantNames[] = {
    {RepresentationVariant::Standard, "standard"},
    {RepresentationVariant::TextualLong, "textual-long"},
    {RepresentationVariant::TextualConcise, "textual-concise"},
    {RepresentationVariant::Structured, "structured"},
    {RepresentationVariant::StructuredNoImportance, "structured-no-importance"},
    {RepresentationVariant::StructuredNoImpSim, "structured-no-imp-sim"},
};

}  // namespace

std::string_view to_string(RepresentationVariant v) {
    for (const auto& n : kVariantNames)
        if (n.v == v) return n.name;
    return "standard";
}

RepresentationVariant variant_from_string(std::string_view s) {
    for (const auto& n : kVariantNames)
        if (n.name == s) return n.v;
    throw ArgumentError(fmt::format("unknown representation variant '{}'", s));
}

bool is_structured(RepresentationVariant v) {
    return v == RepresentationVariant::Structured || v == RepresentationVariant::StructuredNoImportance ||
           v == RepresentationVariant::StructuredNoImpSim;
}

bool is_textual(RepresentationVariant v) {
    return v == RepresentationVariant::TextualLong || v == RepresentationVariant::TextualConcise;
}

void StructuredExplanation::validate() const {
    if (comparisons.empty()) throw ValidationError("structured explanation has no comparisons");
    if (decision == Label::Unlabeled) throw ValidationError("structured explanation has no decision");
    for (const auto& c : comparisons) {
        auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
        if (!in_unit(c.similarity) || !in_unit(c.importance))
            throw RangeError(fmt::format("attribute '{}' has a score outside [0,1]", c.attribute));
    }
}

namespace {

std::string escape_cell(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '|': out += "\\|"; break;
        case '\n': out += "\\n"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::string render_structured_block(const StructuredExplanation& e, RepresentationVariant variant) {
    std::string out = "```\n";
    for (const auto& c : e.comparisons) {
        out += fmt::format("{} | {} | {}", escape_cell(c.attribute), escape_cell(c.value_left),
                           escape_cell(c.value_right));
        if (variant != RepresentationVariant::StructuredNoImpSim)
            out += " | similarity=" + format_fixed(c.similarity, 2);
        if (variant == RepresentationVariant::Structured) out += " | importance=" + format_fixed(c.importance, 2);
        out += "\n";
    }
    out += fmt::format("decision: {}\n```", to_string(e.decision));
    return out;
}

// ---------------------------------------------------------------------------

json to_upload_json(const FineTuneRecord& r) { return json{{"messages", to_json(r.messages)}}; }

json to_json(const FineTuneRecord& r) {
    json j = to_upload_json(r);
    j["meta"] = {{"left_id", r.meta.left_id},
                 {"right_id", r.meta.right_id},
                 {"variant", to_string(r.meta.variant)},
                 {"dataset", r.meta.dataset},
                 {"label", to_string(r.meta.label)}};
    return j;
}

FineTuneRecord finetune_record_from_json(const json& j) {
    FineTuneRecord r;
    r.messages = conversation_from_json(j.at("messages"));
    if (j.contains("meta")) {
        const auto& m = j["meta"];
        r.meta.left_id = m.value("left_id", "");
        r.meta.right_id = m.value("right_id", "");
        r.meta.variant = variant_from_string(m.value("variant", "standard"));
        r.meta.dataset = m.value("dataset", "");
        const std::string label = m.value("label", "unlabeled");
        r.meta.label = label == "match" ? Label::Match : label == "non-match" ? Label::NonMatch : Label::Unlabeled;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

/// Walks the body, calling on_text for literal runs and on_slot for placeholder names.
template <typename Text, typename Slot>
void scan_template(const PromptTemplate& t, Text on_text, Slot on_slot) {
    const std::string& b = t.body;
    std::size_t i = 0;
    while (i < b.size()) {
        const char c = b[i];
        if (c == '{' && i + 1 < b.size() && b[i + 1] == '{') {
            on_text("{");
            i += 2;
        } else if (c == '}' && i + 1 < b.size() && b[i + 1] == '}') {
            on_text("}");
            i += 2;
        } else if (c == '{') {
            const std::size_t close = b.find('}', i);
            if (close == std::string::npos)
                throw TemplateError(fmt::format("template '{}': unclosed '{{' at offset {}", t.name, i));
            on_slot(std::string_view(b).substr(i + 1, close - i - 1));
            i = close + 1;
        } else if (c == '}') {
            throw TemplateError(fmt::format("template '{}': stray '}}' at offset {}", t.name, i));
        } else {
            const std::size_t next = b.find_first_of("{}", i);
            const std::size_t end = next == std::string::npos ? b.size() : next;
            on_text(std::string_view(b).substr(i, end - i));
            i = end;
        }
    }
}

bool is_declared(std::string_view name) {
    return std::find(std::begin(kDeclaredPlaceholders), std::end(kDeclaredPlaceholders), name) !=
           std::end(kDeclaredPlaceholders);
}

}  // namespace

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> names;
    scan_template(
        *this, [](std::string_view) {},
        [&](std::string_view slot) {
            if (!is_declared(slot))
                throw TemplateError(fmt::format("template '{}': undeclared placeholder {{{}}}", name, slot));
            if (std::find(names.begin(), names.end(), slot) == names.end()) names.emplace_back(slot);
        });
    return names;
}

void PromptTemplate::require(std::initializer_list<std::string_view> required) const {
    const auto used = placeholders();
    for (auto r : required) {
        if (std::find(used.begin(), used.end(), r) == used.end())
            throw TemplateError(fmt::format("template '{}': missing placeholder {{{}}}", name, r));
    }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
    std::string out;
    scan_template(
        *this, [&](std::string_view text) { out += text; },
        [&](std::string_view slot) {
            if (!is_declared(slot))
                throw TemplateError(fmt::format("template '{}': undeclared placeholder {{{}}}", name, slot));
            auto it = values.find(std::string(slot));
            if (it == values.end())
                throw TemplateError(fmt::format("template '{}': unresolved placeholder {{{}}}", name, slot));
            out += it->second;
        });
    if (trim(out).empty()) throw TemplateError(fmt::format("template '{}' rendered empty", name));
    return out;
}

namespace {

constexpr std::string_view kOutputGrammar =
    "Write exactly one pair per line and nothing else, using this format:\n"
    "MATCH ||| <entity 1> ||| <entity 2>\n"
    "NONMATCH ||| <entity 1> ||| <entity 2>";

constexpr std::string_view kBackground =
    "Entity matching is the task of deciding whether two entity descriptions, for example two product "
    "offers from different online shops, refer to the same real-world entity. A match is a pair of "
    "descriptions of the same entity; a non-match is a pair of descriptions of different entities.\n\n"
    "Corner cases are pairs that closely resemble the opposite class: matches whose descriptions look very "
    "different (abbreviations, reordered or missing tokens, different naming conventions) and non-matches "
    "whose descriptions look almost identical (the same product line with a different model number, "
    "capacity, color, or edition).\n\n"
    "Requirements for the generated pairs:\n"
    "- Stay in the same product category as the seed pair.\n"
    "- Include matching challenges similar to the ones found in the seed pair.\n"
    "- Prefer corner cases over easy pairs; every label must be correct.";

}  // namespace

TemplateSet TemplateSet::defaults() {
    TemplateSet t;
    t.match = {"match",
               "Do the two entity descriptions refer to the same real-world entity? Answer with 'Yes' if they do "
               "and 'No' if they do not.\nEntity 1: '{entity_left}'\nEntity 2: '{entity_right}'",
               std::nullopt};
    t.relevancy = {"relevancy",
                   "Here is a training example for an entity matching model.\n"
                   "Entity 1: '{entity_left}'\nEntity 2: '{entity_right}'\nLabel: {label}\n\n"
                   "Only interesting examples should stay in the training set. Is this example interesting? "
                   "Answer with a single word: keep or discard.",
                   std::nullopt};
    t.explain_long = {"explain_long", "The correct answer is '{label}'. Explain why.", std::nullopt};
    t.explain_concise = {"explain_concise",
                         "Below are entity pairs, the correct matching decision, and a short explanation of "
                         "that decision.\n\n{demonstrations}\n\n"
                         "Entity 1: '{entity_left}'\nEntity 2: '{entity_right}'\nAnswer: {label}\n"
                         "Write a short explanation for this decision in the same style as the examples.\n"
                         "Explanation:",
                         std::nullopt};
    t.explain_structured = {
        "explain_structured",
        "The correct answer is '{label}'. Explain this decision in a structured format. List every attribute "
        "you compared, one per line, inside a ``` fenced block:\n"
        "attribute | value in entity 1 | value in entity 2 | similarity=X.XX | importance=X.XX\n"
        "importance is how much the attribute mattered for the decision and similarity is how similar the two "
        "values are; both are numbers between 0 and 1 with two decimals. Use an empty value when an entity "
        "lacks the attribute. End the block with the line 'decision: match' or 'decision: non-match'.",
        std::nullopt};
    t.generate_brief = {"generate_brief",
                        "Generate new training examples for entity matching from the seed pair below. Generate "
                        "three non-matches and one match.\n\nSeed pair:\n{seed_pair}\n\n" +
                            std::string(kOutputGrammar),
                        std::nullopt};
    t.generate_detailed = {"generate_detailed",
                           std::string(kBackground) +
                               "\n\nGenerate three non-matches and one match based on the seed pair below."
                               "\n\nSeed pair:\n{seed_pair}\n\n" +
                               std::string(kOutputGrammar),
                           std::nullopt};
    t.generate_demonstration = {"generate_demonstration",
                                std::string(kBackground) +
                                    "\n\nThe following entity pairs from the same dataset show the style of "
                                    "the data:\n\n{demonstrations}\n\n"
                                    "Generate three non-matches and one match based on the seed pair below."
                                    "\n\nSeed pair:\n{seed_pair}\n\n" +
                                    std::string(kOutputGrammar),
                                std::nullopt};
    return t;
}

PromptTemplate& TemplateSet::by_name(std::string_view name) {
    if (name == "match") return match;
    if (name == "relevancy") return relevancy;
    if (name == "explain_long") return explain_long;
    if (name == "explain_concise") return explain_concise;
    if (name == "explain_structured") return explain_structured;
    if (name == "generate_brief") return generate_brief;
    if (name == "generate_detailed") return generate_detailed;
    if (name == "generate_demonstration") return generate_demonstration;
    throw TemplateError(fmt::format("unknown template '{}'", name));
}

TemplateSet TemplateSet::from_manifest(const fs::path& manifest) {
    TemplateSet set = defaults();
    json j;
    try {
        j = json::parse(read_file(manifest));
    } catch (const json::exception& e) {
        throw TemplateError(fmt::format("{}: {}", manifest.string(), e.what()));
    }
    const fs::path base = manifest.parent_path();
    for (auto& [key, value] : j.items()) {
        fs::path file = value.get<std::string>();
        if (!file.is_absolute()) file = base / file;
        if (key.size() > 7 && key.ends_with(".system")) {
            set.by_name(key.substr(0, key.size() - 7)).system = read_file(file);
        } else {
            auto& t = set.by_name(key);
            t.body = read_file(file);
            if (t.body.ends_with('\n')) t.body.pop_back();
            t.placeholders();
        }
    }
    set.match.require({"entity_left", "entity_right"});
    return set;
}

// ---------------------------------------------------------------------------

std::string_view answer_word(Label l) {
    if (l == Label::Match) return "Yes";
    if (l == Label::NonMatch) return "No";
    throw ArgumentError("pair is unlabeled");
}

namespace {

Conversation with_system(const PromptTemplate& t, std::string user) {
    Conversation c;
    if (t.system) c.push_back({Role::System, *t.system});
    c.push_back({Role::User, std::move(user)});
    return c;
}

std::string describe_pair(const CandidatePair& p, const SerializationRule& rule) {
    std::string out = fmt::format("Entity 1: '{}'\nEntity 2: '{}'", serialize_entity(p.left, rule),
                                  serialize_entity(p.right, rule));
    if (p.label != Label::Unlabeled) out += fmt::format("\nLabel: {}", to_string(p.label));
    return out;
}

}  // namespace

Conversation render_match_prompt(const CandidatePair& pair, const SerializationRule& rule,
                                 const PromptTemplate& tmpl) {
    tmpl.require({"entity_left", "entity_right"});
    return with_system(tmpl, tmpl.render({{"entity_left", serialize_entity(pair.left, rule)},
                                          {"entity_right", serialize_entity(pair.right, rule)}}));
}

Conversation render_match_prompt(const CandidatePair& pair, const SerializationRule& rule) {
    static const PromptTemplate tmpl = TemplateSet::defaults().match;
    return render_match_prompt(pair, rule, tmpl);
}

FineTuneRecord render_finetune_record(const CandidatePair& pair, const SerializationRule& rule,
                                      RepresentationVariant variant, const std::optional<Explanation>& explanation,
                                      const std::string& dataset_name, const PromptTemplate& tmpl) {
    if (pair.label == Label::Unlabeled) throw ArgumentError("fine-tune records need a labeled pair");
    std::string assistant(answer_word(pair.label));

    if (variant == RepresentationVariant::Standard) {
        if (explanation) throw ArgumentError("standard representation takes no explanation");
    } else if (!explanation) {
        throw ArgumentError(fmt::format("variant {} requires an explanation", to_string(variant)));
    } else if (is_structured(variant)) {
        const auto* s = std::get_if<StructuredExplanation>(&*explanation);
        if (!s) throw ArgumentError(fmt::format("variant {} requires a structured explanation", to_string(variant)));
        s->validate();
        if (s->decision != pair.label)
            throw ConsistencyError(fmt::format("explanation decision '{}' contradicts label '{}' for ({}, {})",
                                               to_string(s->decision), to_string(pair.label), pair.left.id,
                                               pair.right.id));
        assistant += "\n\n" + render_structured_block(*s, variant);
    } else {
        const auto* t = std::get_if<TextualExplanation>(&*explanation);
        if (!t) throw ArgumentError(fmt::format("variant {} requires a textual explanation", to_string(variant)));
        const std::string text = trim(t->text);
        if (text.empty()) throw ArgumentError("textual explanation is empty");
        assistant += "\n\n" + text;
    }

    FineTuneRecord r;
    r.messages = render_match_prompt(pair, rule, tmpl);
    r.messages.push_back({Role::Assistant, std::move(assistant)});
    r.meta = {pair.left.id, pair.right.id, variant, dataset_name, pair.label};
    return r;
}

std::string_view to_string(ExplanationStyle s) {
    switch (s) {
    case ExplanationStyle::Long: return "long";
    case ExplanationStyle::ConciseWithDemos: return "concise-with-demos";
    case ExplanationStyle::Structured: return "structured";
    }
    return "long";
}

ExplanationStyle explanation_style_from_string(std::string_view s) {
    if (s == "long") return ExplanationStyle::Long;
    if (s == "concise-with-demos" || s == "concise") return ExplanationStyle::ConciseWithDemos;
    if (s == "structured") return ExplanationStyle::Structured;
    throw ArgumentError(fmt::format("unknown explanation style '{}'", s));
}

Conversation render_explanation_request(const CandidatePair& pair, const SerializationRule& rule,
                                        ExplanationStyle style, const std::vector<ExplanationDemo>& demonstrations,
                                        const TemplateSet& templates) {
    const std::string label(answer_word(pair.label));
    if (style == ExplanationStyle::ConciseWithDemos) {
        if (demonstrations.empty()) throw ArgumentError("concise explanations need at least one demonstration");
        std::string demos;
        for (std::size_t i = 0; i < demonstrations.size(); ++i) {
            const auto& d = demonstrations[i];
            if (i) demos += "\n\n";
            demos += fmt::format("Entity 1: '{}'\nEntity 2: '{}'\nAnswer: {}\nExplanation: {}",
                                 serialize_entity(d.pair.left, rule), serialize_entity(d.pair.right, rule),
                                 answer_word(d.pair.label), trim(d.explanation));
        }
        const auto& t = templates.explain_concise;
        return with_system(t, t.render({{"demonstrations", demos},
                                        {"entity_left", serialize_entity(pair.left, rule)},
                                        {"entity_right", serialize_entity(pair.right, rule)},
                                        {"label", label}}));
    }
    // Long and structured: the match prompt, the gold answer, then the follow-up request.
    Conversation c = render_match_prompt(pair, rule, templates.match);
    c.push_back({Role::Assistant, label});
    const auto& follow = style == ExplanationStyle::Long ? templates.explain_long : templates.explain_structured;
    c.push_back({Role::User, follow.render({{"label", label}})});
    return c;
}

std::string_view to_string(GenerationStrategy s) {
    switch (s) {
    case GenerationStrategy::Brief: return "brief";
    case GenerationStrategy::Detailed: return "detailed";
    case GenerationStrategy::Demonstration: return "demonstration";
    }
    return "brief";
}

GenerationStrategy generation_strategy_from_string(std::string_view s) {
    if (s == "brief") return GenerationStrategy::Brief;
    if (s == "detailed") return GenerationStrategy::Detailed;
    if (s == "demonstration") return GenerationStrategy::Demonstration;
    throw ArgumentError(fmt::format("unknown generation strategy '{}'", s));
}

Conversation render_generation_prompt(const CandidatePair& seed, const SerializationRule& rule,
                                      GenerationStrategy strategy, const std::vector<CandidatePair>& demonstrations,
                                      const TemplateSet& templates) {
    std::map<std::string, std::string> values{{"seed_pair", describe_pair(seed, rule)}};
    const PromptTemplate* t = &templates.generate_brief;
    if (strategy == GenerationStrategy::Detailed) t = &templates.generate_detailed;
    if (strategy == GenerationStrategy::Demonstration) {
        if (demonstrations.size() != kGenerationDemonstrations)
            throw ArgumentError(fmt::format("demonstration strategy needs exactly {} demonstrations, got {}",
                                            kGenerationDemonstrations, demonstrations.size()));
        std::string demos;
        for (std::size_t i = 0; i < demonstrations.size(); ++i) {
            if (i) demos += "\n\n";
            demos += fmt::format("Example {}:\n{}", i + 1, describe_pair(demonstrations[i], rule));
        }
        values["demonstrations"] = demos;
        t = &templates.generate_demonstration;
    }
    return with_system(*t, t->render(values));
}

Conversation render_relevancy_prompt(const CandidatePair& pair, const SerializationRule& rule,
                                     const TemplateSet& templates) {
    const auto& t = templates.relevancy;
    return with_system(t, t.render({{"entity_left", serialize_entity(pair.left, rule)},
                                    {"entity_right", serialize_entity(pair.right, rule)},
                                    {"label", std::string(to_string(pair.label))}}));
}

std::optional<std::pair<std::string, std::string>> extract_entities(const Conversation& messages) {
    static constexpr std::string_view k1 = "Entity 1: '";
    static constexpr std::string_view k2 = "\nEntity 2: '";
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        const std::string& text = it->content;
        const std::size_t a = text.rfind(k1);
        if (a == std::string::npos) continue;
        const std::size_t b = text.find(k2, a);
        if (b == std::string::npos) continue;
        std::string left = text.substr(a + k1.size(), b - a - k1.size());
        if (left.ends_with('\'')) left.pop_back();
        const std::size_t start = b + k2.size();
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string right = text.substr(start, end - start);
        if (right.ends_with('\'')) right.pop_back();
        return std::make_pair(std::move(left), std::move(right));
    }
    return std::nullopt;
}

}  // namespace emtune
