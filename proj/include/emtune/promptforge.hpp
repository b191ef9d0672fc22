#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "emtune/datamodel.hpp"

namespace emtune {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct ChatMessage {
    Role role = Role::User;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

using Conversation = std::vector<ChatMessage>;

json to_json(const ChatMessage& m);
json to_json(const Conversation& messages);
Conversation conversation_from_json(const json& messages);

/// Checks non-empty user/assistant content and user/assistant alternation after an
/// optional leading system message. Throws ValidationError.
void validate_conversation(const Conversation& messages);

enum class RepresentationVariant {
    Standard,
    TextualLong,
    TextualConcise,
    Structured,
    StructuredNoImportance,
    StructuredNoImpSim,
};

std::string_view to_string(RepresentationVariant v);
RepresentationVariant variant_from_string(std::string_view s);
bool is_structured(RepresentationVariant v);
bool is_textual(RepresentationVariant v);

struct AttributeComparison {
    std::string attribute;
    std::string value_left;
    std::string value_right;
    double similarity = 0.0;
    double importance = 0.0;

    friend bool operator==(const AttributeComparison&, const AttributeComparison&) = default;
};

struct StructuredExplanation {
    std::vector<AttributeComparison> comparisons;
    Label decision = Label::NonMatch;

    /// Non-empty comparisons, scores in [0,1], decision is match or non-match.
    void validate() const;
    friend bool operator==(const StructuredExplanation&, const StructuredExplanation&) = default;
};

struct TextualExplanation {
    enum class Style { Long, Concise };
    std::string text;
    Style style = Style::Long;
};

using Explanation = std::variant<TextualExplanation, StructuredExplanation>;

/// Renders the fenced attribute block. Ablated variants drop importance (and similarity).
std::string render_structured_block(const StructuredExplanation& e,
                                    RepresentationVariant variant = RepresentationVariant::Structured);

struct FineTuneMeta {
    std::string left_id;
    std::string right_id;
    RepresentationVariant variant = RepresentationVariant::Standard;
    std::string dataset;
    Label label = Label::Unlabeled;
};

struct FineTuneRecord {
    Conversation messages;
    FineTuneMeta meta;
};

/// Provider upload shape: {"messages": [...]} only.
json to_upload_json(const FineTuneRecord& r);
/// Upload shape plus a "meta" object, used for run artifacts.
json to_json(const FineTuneRecord& r);
FineTuneRecord finetune_record_from_json(const json& j);

/// Text with `{placeholder}` slots. `{{` and `}}` are literal braces.
struct PromptTemplate {
    std::string name;
    std::string body;
    /// Optional system message rendered ahead of the user turn.
    std::optional<std::string> system;

    /// Placeholders used by the body, in first-use order. Throws TemplateError on an
    /// undeclared placeholder or an unbalanced brace.
    std::vector<std::string> placeholders() const;
    void require(std::initializer_list<std::string_view> names) const;
    std::string render(const std::map<std::string, std::string>& values) const;
};

inline constexpr std::string_view kDeclaredPlaceholders[] = {"entity_left", "entity_right", "demonstrations",
                                                             "seed_pair", "label"};

/// Every prompt the toolkit sends, keyed by role. Defaults are built in; any entry can be
/// replaced from a template manifest.
struct TemplateSet {
    PromptTemplate match;
    PromptTemplate relevancy;
    PromptTemplate explain_long;
    PromptTemplate explain_concise;
    PromptTemplate explain_structured;
    PromptTemplate generate_brief;
    PromptTemplate generate_detailed;
    PromptTemplate generate_demonstration;

    static TemplateSet defaults();
    /// Manifest is JSON {"<name>": "<file>", ...}; an optional "<name>.system" entry names a file
    /// holding that template's system message.
    static TemplateSet from_manifest(const fs::path& manifest);
    PromptTemplate& by_name(std::string_view name);
};

/// Label as the model is asked to answer it.
std::string_view answer_word(Label l);

Conversation render_match_prompt(const CandidatePair& pair, const SerializationRule& rule,
                                 const PromptTemplate& tmpl);
Conversation render_match_prompt(const CandidatePair& pair, const SerializationRule& rule);

FineTuneRecord render_finetune_record(const CandidatePair& pair, const SerializationRule& rule,
                                      RepresentationVariant variant, const std::optional<Explanation>& explanation,
                                      const std::string& dataset_name = {},
                                      const PromptTemplate& tmpl = TemplateSet::defaults().match);

enum class ExplanationStyle { Long, ConciseWithDemos, Structured };
std::string_view to_string(ExplanationStyle s);
ExplanationStyle explanation_style_from_string(std::string_view s);

/// A labeled pair with a short explanation, shown to the model as an example.
struct ExplanationDemo {
    CandidatePair pair;
    std::string explanation;
};

Conversation render_explanation_request(const CandidatePair& pair, const SerializationRule& rule,
                                        ExplanationStyle style, const std::vector<ExplanationDemo>& demonstrations = {},
                                        const TemplateSet& templates = TemplateSet::defaults());

enum class GenerationStrategy { Brief, Detailed, Demonstration };
std::string_view to_string(GenerationStrategy s);
GenerationStrategy generation_strategy_from_string(std::string_view s);
inline constexpr std::size_t kGenerationDemonstrations = 6;

Conversation render_generation_prompt(const CandidatePair& seed, const SerializationRule& rule,
                                      GenerationStrategy strategy,
                                      const std::vector<CandidatePair>& demonstrations = {},
                                      const TemplateSet& templates = TemplateSet::defaults());

Conversation render_relevancy_prompt(const CandidatePair& pair, const SerializationRule& rule,
                                     const TemplateSet& templates = TemplateSet::defaults());

/// Extracts the last "Entity 1: '...'" / "Entity 2: '...'" pair from a conversation, searching
/// messages from the end. Used by the offline matcher.
std::optional<std::pair<std::string, std::string>> extract_entities(const Conversation& messages);

}  // namespace emtune
