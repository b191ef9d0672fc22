#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emtune/util.hpp"

namespace emtune {

/// One entity description. Attribute order is preserved as declared.
struct EntityRecord {
    std::string id;
    std::vector<std::pair<std::string, std::string>> attributes;

    /// Value of `name`, or nullptr when the record has no such attribute.
    const std::string* find(std::string_view name) const;
    void set(const std::string& name, std::string value);

    friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

/// How an entity is flattened into the single string an LLM sees.
struct SerializationRule {
    enum class Mode { SingleAttribute, Concat };
    Mode mode = Mode::SingleAttribute;
    std::vector<std::string> attributes;  // exactly one for SingleAttribute
    std::string delimiter = "; ";

    static SerializationRule single(std::string attribute);
    static SerializationRule concat(std::vector<std::string> attributes, std::string delimiter = "; ");

    /// Throws SchemaError when an attribute is not in `schema` or the delimiter is empty.
    void validate(const std::vector<std::string>& schema) const;

    friend bool operator==(const SerializationRule&, const SerializationRule&) = default;
};

enum class Label { Match, NonMatch, Unlabeled };
enum class Provenance { Benchmark, Synthetic, Selected };

std::string_view to_string(Label l);
std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct CandidatePair {
    EntityRecord left;
    EntityRecord right;
    Label label = Label::Unlabeled;
    Provenance provenance = Provenance::Benchmark;

    friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

inline constexpr std::string_view kSplitNames[] = {"train", "validation", "test"};
bool is_split_name(std::string_view name);

struct Dataset {
    std::string name;
    std::string domain = "other";  // "product", "scholar", or "other:<tag>"
    std::vector<std::string> schema;
    std::map<std::string, std::vector<CandidatePair>> splits;
    SerializationRule serialization;

    const std::vector<CandidatePair>& split(std::string_view name) const;
    std::vector<CandidatePair>& split(std::string_view name);

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitCounts {
    std::size_t positive = 0;
    std::size_t negative = 0;
    std::size_t unlabeled = 0;
    std::size_t total = 0;
    /// Pairs where at least one side has every attribute empty.
    std::size_t empty_records = 0;

    friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

using SplitStats = std::map<std::string, SplitCounts>;

/// Where each canonical field lives in a source file. Empty entries mean the canonical name.
struct ColumnMapping {
    std::string id_left = "id_left";
    std::string id_right = "id_right";
    std::string label = "label";
    /// attribute -> (left column, right column); attributes absent here use `<attr>_left`/`<attr>_right`.
    std::map<std::string, std::pair<std::string, std::string>> attributes;
    std::vector<std::string> match_values = {"1"};
    std::vector<std::string> non_match_values = {"0"};
    bool allow_unlabeled = false;
};

/// Everything load_dataset needs beyond the file itself.
struct DatasetConfig {
    std::string name;
    std::string domain = "other";
    std::vector<std::string> schema;
    SerializationRule serialization;
    ColumnMapping columns;
    std::map<std::string, fs::path> split_files;
};

/// Reads a dataset manifest (JSON). Relative split paths resolve against the manifest's directory.
DatasetConfig load_manifest(const fs::path& manifest_path);
json manifest_to_json(const DatasetConfig& config);

/// Parses one split file. Row numbers in errors are 1-based physical lines.
std::vector<CandidatePair> load_split(const fs::path& path, const DatasetConfig& config);

/// Loads every split listed in the config.
Dataset load_dataset(const DatasetConfig& config);
Dataset load_dataset(const fs::path& manifest_path);

/// Canonical pair-file text for one split.
std::string format_split(const Dataset& dataset, std::string_view split);
/// Writes `<dir>/<split>.csv` for every split plus `<dir>/manifest.json`.
void write_dataset(const Dataset& dataset, const fs::path& dir);

std::string serialize_entity(const EntityRecord& record, const SerializationRule& rule);

SplitCounts split_counts(const std::vector<CandidatePair>& pairs);
SplitStats dataset_stats(const Dataset& dataset);

/// Plain-text table with Train/Validation/Test #Pos/#Neg columns, one row per dataset.
std::string format_stats_table(const std::vector<std::pair<std::string, SplitStats>>& rows);
json stats_to_json(const SplitStats& stats);

/// Union of seed's train split with `addition`. With dedup, pairs whose serialized
/// (left, right, label) triple is already present are dropped.
Dataset combine_datasets(const Dataset& seed, const std::vector<CandidatePair>& addition, bool dedup);

/// Key used for dedup and exclusion: serialized left, right, and label.
std::string pair_key(const CandidatePair& pair, const SerializationRule& rule);

}  // namespace emtune
