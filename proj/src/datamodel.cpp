#include "emtune/datamodel.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "emtune/csv.hpp"
#include "emtune/error.hpp"

namespace emtune {

const std::string* EntityRecord::find(std::string_view name) const {
    for (const auto& [k, v] : attributes)
        if (k == name) return &v;
    return nullptr;
}

void EntityRecord::set(const std::string& name, std::string value) {
    for (auto& [k, v] : attributes) {
        if (k == name) {
            v = std::move(value);
            return;
        }
    }
    attributes.emplace_back(name, std::move(value));
}

SerializationRule SerializationRule::single(std::string attribute) {
    return SerializationRule{Mode::SingleAttribute, {std::move(attribute)}, "; "};
}

SerializationRule SerializationRule::concat(std::vector<std::string> attributes, std::string delimiter) {
    return SerializationRule{Mode::Concat, std::move(attributes), std::move(delimiter)};
}

void SerializationRule::validate(const std::vector<std::string>& schema) const {
    if (attributes.empty()) throw SchemaError("serialization rule names no attributes");
    if (mode == Mode::SingleAttribute && attributes.size() != 1)
        throw SchemaError("single-attribute rule must name exactly one attribute");
    if (mode == Mode::Concat && delimiter.empty()) throw SchemaError("concat delimiter must be non-empty");
    for (const auto& a : attributes) {
        if (std::find(schema.begin(), schema.end(), a) == schema.end())
            throw SchemaError(fmt::format("serialization attribute '{}' is not in the schema", a));
    }
}

std::string_view to_string(Label l) {
    switch (l) {
    case Label::Match: return "match";
    case Label::NonMatch: return "non-match";
    case Label::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::Benchmark: return "benchmark";
    case Provenance::Synthetic: return "synthetic";
    case Provenance::Selected: return "selected";
    }
    return "benchmark";
}

Provenance provenance_from_string(std::string_view s) {
    if (s.empty() || s == "benchmark") return Provenance::Benchmark;
    if (s == "synthetic") return Provenance::Synthetic;
    if (s == "selected") return Provenance::Selected;
    throw ParseError(fmt::format("unknown provenance '{}'", s));
}

bool is_split_name(std::string_view name) {
    return std::find(std::begin(kSplitNames), std::end(kSplitNames), name) != std::end(kSplitNames);
}

const std::vector<CandidatePair>& Dataset::split(std::string_view name) const {
    static const std::vector<CandidatePair> empty;
    auto it = splits.find(std::string(name));
    return it == splits.end() ? empty : it->second;
}

std::vector<CandidatePair>& Dataset::split(std::string_view name) {
    if (!is_split_name(name)) throw ArgumentError(fmt::format("unknown split '{}'", name));
    return splits[std::string(name)];
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

SerializationRule rule_from_json(const json& j) {
    const std::string mode = j.value("mode", "single");
    if (mode == "single") return SerializationRule::single(j.at("attribute").get<std::string>());
    if (mode == "concat")
        return SerializationRule::concat(j.at("attributes").get<std::vector<std::string>>(),
                                         j.value("delimiter", std::string("; ")));
    throw ConfigError(fmt::format("unknown serialization mode '{}'", mode));
}

json rule_to_json(const SerializationRule& r) {
    if (r.mode == SerializationRule::Mode::SingleAttribute)
        return json{{"mode", "single"}, {"attribute", r.attributes.at(0)}};
    return json{{"mode", "concat"}, {"attributes", r.attributes}, {"delimiter", r.delimiter}};
}

void validate_domain(const std::string& domain) {
    if (domain == "product" || domain == "scholar") return;
    if (domain == "other" || (domain.rfind("other:", 0) == 0 && domain.size() > 6)) return;
    throw ConfigError(fmt::format("domain must be product, scholar, or other:<tag>; got '{}'", domain));
}

}  // namespace

DatasetConfig load_manifest(const fs::path& manifest_path) {
    json j;
    try {
        j = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    DatasetConfig cfg;
    try {
        cfg.name = j.at("name").get<std::string>();
        cfg.domain = j.value("domain", std::string("other"));
        cfg.schema = j.at("schema").get<std::vector<std::string>>();
        cfg.serialization = rule_from_json(j.at("serialization"));
        if (j.contains("columns")) {
            const auto& c = j["columns"];
            cfg.columns.id_left = c.value("id_left", cfg.columns.id_left);
            cfg.columns.id_right = c.value("id_right", cfg.columns.id_right);
            cfg.columns.label = c.value("label", cfg.columns.label);
            if (c.contains("attributes")) {
                for (auto& [attr, cols] : c["attributes"].items())
                    cfg.columns.attributes[attr] = {cols.at(0).get<std::string>(), cols.at(1).get<std::string>()};
            }
        }
        if (j.contains("labels")) {
            const auto& l = j["labels"];
            cfg.columns.match_values = l.value("match", cfg.columns.match_values);
            cfg.columns.non_match_values = l.value("non_match", cfg.columns.non_match_values);
            cfg.columns.allow_unlabeled = l.value("allow_unlabeled", false);
        }
        const fs::path base = manifest_path.parent_path();
        for (auto& [split, file] : j.at("splits").items()) {
            if (!is_split_name(split))
                throw ConfigError(fmt::format("split name '{}' is not one of train/validation/test", split));
            fs::path p = file.get<std::string>();
            cfg.split_files[split] = p.is_absolute() ? p : base / p;
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    validate_domain(cfg.domain);
    cfg.serialization.validate(cfg.schema);
    return cfg;
}

json manifest_to_json(const DatasetConfig& config) {
    json splits = json::object();
    for (const auto& [name, path] : config.split_files) splits[name] = path.string();
    return json{{"name", config.name},
                {"domain", config.domain},
                {"schema", config.schema},
                {"serialization", rule_to_json(config.serialization)},
                {"splits", splits}};
}

// ---------------------------------------------------------------------------
// Pair files

std::vector<CandidatePair> load_split(const fs::path& path, const DatasetConfig& config) {
    if (!fs::exists(path)) throw IoError(fmt::format("pair file '{}' does not exist", path.string()));
    const auto rows = csv::parse(read_file(path));
    if (rows.empty()) throw SchemaError(fmt::format("{}: missing header row", path.string()));

    const auto& header = rows.front().fields;
    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw SchemaError(fmt::format("{}: missing column '{}'", path.string(), name));
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto& cols = config.columns;
    const std::size_t c_left = column(cols.id_left);
    const std::size_t c_right = column(cols.id_right);
    const std::size_t c_label = column(cols.label);
    std::vector<std::pair<std::size_t, std::size_t>> c_attrs;
    for (const auto& attr : config.schema) {
        auto it = cols.attributes.find(attr);
        const std::string l = it != cols.attributes.end() ? it->second.first : attr + "_left";
        const std::string r = it != cols.attributes.end() ? it->second.second : attr + "_right";
        c_attrs.emplace_back(column(l), column(r));
    }
    std::optional<std::size_t> c_prov;
    if (auto it = std::find(header.begin(), header.end(), "provenance"); it != header.end())
        c_prov = static_cast<std::size_t>(it - header.begin());

    auto contains = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };

    std::vector<CandidatePair> pairs;
    std::vector<std::string> malformed;
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.fields.size() != header.size()) {
            malformed.push_back(fmt::format("row {} has {} fields, expected {}", row.line, row.fields.size(),
                                            header.size()));
            continue;
        }
        CandidatePair pair;
        pair.left.id = trim(row.fields[c_left]);
        pair.right.id = trim(row.fields[c_right]);
        if (pair.left.id.empty() || pair.right.id.empty()) {
            malformed.push_back(fmt::format("row {} has an empty id", row.line));
            continue;
        }
        const std::string label = trim(row.fields[c_label]);
        if (contains(cols.match_values, label)) {
            pair.label = Label::Match;
        } else if (contains(cols.non_match_values, label)) {
            pair.label = Label::NonMatch;
        } else if (label.empty() && cols.allow_unlabeled) {
            pair.label = Label::Unlabeled;
        } else {
            malformed.push_back(fmt::format("row {} has invalid label '{}'", row.line, label));
            continue;
        }
        for (std::size_t a = 0; a < config.schema.size(); ++a) {
            pair.left.attributes.emplace_back(config.schema[a], trim(row.fields[c_attrs[a].first]));
            pair.right.attributes.emplace_back(config.schema[a], trim(row.fields[c_attrs[a].second]));
        }
        if (c_prov) {
            try {
                pair.provenance = provenance_from_string(trim(row.fields[*c_prov]));
            } catch (const ParseError&) {
                malformed.push_back(fmt::format("row {} has invalid provenance", row.line));
                continue;
            }
        }
        const std::string key = pair.left.id + '\x1f' + pair.right.id;
        if (auto [it, inserted] = seen.emplace(key, row.line); !inserted) {
            throw DuplicateError(fmt::format("{}: duplicate pair ({}, {}) on rows {} and {}", path.string(),
                                             pair.left.id, pair.right.id, it->second, row.line));
        }
        pairs.push_back(std::move(pair));
    }
    if (!malformed.empty())
        throw ParseError(fmt::format("{}: malformed rows: {}", path.string(), fmt::join(malformed, "; ")));
    return pairs;
}

Dataset load_dataset(const DatasetConfig& config) {
    validate_domain(config.domain);
    config.serialization.validate(config.schema);
    Dataset ds;
    ds.name = config.name;
    ds.domain = config.domain;
    ds.schema = config.schema;
    ds.serialization = config.serialization;
    for (const auto& [split, path] : config.split_files) {
        if (!is_split_name(split)) throw SchemaError(fmt::format("unknown split '{}'", split));
        ds.splits[split] = load_split(path, config);
    }
    return ds;
}

Dataset load_dataset(const fs::path& manifest_path) { return load_dataset(load_manifest(manifest_path)); }

std::string format_split(const Dataset& dataset, std::string_view split) {
    const auto& pairs = dataset.split(split);
    const bool with_provenance = std::any_of(pairs.begin(), pairs.end(), [](const CandidatePair& p) {
        return p.provenance != Provenance::Benchmark;
    });

    csv::Row header = {"id_left", "id_right", "label"};
    for (const auto& a : dataset.schema) header.push_back(a + "_left");
    for (const auto& a : dataset.schema) header.push_back(a + "_right");
    if (with_provenance) header.push_back("provenance");

    std::string out = csv::format_row(header);
    for (const auto& p : pairs) {
        csv::Row row = {p.left.id, p.right.id,
                        p.label == Label::Match ? "1" : p.label == Label::NonMatch ? "0" : ""};
        for (const auto& a : dataset.schema) {
            const std::string* v = p.left.find(a);
            row.push_back(v ? *v : std::string());
        }
        for (const auto& a : dataset.schema) {
            const std::string* v = p.right.find(a);
            row.push_back(v ? *v : std::string());
        }
        if (with_provenance) row.emplace_back(to_string(p.provenance));
        out += csv::format_row(row);
    }
    return out;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
    DatasetConfig cfg;
    cfg.name = dataset.name;
    cfg.domain = dataset.domain;
    cfg.schema = dataset.schema;
    cfg.serialization = dataset.serialization;
    for (const auto& [split, pairs] : dataset.splits) {
        write_file(dir / (split + ".csv"), format_split(dataset, split));
        cfg.split_files[split] = split + ".csv";
    }
    json m = manifest_to_json(cfg);
    bool unlabeled = false;
    for (const auto& [split, pairs] : dataset.splits)
        for (const auto& p : pairs) unlabeled = unlabeled || p.label == Label::Unlabeled;
    if (unlabeled) m["labels"] = json{{"allow_unlabeled", true}};
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

std::string serialize_entity(const EntityRecord& record, const SerializationRule& rule) {
    std::string out;
    for (std::size_t i = 0; i < rule.attributes.size(); ++i) {
        const std::string* v = record.find(rule.attributes[i]);
        if (!v) throw SchemaError(fmt::format("record '{}' has no attribute '{}'", record.id, rule.attributes[i]));
        if (i) out += rule.delimiter;
        out += *v;
    }
    return out;
}

SplitCounts split_counts(const std::vector<CandidatePair>& pairs) {
    auto all_empty = [](const EntityRecord& r) {
        return std::all_of(r.attributes.begin(), r.attributes.end(),
                           [](const auto& kv) { return kv.second.empty(); });
    };
    SplitCounts c;
    for (const auto& p : pairs) {
        switch (p.label) {
        case Label::Match: ++c.positive; break;
        case Label::NonMatch: ++c.negative; break;
        case Label::Unlabeled: ++c.unlabeled; break;
        }
        if (all_empty(p.left) || all_empty(p.right)) ++c.empty_records;
    }
    c.total = pairs.size();
    return c;
}

SplitStats dataset_stats(const Dataset& dataset) {
    SplitStats stats;
    for (const auto& [split, pairs] : dataset.splits) stats[split] = split_counts(pairs);
    return stats;
}

std::string format_stats_table(const std::vector<std::pair<std::string, SplitStats>>& rows) {
    auto count = [](std::size_t n) {
        // Thousands separators, matching how benchmark tables are usually printed.
        std::string s = std::to_string(n);
        for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
        return s;
    };
    std::size_t name_w = 7;
    for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());

    std::string out = fmt::format("{:<{}} | {:^17} | {:^17} | {:^17}\n", "Dataset", name_w, "Training Set",
                                  "Validation Set", "Test Set");
    out += fmt::format("{:<{}} | {:>8} {:>8} | {:>8} {:>8} | {:>8} {:>8}\n", "", name_w, "# Pos", "# Neg",
                       "# Pos", "# Neg", "# Pos", "# Neg");
    out += std::string(name_w + 60, '-') + "\n";
    for (const auto& [name, stats] : rows) {
        out += fmt::format("{:<{}}", name, name_w);
        for (auto split : kSplitNames) {
            auto it = stats.find(std::string(split));
            if (it == stats.end())
                out += fmt::format(" | {:>8} {:>8}", "-", "-");
            else
                out += fmt::format(" | {:>8} {:>8}", count(it->second.positive), count(it->second.negative));
        }
        out += "\n";
    }
    std::string notes;
    for (const auto& [name, stats] : rows) {
        for (const auto& [split, c] : stats) {
            if (c.unlabeled)
                notes += fmt::format("note: {} {}: {} unlabeled pairs excluded\n", name, split, c.unlabeled);
            if (c.empty_records)
                notes += fmt::format("note: {} {}: {} pairs with an entirely empty record\n", name, split,
                                     c.empty_records);
        }
    }
    return out + notes;
}

json stats_to_json(const SplitStats& stats) {
    json j = json::object();
    for (const auto& [split, c] : stats) {
        j[split] = {{"positive", c.positive},
                    {"negative", c.negative},
                    {"unlabeled", c.unlabeled},
                    {"total", c.total},
                    {"empty_records", c.empty_records}};
    }
    return j;
}

std::string pair_key(const CandidatePair& pair, const SerializationRule& rule) {
    return serialize_entity(pair.left, rule) + '\x1f' + serialize_entity(pair.right, rule) + '\x1f' +
           std::string(to_string(pair.label));
}

Dataset combine_datasets(const Dataset& seed, const std::vector<CandidatePair>& addition, bool dedup) {
    for (const auto& p : addition) {
        for (const EntityRecord* r : {&p.left, &p.right}) {
            for (const auto& [k, _] : r->attributes) {
                if (std::find(seed.schema.begin(), seed.schema.end(), k) == seed.schema.end())
                    throw SchemaError(fmt::format("attribute '{}' of record '{}' is not in the schema of '{}'", k,
                                                  r->id, seed.name));
            }
            for (const auto& a : seed.serialization.attributes) {
                if (!r->find(a))
                    throw SchemaError(fmt::format("record '{}' lacks attribute '{}'", r->id, a));
            }
        }
    }
    Dataset out = seed;
    auto& train = out.split("train");
    std::unordered_set<std::string> keys;
    if (dedup) {
        for (const auto& p : train) keys.insert(pair_key(p, seed.serialization));
    }
    for (const auto& p : addition) {
        if (dedup && !keys.insert(pair_key(p, seed.serialization)).second) continue;
        train.push_back(p);
    }
    return out;
}

}  // namespace emtune
