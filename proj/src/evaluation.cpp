#include "emtune/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/core.h>

#include "emtune/error.hpp"

namespace emtune {

std::string_view to_string(Decision::Value v) {
    switch (v) {
    case Decision::Value::Match: return "match";
    case Decision::Value::NonMatch: return "non-match";
    case Decision::Value::Unparsed: return "unparsed";
    }
    return "unparsed";
}

Decision parse_decision(std::string_view raw) {
    auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '_'; };
    std::size_t i = 0;
    while (i < raw.size()) {
        if (!is_word(static_cast<unsigned char>(raw[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < raw.size() && is_word(static_cast<unsigned char>(raw[i]))) ++i;
        const std::string_view word = raw.substr(start, i - start);
        const std::string lower = to_lower(word);
        if (lower == "yes") return {Decision::Value::Match, Decision::Span{start, std::string(word)}};
        if (lower == "no") return {Decision::Value::NonMatch, Decision::Span{start, std::string(word)}};
    }
    return {};
}

// ---------------------------------------------------------------------------

double MetricsReport::f1_display() const { return round_half_away(f1 * 100.0, 2); }

void finalize_scores(MetricsReport& r) {
    const double tp = static_cast<double>(r.tp);
    const double pred_pos = tp + static_cast<double>(r.fp);
    const double gold_pos = tp + static_cast<double>(r.fn + r.unparsed_positive);
    r.precision = pred_pos > 0 ? tp / pred_pos : 0.0;
    r.recall = gold_pos > 0 ? tp / gold_pos : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

json MetricsReport::to_json() const {
    return json{{"tp", tp},
                {"fp", fp},
                {"fn", fn},
                {"tn", tn},
                {"unparsed", unparsed()},
                {"unparsed_positive", unparsed_positive},
                {"unparsed_negative", unparsed_negative},
                {"evaluated", evaluated()},
                {"precision", precision},
                {"recall", recall},
                {"f1", f1},
                {"f1_display", f1_display()}};
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    r.tp = j.at("tp").get<std::size_t>();
    r.fp = j.at("fp").get<std::size_t>();
    r.fn = j.at("fn").get<std::size_t>();
    r.tn = j.at("tn").get<std::size_t>();
    r.unparsed_positive = j.value("unparsed_positive", std::size_t{0});
    r.unparsed_negative = j.value("unparsed_negative", std::size_t{0});
    finalize_scores(r);
    return r;
}

MetricsReport compute_metrics(const std::vector<Decision>& decisions, const std::vector<Label>& gold) {
    if (decisions.size() != gold.size())
        throw ArgumentError(fmt::format("{} decisions for {} gold labels", decisions.size(), gold.size()));
    MetricsReport r;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] == Label::Unlabeled) throw ArgumentError(fmt::format("gold label {} is unlabeled", i));
        const bool positive = gold[i] == Label::Match;
        switch (decisions[i].value) {
        case Decision::Value::Match: ++(positive ? r.tp : r.fp); break;
        case Decision::Value::NonMatch: ++(positive ? r.fn : r.tn); break;
        case Decision::Value::Unparsed: ++(positive ? r.unparsed_positive : r.unparsed_negative); break;
        }
    }
    finalize_scores(r);
    return r;
}

// ---------------------------------------------------------------------------
// Transfer gain

std::optional<double> transfer_gain(double f0, double f_transfer, double f_target) {
    for (double v : {f0, f_transfer, f_target})
        if (!std::isfinite(v) || v < 0.0 || v > 100.0) throw ArgumentError("F1 scores must lie in [0,100]");
    // Zero and one read the same on both scales; any other fraction next to a value above one is a mix.
    auto fraction = [](double v) { return v > 0.0 && v < 1.0; };
    const bool any_big = f0 > 1.0 || f_transfer > 1.0 || f_target > 1.0;
    if (any_big && (fraction(f0) || fraction(f_transfer) || fraction(f_target)))
        throw ArgumentError("F1 scores mix the 0-1 and 0-100 scales");
    const double den = f_target - f0;
    if (std::fabs(den) < kDegenerateEpsilon) return std::nullopt;
    return (f_transfer - f0) / den;
}

TransferGainRecord TransferGainRecord::make(std::string target, double f0, double f_transfer, double f_target) {
    return TransferGainRecord{std::move(target), f0, f_transfer, f_target, transfer_gain(f0, f_transfer, f_target)};
}

DomainAggregate aggregate_transfer_gain(const std::string& source, const std::string& domain,
                                        const std::vector<TransferGainRecord>& records) {
    DomainAggregate agg{source, domain, records, std::nullopt, std::nullopt, std::nullopt};
    double num = 0.0, den = 0.0, gain_sum = 0.0;
    std::size_t defined = 0;
    for (const auto& r : records) {
        if (r.target == source)
            throw ArgumentError(fmt::format("target '{}' is the source dataset of the aggregate", r.target));
        num += r.f_transfer - r.f0;
        den += r.f_target - r.f0;
        if (r.gain) {
            gain_sum += *r.gain;
            ++defined;
        }
    }
    if (defined) agg.mean_of_gains = gain_sum / static_cast<double>(defined);
    if (!records.empty() && std::fabs(den) >= kDegenerateEpsilon) {
        agg.ratio = num / den;
        agg.percent = static_cast<long>(round_half_away(*agg.ratio * 100.0, 0));
    }
    return agg;
}

TransferMatrix TransferMatrix::from_json(const json& j) {
    TransferMatrix m;
    try {
        m.model = j.value("model", std::string());
        for (const auto& d : j.at("datasets")) m.datasets.push_back({d.at("name"), d.at("domain")});
        m.zero_shot = j.at("zero_shot").get<std::map<std::string, double>>();
        if (j.contains("dedicated")) m.dedicated = j["dedicated"].get<std::map<std::string, double>>();
        for (const auto& r : j.at("rows")) {
            Row row;
            row.name = r.at("name").get<std::string>();
            row.source = r.value("source", row.name);
            row.f1 = r.at("f1").get<std::map<std::string, double>>();
            m.rows.push_back(std::move(row));
        }
    } catch (const json::exception& e) {
        throw ArgumentError(fmt::format("transfer matrix: {}", e.what()));
    }
    return m;
}

json TransferMatrix::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets) ds.push_back({{"name", d.name}, {"domain", d.domain}});
    json rs = json::array();
    for (const auto& r : rows) rs.push_back({{"name", r.name}, {"source", r.source}, {"f1", r.f1}});
    json j = {{"model", model}, {"datasets", ds}, {"zero_shot", zero_shot}, {"rows", rs}};
    if (!dedicated.empty()) j["dedicated"] = dedicated;
    return j;
}

double TransferMatrix::dedicated_f1(const std::string& target) const {
    if (auto it = dedicated.find(target); it != dedicated.end()) return it->second;
    for (const auto& r : rows) {
        if (r.name == target && r.source == target) {
            if (auto it = r.f1.find(target); it != r.f1.end()) return it->second;
        }
    }
    throw ArgumentError(fmt::format("no dedicated F1 for target '{}'", target));
}

const std::string& TransferMatrix::domain_of(const std::string& dataset) const {
    for (const auto& d : datasets)
        if (d.name == dataset) return d.domain;
    throw ArgumentError(fmt::format("dataset '{}' is not declared in the matrix", dataset));
}

TransferReport build_transfer_report(const TransferMatrix& matrix) {
    std::vector<std::string> domains;
    for (const auto& d : matrix.datasets)
        if (std::find(domains.begin(), domains.end(), d.domain) == domains.end()) domains.push_back(d.domain);

    TransferReport report{matrix, {}};
    for (const auto& row : matrix.rows) {
        TransferReportRow out{row.name, row.source, {}};
        for (const auto& domain : domains) {
            std::vector<TransferGainRecord> records;
            for (const auto& d : matrix.datasets) {
                if (d.domain != domain || d.name == row.source) continue;
                auto f = row.f1.find(d.name);
                auto z = matrix.zero_shot.find(d.name);
                if (f == row.f1.end() || z == matrix.zero_shot.end()) continue;
                records.push_back(TransferGainRecord::make(d.name, z->second, f->second, matrix.dedicated_f1(d.name)));
            }
            out.aggregates.push_back(aggregate_transfer_gain(row.source, domain, records));
        }
        report.rows.push_back(std::move(out));
    }
    return report;
}

json TransferReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        json aggs = json::array();
        for (const auto& a : r.aggregates) {
            json targets = json::array();
            for (const auto& t : a.targets) {
                targets.push_back({{"target", t.target},
                                   {"f0", t.f0},
                                   {"f_transfer", t.f_transfer},
                                   {"f_target", t.f_target},
                                   {"gain", t.gain ? json(*t.gain) : json(nullptr)}});
            }
            aggs.push_back({{"domain", a.domain},
                            {"targets", targets},
                            {"ratio", a.ratio ? json(*a.ratio) : json(nullptr)},
                            {"percent", a.percent ? json(*a.percent) : json(nullptr)},
                            {"mean_of_gains", a.mean_of_gains ? json(*a.mean_of_gains) : json(nullptr)}});
        }
        json f1 = json::object();
        for (const auto& m : matrix.rows)
            if (m.name == r.name) f1 = m.f1;
        rows_j.push_back({{"name", r.name}, {"source", r.source}, {"f1", f1}, {"aggregates", aggs}});
    }
    return json{{"model", matrix.model}, {"zero_shot", matrix.zero_shot}, {"rows", rows_j}};
}

std::string TransferReport::to_text() const {
    std::vector<std::string> domains;
    for (const auto& d : matrix.datasets)
        if (std::find(domains.begin(), domains.end(), d.domain) == domains.end()) domains.push_back(d.domain);

    std::size_t name_w = std::max<std::size_t>(9, matrix.model.size());
    for (const auto& r : matrix.rows) name_w = std::max(name_w, r.name.size());
    constexpr int cell_w = 17;

    std::string header = fmt::format("{:<{}}", matrix.model.empty() ? "Train set" : matrix.model, name_w);
    for (const auto& domain : domains) {
        for (const auto& d : matrix.datasets)
            if (d.domain == domain) header += fmt::format(" | {:>{}}", d.name, cell_w);
        header += fmt::format(" | {:>8}", "Average Gain");
    }
    std::string out = header + "\n" + std::string(header.size(), '-') + "\n";

    auto cell = [&](const std::map<std::string, double>& f1, const std::string& name) {
        auto it = f1.find(name);
        auto z = matrix.zero_shot.find(name);
        if (it == f1.end()) return fmt::format("{:>{}}", "-", cell_w);
        const double base = z == matrix.zero_shot.end() ? it->second : z->second;
        return fmt::format("{:>{}}", fmt::format("{} ({})", format_fixed(it->second, 2), format_delta(it->second, base)),
                           cell_w);
    };

    out += fmt::format("{:<{}}", "Zero-shot", name_w);
    for (const auto& domain : domains) {
        for (const auto& d : matrix.datasets)
            if (d.domain == domain) out += " | " + cell(matrix.zero_shot, d.name);
        out += fmt::format(" | {:>8}", "-");
    }
    out += "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& mrow = matrix.rows[i];
        out += fmt::format("{:<{}}", mrow.name, name_w);
        for (std::size_t k = 0; k < domains.size(); ++k) {
            for (const auto& d : matrix.datasets)
                if (d.domain == domains[k]) out += " | " + cell(mrow.f1, d.name);
            const auto& agg = rows[i].aggregates[k];
            out += fmt::format(" | {:>8}", agg.percent ? fmt::format("{}%", *agg.percent) : std::string("n/a"));
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string select_best_checkpoint(const std::vector<CheckpointEval>& evals) {
    if (evals.empty()) throw ArgumentError("no checkpoints to select from");
    const CheckpointEval* best = &evals.front();
    for (const auto& e : evals) {
        if (e.validation.f1 > best->validation.f1 ||
            (e.validation.f1 == best->validation.f1 && e.epoch < best->epoch))
            best = &e;
    }
    return best->model_ref;
}

std::string format_delta(double treatment, double baseline) {
    const double d = round_half_away(treatment, 2) - round_half_away(baseline, 2);
    const std::string s = format_fixed(d, 2);
    return s.front() == '-' ? s : "+" + s;
}

DeltaReport build_delta_report(const std::string& baseline_name, const std::map<std::string, MetricsReport>& baseline,
                               const std::vector<std::pair<std::string, std::map<std::string, MetricsReport>>>& treatments) {
    DeltaReport report;
    for (const auto& [k, _] : baseline) report.columns.push_back(k);
    for (const auto& [name, t] : treatments) {
        bool same = t.size() == baseline.size();
        for (const auto& [k, _] : t) same = same && baseline.count(k);
        if (!same) throw ArgumentError(fmt::format("treatment '{}' covers different test sets than the baseline", name));
    }

    auto row_for = [&](const std::map<std::string, MetricsReport>& m) {
        std::vector<DeltaCell> cells;
        for (const auto& col : report.columns) {
            const double f = m.at(col).f1_display();
            cells.push_back({f, format_delta(f, baseline.at(col).f1_display()), DeltaCell::Mark::None});
        }
        return cells;
    };
    report.rows.emplace_back(baseline_name, row_for(baseline));
    for (const auto& [name, t] : treatments) report.rows.emplace_back(name, row_for(t));

    for (std::size_t c = 0; c < report.columns.size(); ++c) {
        std::set<double, std::greater<>> values;
        for (const auto& [_, cells] : report.rows) values.insert(cells[c].f1);
        auto it = values.begin();
        const double best = *it;
        const bool has_second = values.size() > 1;
        const double second = has_second ? *std::next(it) : 0.0;
        for (auto& [_, cells] : report.rows) {
            if (cells[c].f1 == best)
                cells[c].mark = DeltaCell::Mark::Best;
            else if (has_second && cells[c].f1 == second)
                cells[c].mark = DeltaCell::Mark::Second;
        }
    }
    return report;
}

json DeltaReport::to_json() const {
    json rows_j = json::array();
    for (const auto& [name, cells] : rows) {
        json cs = json::object();
        for (std::size_t i = 0; i < columns.size(); ++i) {
            const auto& c = cells[i];
            cs[columns[i]] = {{"f1", c.f1},
                              {"delta", c.delta},
                              {"mark", c.mark == DeltaCell::Mark::Best     ? "best"
                                       : c.mark == DeltaCell::Mark::Second ? "second"
                                                                           : ""}};
        }
        rows_j.push_back({{"name", name}, {"cells", cs}});
    }
    return json{{"columns", columns}, {"rows", rows_j}};
}

std::string DeltaReport::to_text() const {
    std::size_t name_w = 9;
    for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
    constexpr int w = 20;
    std::string out = fmt::format("{:<{}}", "Train set", name_w);
    for (const auto& c : columns) out += fmt::format(" | {:>{}}", c, w);
    out += "\n" + std::string(out.size(), '-') + "\n";
    for (const auto& [name, cells] : rows) {
        out += fmt::format("{:<{}}", name, name_w);
        for (const auto& c : cells) {
            std::string v = fmt::format("{} ({})", format_fixed(c.f1, 2), c.delta);
            if (c.mark == DeltaCell::Mark::Best) v = "**" + v + "**";
            if (c.mark == DeltaCell::Mark::Second) v = "__" + v + "__";
            out += fmt::format(" | {:>{}}", v, w);
        }
        out += "\n";
    }
    return out;
}

}  // namespace emtune
