#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emtune/datamodel.hpp"

namespace emtune {

struct Decision {
    enum class Value { Match, NonMatch, Unparsed };
    struct Span {
        std::size_t offset = 0;
        std::string text;
    };

    Value value = Value::Unparsed;
    std::optional<Span> span;  // present iff value != Unparsed

    friend bool operator==(const Decision& a, const Decision& b) {
        return a.value == b.value && a.span.has_value() == b.span.has_value() &&
               (!a.span || (a.span->offset == b.span->offset && a.span->text == b.span->text));
    }
};

std::string_view to_string(Decision::Value v);

/// First word-boundary "yes" or "no" (case-insensitive) decides; neither gives Unparsed.
/// Word characters are ASCII letters, digits, and underscore.
Decision parse_decision(std::string_view raw);

struct MetricsReport {
    // Confusion counts over parsed decisions only.
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    // Unparsed decisions, split by gold label. They score as non-match predictions.
    std::size_t unparsed_positive = 0, unparsed_negative = 0;

    double precision = 0.0, recall = 0.0, f1 = 0.0;

    std::size_t unparsed() const { return unparsed_positive + unparsed_negative; }
    std::size_t evaluated() const { return tp + fp + fn + tn + unparsed(); }
    /// F1 on the 0-100 scale rounded to 2 decimals.
    double f1_display() const;

    json to_json() const;
    static MetricsReport from_json(const json& j);
};

/// Fills precision/recall/f1 from the counts. Zero denominators give 0.
void finalize_scores(MetricsReport& r);

MetricsReport compute_metrics(const std::vector<Decision>& decisions, const std::vector<Label>& gold);

/// Ratio of differences; nullopt when |f_target - f0| < kDegenerateEpsilon.
/// Inputs must share one scale: all on 0-1 or all on 0-100.
std::optional<double> transfer_gain(double f0, double f_transfer, double f_target);
inline constexpr double kDegenerateEpsilon = 1e-9;

struct TransferGainRecord {
    std::string target;
    double f0 = 0.0;
    double f_transfer = 0.0;
    double f_target = 0.0;
    std::optional<double> gain;

    static TransferGainRecord make(std::string target, double f0, double f_transfer, double f_target);
};

struct DomainAggregate {
    std::string source;
    std::string domain;
    std::vector<TransferGainRecord> targets;
    /// Sum of (F_transfer - F0) over sum of (F_target - F0); nullopt when the denominator vanishes.
    std::optional<double> ratio;
    std::optional<long> percent;  // ratio as an integer percent, half away from zero
    /// Arithmetic mean of the per-target gains that are defined; reported alongside.
    std::optional<double> mean_of_gains;
};

DomainAggregate aggregate_transfer_gain(const std::string& source, const std::string& domain,
                                        const std::vector<TransferGainRecord>& records);

/// F1 scores of one model family across training sets and test sets.
struct TransferMatrix {
    struct DatasetRef {
        std::string name;
        std::string domain;
    };
    struct Row {
        std::string name;    // training set label shown in the report
        std::string source;  // dataset the row was fine-tuned on
        std::map<std::string, double> f1;
    };

    std::string model;
    std::vector<DatasetRef> datasets;
    std::map<std::string, double> zero_shot;
    /// F1 of the model tuned on each target and tested on it. Missing entries fall back to a
    /// row whose name and source both equal the target.
    std::map<std::string, double> dedicated;
    std::vector<Row> rows;

    static TransferMatrix from_json(const json& j);
    json to_json() const;
    double dedicated_f1(const std::string& target) const;
    const std::string& domain_of(const std::string& dataset) const;
};

struct TransferReportRow {
    std::string name;
    std::string source;
    /// One aggregate per domain, in first-appearance order of the matrix datasets.
    std::vector<DomainAggregate> aggregates;
};

struct TransferReport {
    TransferMatrix matrix;
    std::vector<TransferReportRow> rows;

    json to_json() const;
    /// Aligned table: per-domain dataset columns with "F1 (delta to zero-shot)", then Average Gain.
    std::string to_text() const;
};

TransferReport build_transfer_report(const TransferMatrix& matrix);

struct CheckpointEval {
    std::string model_ref;
    int epoch = 0;
    MetricsReport validation;
};

/// Highest validation F1; ties go to the earliest epoch.
std::string select_best_checkpoint(const std::vector<CheckpointEval>& evals);

/// Signed difference of two display-scale F1 values at 2 decimals: "+4.94", "-2.11", "+0.00".
std::string format_delta(double treatment, double baseline);

struct DeltaCell {
    double f1 = 0.0;  // display scale
    std::string delta;
    enum class Mark { None, Best, Second } mark = Mark::None;
};

struct DeltaReport {
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<DeltaCell>>> rows;  // baseline row first

    json to_json() const;
    std::string to_text() const;
};

/// One row per treatment plus the baseline row, deltas against the baseline, best value per
/// column bolded (**x**) and second best underlined (__x__).
DeltaReport build_delta_report(const std::string& baseline_name, const std::map<std::string, MetricsReport>& baseline,
                               const std::vector<std::pair<std::string, std::map<std::string, MetricsReport>>>& treatments);

}  // namespace emtune
