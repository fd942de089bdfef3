#pragma once

#include "triage/volume.hpp"

#include "json.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace triage::metrics {

enum class Group { Covid, Normal, BacterialPneumonia, Nodules };

const char* to_string(Group g);
Group group_from_string(const std::string& name);

struct LabeledScore {
    std::string study_id;
    double score = 0.0;
    Group group = Group::Normal;
};

// Mann-Whitney form: P(pos > neg) + 1/2 P(pos == neg) over all pairs, with
// COVID as the positive class and the listed groups as negatives (all
// non-COVID groups when empty). Throws DegenerateSample if a side is empty.
double roc_auc(const std::vector<LabeledScore>& scores, const std::set<Group>& negatives = {});
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Ranks after a descending sort, 1-based; tied values share the mean of their span.
struct RankVector {
    std::vector<double> ranks;
};
RankVector rank_descending(const std::vector<double>& values);

// Pearson correlation of the two rank vectors. Throws DegenerateSample for
// n < 2 or mismatched lengths and ConstantVector if either rank vector is constant.
double spearman_rho(const std::vector<double>& y_true, const std::vector<double>& y_pred);

// 2|a & b| / (|a| + |b|); two empty masks give 1 (with a warning). Throws ShapeMismatch.
double dice(const Mask& a, const Mask& b);

// ---- Evaluation report -------------------------------------------------------

struct StudyTruth {
    std::string study_id;
    Group group = Group::Normal;
    double severity = 0.0;
    std::optional<Mask> lesion;
};

struct StudyPrediction {
    std::string study_id;
    double covid_probability = 0.0;
    double severity = 0.0;
    std::optional<Mask> lesion;
};

// One prediction set per retrained model (seed or split) of a method.
struct MethodRuns {
    std::string method;
    std::vector<std::vector<StudyPrediction>> runs;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation across runs, 0 for a single run
    int n = 0;        // runs where the value was defined
    bool defined() const { return n > 0; }
};

struct MethodRow {
    std::string method;
    std::map<std::string, MeanStd> values; // keyed by column name
};

struct MissingPrediction {
    std::string method;
    int run = 0;
    std::string study_id;
};

struct SuiteReport {
    std::vector<std::string> columns;
    std::vector<MethodRow> rows;
    std::vector<MissingPrediction> missing;

    std::string to_text() const;
    nlohmann::json to_json() const;
};

// Column names in report order.
const std::vector<std::string>& suite_columns();

// The four ROC-AUC columns use covid_probability; Spearman's rho and Dice are
// computed over COVID-positive studies only. Studies without a prediction are
// skipped and listed in SuiteReport::missing.
SuiteReport evaluate_suite(const std::vector<MethodRuns>& methods, const std::vector<StudyTruth>& truth);

} // namespace triage::metrics
