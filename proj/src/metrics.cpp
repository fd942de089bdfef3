#include "triage/metrics.hpp"

#include "triage/error.hpp"


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

namespace triage::metrics {

const char* to_string(Group g)
{
    switch (g) {
    case Group::Covid: return "COVID";
    case Group::Normal: return "NORMAL";
    case Group::BacterialPneumonia: return "BACTERIAL_PNEUMONIA";
    case Group::Nodules: return "NODULES";
    }
    return "?";
}

Group group_from_string(const std::string& name)
{
    for (Group g : {Group::Covid, Group::Normal, Group::BacterialPneumonia, Group::Nodules})
        if (name == to_string(g))
            return g;
    throw Error(ErrorCode::InvalidArgument, "unknown group '" + name + "'");
}

namespace {

// Ascending average ranks (1-based). Tied blocks get the mean of their span,
// which is always a multiple of 1/2 and therefore exact.
std::vector<double> average_ranks_ascending(const std::vector<double>& v)
{
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
            ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

double auc_from(const std::vector<double>& pos, const std::vector<double>& neg)
{
    if (pos.empty() || neg.empty())
        throw Error(ErrorCode::DegenerateSample, "ROC-AUC needs at least one positive and one negative");
    std::vector<double> all(pos);
    all.insert(all.end(), neg.begin(), neg.end());
    for (double s : all)
        if (!std::isfinite(s))
            throw Error(ErrorCode::InvalidArgument, "ROC-AUC scores must be finite");
    const auto r = average_ranks_ascending(all);
    const double np = double(pos.size()), nn = double(neg.size());
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i)
        rank_sum += r[i];
    // U statistic; every term is a multiple of 1/2.
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

} // namespace

double roc_auc(const std::vector<LabeledScore>& scores, const std::set<Group>& negatives)
{
    std::vector<double> pos, neg;
    for (const auto& s : scores) {
        if (s.group == Group::Covid)
            pos.push_back(s.score);
        else if (negatives.empty() || negatives.count(s.group))
            neg.push_back(s.score);
    }
    return auc_from(pos, neg);
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels)
{
    if (scores.size() != labels.size())
        throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        (labels[i] ? pos : neg).push_back(scores[i]);
    return auc_from(pos, neg);
}

RankVector rank_descending(const std::vector<double>& values)
{
    std::vector<double> negated(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        negated[i] = -values[i];
    return {average_ranks_ascending(negated)};
}

double spearman_rho(const std::vector<double>& y_true, const std::vector<double>& y_pred)
{
    if (y_true.size() != y_pred.size())
        throw Error(ErrorCode::DegenerateSample, "spearman_rho: vectors differ in length");
    if (y_true.size() < 2)
        throw Error(ErrorCode::DegenerateSample, "spearman_rho needs at least two observations");
    const auto a = rank_descending(y_true).ranks;
    const auto b = rank_descending(y_pred).ranks;
    const double n = double(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw Error(ErrorCode::ConstantVector, "spearman_rho: a rank vector is constant");
    return cov / std::sqrt(va * vb);
}

double dice(const Mask& a, const Mask& b)
{
    if (a.shape() != b.shape())
        throw Error(ErrorCode::ShapeMismatch, "dice: mask shapes differ");
    std::size_t inter = 0, na = 0, nb = 0;
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        na += da[i];
        nb += db[i];
        inter += da[i] & db[i];
    }
    if (na + nb == 0) {
        warn("dice: both masks empty, returning 1");
        return 1.0;
    }
    return 2.0 * double(inter) / double(na + nb);
}

// ---- Suite ------------------------------------------------------------------

namespace {

const char* kAll = "vs All others";
const char* kNormal = "vs Normal";
const char* kBac = "vs Bac. Pneum.";
const char* kNod = "vs Nodules";
const char* kRho = "Spearman's rho";
const char* kDice = "Dice Score";

MeanStd summarize(const std::vector<double>& v)
{
    MeanStd m;
    m.n = int(v.size());
    if (v.empty())
        return m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v)
            ss += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(ss / double(v.size() - 1));
    }
    return m;
}

} // namespace

const std::vector<std::string>& suite_columns()
{
    static const std::vector<std::string> cols{kAll, kNormal, kBac, kNod, kRho, kDice};
    return cols;
}

SuiteReport evaluate_suite(const std::vector<MethodRuns>& methods, const std::vector<StudyTruth>& truth)
{
    SuiteReport report;
    report.columns = suite_columns();
    const std::vector<std::pair<const char*, std::set<Group>>> auc_columns{
        {kAll, {}}, {kNormal, {Group::Normal}}, {kBac, {Group::BacterialPneumonia}}, {kNod, {Group::Nodules}}};

    for (const auto& method : methods) {
        std::map<std::string, std::vector<double>> per_column;
        for (std::size_t run = 0; run < method.runs.size(); ++run) {
            std::unordered_map<std::string, const StudyPrediction*> by_id;
            for (const auto& p : method.runs[run])
                by_id[p.study_id] = &p;

            std::vector<LabeledScore> scores;
            std::vector<double> sev_true, sev_pred, dices;
            for (const auto& t : truth) {
                auto it = by_id.find(t.study_id);
                if (it == by_id.end()) {
                    report.missing.push_back({method.method, int(run), t.study_id});
                    continue;
                }
                const StudyPrediction& p = *it->second;
                scores.push_back({t.study_id, p.covid_probability, t.group});
                if (t.group != Group::Covid)
                    continue;
                sev_true.push_back(t.severity);
                sev_pred.push_back(p.severity);
                if (t.lesion && p.lesion)
                    dices.push_back(dice(*p.lesion, *t.lesion));
            }

            for (const auto& [name, negatives] : auc_columns) {
                try {
                    per_column[name].push_back(roc_auc(scores, negatives));
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::DegenerateSample)
                        throw;
                }
            }
            try {
                per_column[kRho].push_back(spearman_rho(sev_true, sev_pred));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateSample && e.code() != ErrorCode::ConstantVector)
                    throw;
            }
            if (!dices.empty())
                per_column[kDice].push_back(std::accumulate(dices.begin(), dices.end(), 0.0) / double(dices.size()));
        }
        MethodRow row{method.method, {}};
        for (const auto& col : report.columns)
            row.values[col] = summarize(per_column[col]);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string SuiteReport::to_text() const
{
    std::size_t name_width = 6;
    for (const auto& r : rows)
        name_width = std::max(name_width, r.method.size());
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-*s", int(name_width), "Method");
    out += buf;
    for (const auto& c : columns) {
        std::snprintf(buf, sizeof buf, " | %-15s", c.c_str());
        out += buf;
    }
    out += "\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s", int(name_width), r.method.c_str());
        out += buf;
        for (const auto& c : columns) {
            const MeanStd& m = r.values.at(c);
            if (m.defined())
                std::snprintf(buf, sizeof buf, " | %.2f +- %.2f   ", m.mean, m.std);
            else
                std::snprintf(buf, sizeof buf, " | %-15s", "-");
            out += buf;
        }
        out += "\n";
    }
    if (!missing.empty())
        out += std::to_string(missing.size()) + " missing prediction(s)\n";
    return out;
}

nlohmann::json SuiteReport::to_json() const
{
    nlohmann::json j;
    j["columns"] = columns;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row{{"method", r.method}};
        for (const auto& c : columns) {
            const MeanStd& m = r.values.at(c);
            row[c] = m.defined() ? nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"runs", m.n}} : nlohmann::json();
        }
        j["rows"].push_back(row);
    }
    j["missing"] = nlohmann::json::array();
    for (const auto& m : missing)
        j["missing"].push_back({{"method", m.method}, {"run", m.run}, {"study_id", m.study_id}});
    return j;
}

} // namespace triage::metrics
