#include "doctest.h"

#include "support/oracles.hpp"
#include "triage/error.hpp"
#include "triage/metrics.hpp"

#include <random>

using namespace triage;
using namespace triage::metrics;

namespace {

std::vector<double> draw(std::size_t n, std::mt19937_64& rng, int levels = 0)
{
    std::vector<double> v(n);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> k(0, std::max(levels - 1, 0));
    for (auto& x : v)
        x = levels ? double(k(rng)) / levels : u(rng);
    return v;
}

Mask mask_from(std::vector<std::uint8_t> d)
{
    const int n = int(d.size());
    return Mask({1, 1, n}, {1, 1, 1}, std::move(d), MaskKind::Lesion);
}

} // namespace

TEST_CASE("roc_auc examples")
{
    std::vector<LabeledScore> s{{"a", 1.0, Group::Covid}, {"b", 1.0, Group::Covid}, {"c", 0.0, Group::Normal},
                                {"d", 0.0, Group::Nodules}};
    CHECK(roc_auc(s) == 1.0);
    for (auto& x : s) x.score = 0.3;
    CHECK(roc_auc(s) == 0.5);
    CHECK_THROWS_AS(roc_auc(s, {Group::BacterialPneumonia}), Error);

    // six studies: pos {0.9, 0.4, 0.4}, neg {0.4, 0.2, 0.95}
    std::vector<LabeledScore> six{{"1", 0.9, Group::Covid},  {"2", 0.4, Group::Covid},
                                  {"3", 0.4, Group::Covid},  {"4", 0.4, Group::Normal},
                                  {"5", 0.2, Group::Normal}, {"6", 0.95, Group::BacterialPneumonia}};
    // pairs: 0.9 beats 0.4, 0.2 (2); 0.4 ties 0.4 (.5), beats 0.2 (1) twice -> 2*1.5; total 5 / 9
    CHECK(roc_auc(six) == doctest::Approx(5.0 / 9.0).epsilon(1e-15));
    CHECK(roc_auc(six, {Group::Normal}) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(roc_auc(six, {Group::BacterialPneumonia}) == 0.0);
}

TEST_CASE("roc_auc matches pair counting and is complementary under negation")
{
    std::mt19937_64 rng(21);
    for (int t = 0; t < 100; ++t) {
        const auto pos = draw(1 + t % 13, rng, t % 3 ? 5 : 0);
        const auto neg = draw(1 + (t * 7) % 11, rng, t % 3 ? 5 : 0);
        std::vector<double> all(pos);
        all.insert(all.end(), neg.begin(), neg.end());
        std::vector<int> lab(pos.size(), 1);
        lab.resize(all.size(), 0);
        const double a = roc_auc(all, lab);
        CHECK(std::abs(a - oracle::auc_pairs(pos, neg)) <= 1e-12);
        for (auto& x : all) x = -x;
        CHECK(a + roc_auc(all, lab) == 1.0);
    }
}

TEST_CASE("rank vector semantics")
{
    CHECK(rank_descending({3.0, 1.0, 2.0}).ranks == std::vector<double>{1, 3, 2});
    CHECK(rank_descending({5.0, 5.0, 1.0, 7.0}).ranks == std::vector<double>{2.5, 2.5, 4, 1});
}

TEST_CASE("spearman_rho examples, oracle and invariances")
{
    const std::vector<double> y{0.1, 0.5, 0.3, 0.9, 0.7};
    CHECK(spearman_rho(y, y) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> rev{-0.1, -0.5, -0.3, -0.9, -0.7};
    CHECK(spearman_rho(y, rev) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> a8{1, 2, 3, 4, 5, 6, 7, 8}, b8{2, 1, 4, 4, 6, 5, 8, 7};
    CHECK(std::abs(spearman_rho(a8, b8) - oracle::spearman_by_counting(a8, b8)) <= 1e-12);
    CHECK_THROWS_AS(spearman_rho({1.0}, {2.0}), Error);
    try {
        spearman_rho({1, 1, 1}, {1, 2, 3});
        FAIL("expected ConstantVector");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConstantVector);
    }

    std::mt19937_64 rng(22);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + std::size_t(t % 15);
        auto a = draw(n, rng, t % 2 ? 4 : 0), b = draw(n, rng, t % 4 ? 0 : 3);
        a[0] = 0.0;
        a[1] = 1.0;
        b[0] = 0.0;
        b[1] = 1.0; // never constant
        const double r = spearman_rho(a, b);
        CHECK(std::abs(r - oracle::spearman_by_counting(a, b)) <= 1e-12);
        std::vector<double> ta(a), tb(b);
        for (auto& x : ta) x = std::exp(3 * x) - 2;
        for (auto& x : tb) x = x * x * x + 0.5;
        CHECK(spearman_rho(ta, tb) == doctest::Approx(r).epsilon(1e-12));
        // ordering invariance
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pa(n), pb(n);
        for (std::size_t i = 0; i < n; ++i) {
            pa[i] = a[perm[i]];
            pb[i] = b[perm[i]];
        }
        CHECK(spearman_rho(pa, pb) == doctest::Approx(r).epsilon(1e-12));
    }
}

TEST_CASE("dice examples and oracle")
{
    const Mask a = mask_from({1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0});
    const Mask b = mask_from({0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1});
    CHECK(dice(a, b) == 0.5);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(mask_from({1, 0}), mask_from({0, 1})) == 0.0);
    set_warnings_enabled(false);
    CHECK(dice(mask_from({0, 0}), mask_from({0, 0})) == 1.0);
    set_warnings_enabled(true);
    CHECK_THROWS_AS(dice(mask_from({0, 0}), mask_from({0, 0, 0})), Error);

    std::mt19937_64 rng(23);
    for (int t = 0; t < 100; ++t) {
        std::bernoulli_distribution p(0.1 + 0.008 * t);
        std::vector<std::uint8_t> da(200), db(200);
        for (auto& v : da) v = p(rng);
        for (auto& v : db) v = p(rng);
        const Mask x = mask_from(da), y = mask_from(db);
        CHECK(std::abs(dice(x, y) - oracle::dice_sets(x, y)) <= 1e-12);
        CHECK(dice(x, y) == dice(y, x));
    }
}

TEST_CASE("evaluate_suite: perfect predictions, schema, composition and missing studies")
{
    std::vector<StudyTruth> truth;
    std::vector<StudyPrediction> perfect;
    const Group groups[] = {Group::Covid, Group::Normal, Group::BacterialPneumonia, Group::Nodules};
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(0.05, 0.9);
    for (int i = 0; i < 24; ++i) {
        StudyTruth t;
        t.study_id = "s" + std::to_string(i);
        t.group = groups[i % 4];
        t.severity = t.group == Group::Covid ? u(rng) : 0.0;
        std::vector<std::uint8_t> m(30, 0);
        if (t.group == Group::Covid)
            for (int k = 0; k < 3 + i; ++k) m[std::size_t(k) % 30] = 1;
        t.lesion = mask_from(m);
        truth.push_back(t);
        perfect.push_back({t.study_id, t.group == Group::Covid ? 1.0 : 0.0, t.severity, t.lesion});
    }
    const auto report = evaluate_suite({{"oracle", {perfect}}}, truth);
    CHECK(report.columns == std::vector<std::string>{"vs All others", "vs Normal", "vs Bac. Pneum.", "vs Nodules",
                                                     "Spearman's rho", "Dice Score"});
    for (const auto& c : report.columns) {
        CHECK(report.rows[0].values.at(c).mean == doctest::Approx(1.0));
        CHECK(report.rows[0].values.at(c).std == 0.0);
    }
    CHECK(report.missing.empty());

    // noisy runs: per-run values equal direct metric calls, mean/std across runs
    std::vector<std::vector<StudyPrediction>> runs;
    std::vector<double> auc_all, rhos;
    std::normal_distribution<double> noise(0, 0.3);
    for (int r = 0; r < 3; ++r) {
        std::vector<StudyPrediction> run;
        std::vector<LabeledScore> ls;
        std::vector<double> st, sp;
        for (const auto& t : truth) {
            StudyPrediction p{t.study_id, (t.group == Group::Covid) + noise(rng), t.severity + noise(rng), t.lesion};
            run.push_back(p);
            ls.push_back({t.study_id, p.covid_probability, t.group});
            if (t.group == Group::Covid) {
                st.push_back(t.severity);
                sp.push_back(p.severity);
            }
        }
        auc_all.push_back(roc_auc(ls));
        rhos.push_back(spearman_rho(st, sp));
        runs.push_back(run);
    }
    runs[2].pop_back(); // one missing study in the last run
    auto ls_last = std::vector<LabeledScore>();
    for (std::size_t i = 0; i + 1 < truth.size(); ++i)
        ls_last.push_back({truth[i].study_id, runs[2][i].covid_probability, truth[i].group});
    auc_all[2] = roc_auc(ls_last);
    const auto noisy = evaluate_suite({{"noisy", runs}}, truth);
    REQUIRE(noisy.missing.size() == 1);
    CHECK(noisy.missing[0].study_id == truth.back().study_id);
    const double mean = (auc_all[0] + auc_all[1] + auc_all[2]) / 3;
    const auto& cell = noisy.rows[0].values.at("vs All others");
    CHECK(cell.mean == doctest::Approx(mean).epsilon(1e-12));
    double ss = 0;
    for (double a : auc_all) ss += (a - mean) * (a - mean);
    CHECK(cell.std == doctest::Approx(std::sqrt(ss / 2)).epsilon(1e-12));
    CHECK(noisy.rows[0].values.at("Spearman's rho").n == 3);
    CHECK(noisy.to_text().find("vs Bac. Pneum.") != std::string::npos);
    CHECK(noisy.to_json()["rows"][0]["method"] == "noisy");
}
