#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ivd/crm.hpp"
#include "ivd/scenarios.hpp"
#include "ivd/selection.hpp"

using namespace ivd;

namespace {

// Midpoint-rule posterior mean of q_i^exp(theta) under a N(0, sd^2) prior.
std::vector<double> crm_oracle(const std::vector<double>& skel, double sd, const std::vector<DoseTally>& t) {
    const int steps = 40000;
    const double lo = -12.0 * sd, hi = 12.0 * sd, h = (hi - lo) / steps;
    std::vector<double> logw(steps);
    double peak = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < steps; ++k) {
        const double th = lo + (k + 0.5) * h;
        double l = -0.5 * th * th / (sd * sd);
        for (std::size_t i = 0; i < skel.size(); ++i) {
            const double p = std::pow(skel[i], std::exp(th));
            if (t[i].x) l += t[i].x * std::log(p);
            if (t[i].n - t[i].x) l += (t[i].n - t[i].x) * std::log1p(-p);
        }
        logw[k] = l;
        peak = std::max(peak, l);
    }
    std::vector<double> m(skel.size(), 0.0);
    double z = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double th = lo + (k + 0.5) * h;
        const double w = std::exp(logw[k] - peak);
        z += w;
        for (std::size_t i = 0; i < skel.size(); ++i) m[i] += w * std::pow(skel[i], std::exp(th));
    }
    for (auto& v : m) v /= z;
    return m;
}

const TargetSpec kT30 = TargetSpec::make(0.3, 0.05, 0.05);

}  // namespace

TEST(Crm, Skeleton) {
    const auto s6 = default_skeleton(6);
    EXPECT_EQ(s6, (std::vector<double>{0.05, 0.10, 0.20, 0.30, 0.40, 0.50}));
    EXPECT_EQ(default_skeleton(3).size(), 3u);
    const auto s8 = default_skeleton(8);
    for (std::size_t i = 1; i < s8.size(); ++i) EXPECT_GT(s8[i], s8[i - 1]);
    EXPECT_LT(s8.back(), 1.0);
    EXPECT_THROW((CrmModel{{0.1, 0.1}, 1.34}.validate()), ParameterError);
    EXPECT_THROW((CrmModel{{0.1, 0.2}, 0.0}.validate()), ParameterError);
}

TEST(Crm, PriorMeanMatchesOracle) {
    const auto skel = default_skeleton(6);
    const CrmPosterior post(CrmModel{skel, 1.34});
    const std::vector<DoseTally> none(6);
    const auto m = post.posterior_tox(none);
    const auto o = crm_oracle(skel, 1.34, none);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(m[i], o[i], 1e-6);
}

TEST(Crm, PosteriorMatchesOracleOnRandomData) {
    std::mt19937 gen(11);
    const auto skel = default_skeleton(6);
    const CrmPosterior post(CrmModel{skel, 1.34});
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<DoseTally> t(6);
        for (auto& d : t) {
            d.n = 3 * std::uniform_int_distribution<int>(0, 6)(gen);
            d.x = std::uniform_int_distribution<int>(0, d.n)(gen);
        }
        const auto m = post.moments(t);
        const auto o = crm_oracle(skel, 1.34, t);
        for (int i = 0; i < 6; ++i) {
            EXPECT_NEAR(m.mean[i], o[i], 1e-6);
            EXPECT_GE(m.variance[i], 0.0);
            if (i) {
                EXPECT_GT(m.mean[i], m.mean[i - 1]);
            }
        }
    }
}

TEST(Crm, DataMovesEstimates) {
    const CrmPosterior post(CrmModel{default_skeleton(6), 1.34});
    std::vector<DoseTally> t(6);
    const auto prior = post.posterior_tox(t);
    t[0] = {3, 3};
    const auto tox = post.posterior_tox(t);
    t[0] = {0, 3};
    const auto safe = post.posterior_tox(t);
    for (int i = 0; i < 6; ++i) {
        EXPECT_GT(tox[i], prior[i]);
        EXPECT_LT(safe[i], prior[i]);
    }
    EXPECT_THROW(post.posterior_tox(std::vector<DoseTally>(5)), ParameterError);
}

TEST(Crm, NextDoseRules) {
    std::vector<DoseTally> t(4);
    const std::vector<double> mean{0.1, 0.3, 0.5, 0.7};
    // No-skip: only one level above the highest dose tried.
    t[0] = {0, 3};
    EXPECT_EQ(crm_select_dose(std::vector<double>{0.01, 0.02, 0.03, 0.3}, t, 4, 0, 0.3, true), 1);
    EXPECT_EQ(crm_select_dose(std::vector<double>{0.01, 0.02, 0.03, 0.3}, t, 4, 0, 0.3, false), 3);
    EXPECT_EQ(crm_select_dose(mean, t, 4, 0, 0.3, true), 1);
    // Excluded doses are skipped, ties go to the lower dose.
    EXPECT_EQ(crm_select_dose(mean, t, 1, 0, 0.3, true), 0);
    EXPECT_EQ(crm_select_dose(std::vector<double>{0.2, 0.4, 0.5, 0.6}, t, 4, 0, 0.3, true), 0);
    EXPECT_FALSE(crm_select_dose(mean, t, 0, 0, 0.3, true));
    EXPECT_EQ(crm_relative_decision(2, 3), Decision::Escalate);
    EXPECT_EQ(crm_relative_decision(2, 2), Decision::Stay);
    EXPECT_EQ(crm_relative_decision(2, 0), Decision::DeEscalate);
    const CrmModel model{default_skeleton(4), 1.34};
    t[0] = {3, 3};
    EXPECT_EQ(crm_next_dose(model, TrialData{t, 0}, 0.3, true, 4), 0);
}

TEST(Pava, Examples) {
    EXPECT_EQ(pava(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{1, 1, 1}),
              (std::vector<double>{0.1, 0.2, 0.3}));
    auto r = pava(std::vector<double>{0.2, 0.1}, std::vector<double>{1, 1});
    EXPECT_NEAR(r[0], 0.15, 1e-15);
    EXPECT_NEAR(r[1], 0.15, 1e-15);
    r = pava(std::vector<double>{0.3, 0.1}, std::vector<double>{1, 3});
    EXPECT_NEAR(r[0], 0.15, 1e-15);
    EXPECT_NEAR(r[1], 0.15, 1e-15);
    EXPECT_THROW(pava(std::vector<double>{0.1}, std::vector<double>{1, 2}), ParameterError);
    EXPECT_THROW(pava(std::vector<double>{0.1}, std::vector<double>{0}), ParameterError);
}

// Weighted least squares over non-decreasing vectors on a 1e-3 grid, by
// dynamic programming over the last value.
std::vector<double> pava_bruteforce(const std::vector<double>& v, const std::vector<double>& w) {
    const int g = 1001;
    const std::size_t n = v.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(g));
    std::vector<std::vector<int>> arg(n, std::vector<int>(g));
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (int k = 0; k < g; ++k) {
            const double y = k / 1000.0;
            if (i > 0 && cost[i - 1][k] < best) {
                best = cost[i - 1][k];
                best_k = k;
            }
            cost[i][k] = w[i] * (v[i] - y) * (v[i] - y) + (i > 0 ? best : 0.0);
            arg[i][k] = best_k;
        }
    }
    std::vector<double> out(n);
    int k = static_cast<int>(std::min_element(cost[n - 1].begin(), cost[n - 1].end()) - cost[n - 1].begin());
    for (std::size_t i = n; i-- > 0;) {
        out[i] = k / 1000.0;
        k = arg[i][k];
    }
    return out;
}

TEST(Pava, MatchesBruteForceProjection) {
    std::mt19937 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0), wd(0.5, 5.0);
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t n = 1 + rep % 5;
        std::vector<double> v(n), w(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = u(gen);
            w[i] = wd(gen);
        }
        const auto fit = pava(v, w);
        const auto ref = pava_bruteforce(v, w);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(fit[i], ref[i], 2e-3);
            if (i) {
                EXPECT_GE(fit[i], fit[i - 1]);
            }
        }
        EXPECT_EQ(pava(fit, w), fit);
    }
}

TEST(SelectMtd, Examples) {
    std::vector<DoseTally> one{{1, 3}, {0, 0}};
    EXPECT_EQ(select_mtd(one, 2, kT30).selected, 0);
    std::vector<DoseTally> t{{0, 3}, {1, 3}, {3, 3}};
    const auto r = select_mtd(t, 2, kT30);
    EXPECT_EQ(r.selected, 1);
    // By hand: posterior means 0.2, 0.4, 0.8, already monotone; doses 1 and 2
    // tie at distance 0.1 and the lower one sits below p_T.
    EXPECT_NEAR(r.isotonic_estimates[0], 0.2, 1e-15);
    EXPECT_NEAR(r.isotonic_estimates[1], 0.4, 1e-15);
    EXPECT_FALSE(select_mtd(t, 0, kT30).selected);
    EXPECT_FALSE(select_mtd(std::vector<DoseTally>(3), 3, kT30).selected);
    EXPECT_TRUE(std::isnan(select_mtd(one, 2, kT30).isotonic_estimates[1]));
}

TEST(SelectMtd, NeverPicksExcludedOrUntried) {
    std::mt19937 gen(3);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<DoseTally> t(5);
        for (auto& d : t) {
            d.n = 3 * std::uniform_int_distribution<int>(0, 4)(gen);
            d.x = std::uniform_int_distribution<int>(0, d.n)(gen);
        }
        const int adm = std::uniform_int_distribution<int>(0, 5)(gen);
        const auto r = select_mtd(t, adm, kT30, {0.005, 0.005});
        if (r.selected) {
            EXPECT_LT(*r.selected, adm);
            EXPECT_GT(t[*r.selected].n, 0);
        }
    }
}

TEST(TrueMtd, Rules) {
    auto t = true_mtd(std::vector<double>{0.29, 0.31, 0.33, 0.35, 0.37, 0.39}, kT30);
    EXPECT_EQ(t.doses, (std::vector<int>{0, 1, 2, 3}));
    EXPECT_EQ(t.rule, 1);
    t = true_mtd(std::vector<double>{0.02, 0.05, 0.1, 0.15, 0.2, 0.25}, kT30);
    EXPECT_EQ(t.doses, (std::vector<int>{5}));
    EXPECT_EQ(t.rule, 1);  // 0.25 sits on the closed lower end
    t = true_mtd(std::vector<double>{0.3, 0.4, 0.5}, TargetSpec::make(0.1, 0.05, 0.05));
    EXPECT_TRUE(t.none());
    EXPECT_EQ(t.rule, 3);
    t = true_mtd(std::vector<double>{0.1, 0.2, 0.5}, kT30);
    EXPECT_EQ(t.doses, (std::vector<int>{1}));
    EXPECT_EQ(t.rule, 2);
}

TEST(TrueMtd, JiWangSetIsConsistent) {
    for (const auto& s : builtin_jiwang_all()) {
        const auto tgt = TargetSpec::make(s.p_T, 0.05, 0.05);
        const auto t = true_mtd(s.probs, tgt);
        std::vector<int> in;
        for (int i = 0; i < s.doses(); ++i)
            if (s.probs[i] >= s.p_T - 0.05 - 1e-12 && s.probs[i] <= s.p_T + 0.05 + 1e-12) in.push_back(i);
        if (!in.empty()) {
            EXPECT_EQ(t.doses, in) << s.label;
            continue;
        }
        int below = -1;
        for (int i = 0; i < s.doses(); ++i)
            if (s.probs[i] < s.p_T) below = i;
        if (below >= 0) EXPECT_EQ(t.doses, std::vector<int>{below}) << s.label;
        else EXPECT_TRUE(t.none()) << s.label;
    }
}
