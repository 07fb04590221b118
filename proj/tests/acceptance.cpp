// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ivd/cli.hpp"
#include "oracles.hpp"

using namespace ivd;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail, double seconds) {
    std::printf("%s  %-28s %s (%.1fs)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++failures;
}

template <class F>
void criterion(const std::string& name, F f) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = f(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(name, ok, detail, s);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// ---------------------------------------------------------------------------
// Fine-grid reimplementation of the fixed rules
// ---------------------------------------------------------------------------

constexpr double kStep = 1e-5;
constexpr double kTieGap = 1e-8;

double mass(int x, int n, double lo, double hi) {
    return oracle::beta_mass_grid(1.0 + x, 1.0 + n - x, std::max(0.0, lo), std::min(1.0, hi), kStep);
}

// Picks the largest score; near-ties report every candidate.
std::vector<Decision> argmax(const std::vector<std::pair<double, Decision>>& s) {
    double best = -1.0;
    for (const auto& [v, d] : s) best = std::max(best, v);
    std::vector<Decision> out;
    for (const auto& [v, d] : s)
        if (v >= best - kTieGap) out.push_back(d);
    return out;
}

std::vector<Decision> oracle_rule(const DesignSpec& d, int x, int n) {
    const double pt = d.target.p_T, e1 = d.target.eps1, e2 = d.target.eps2;
    if (n == 0) return {Decision::Stay};
    const double rate = static_cast<double>(x) / n;
    switch (d.family()) {
        case Family::mTPI: {
            const double lo = pt - e1, hi = pt + e2;
            return argmax({{mass(x, n, 0, lo) / lo, Decision::Escalate},
                           {mass(x, n, lo, hi) / (hi - lo), Decision::Stay},
                           {mass(x, n, hi, 1) / (1 - hi), Decision::DeEscalate}});
        }
        case Family::mTPI2: {
            const double w = e1 + e2;
            std::vector<std::pair<double, Decision>> s;
            s.push_back({mass(x, n, pt - e1, pt + e2) / w, Decision::Stay});
            for (double top = pt - e1; top > 1e-9; top -= w) {
                const double bottom = std::max(0.0, top - w);
                if (top - w < 1e-9) {
                    s.push_back({mass(x, n, 0.0, top) / top, Decision::Escalate});
                    break;
                }
                s.push_back({mass(x, n, bottom, top) / w, Decision::Escalate});
            }
            for (double bottom = pt + e2; bottom < 1 - 1e-9; bottom += w) {
                if (bottom + w > 1 - 1e-9) {
                    s.push_back({mass(x, n, bottom, 1.0) / (1.0 - bottom), Decision::DeEscalate});
                    break;
                }
                s.push_back({mass(x, n, bottom, bottom + w) / w, Decision::DeEscalate});
            }
            return argmax(s);
        }
        case Family::TPI: {
            const auto& p = d.get<TpiParams>();
            const double a = 1.0 + x, b = 1.0 + n - x;
            const double sd = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1)));
            const double lo = std::clamp(pt - p.k1 * sd, 0.0, 1.0), hi = std::clamp(pt + p.k2 * sd, 0.0, 1.0);
            return argmax({{mass(x, n, 0, lo), Decision::Escalate},
                           {mass(x, n, lo, hi), Decision::Stay},
                           {mass(x, n, hi, 1), Decision::DeEscalate}});
        }
        case Family::CCD: {
            const auto& p = d.get<CcdParams>();
            const double delta = p.delta ? *p.delta : (pt < 0.275 ? 0.09 : pt < 0.375 ? 0.10 : pt < 0.425 ? 0.12 : 0.13);
            if (rate < pt - delta - 1e-9) return {Decision::Escalate};
            if (rate > pt + delta + 1e-9) return {Decision::DeEscalate};
            return {Decision::Stay};
        }
        case Family::BOIN: {
            double le, ld;
            auto lam_e = [&](double f) { return std::log((1 - f) / (1 - pt)) / std::log(pt * (1 - f) / (f * (1 - pt))); };
            auto lam_d = [&](double f) { return std::log((1 - pt) / (1 - f)) / std::log(f * (1 - pt) / (pt * (1 - f))); };
            switch (d.get<BoinParams>().variant) {
                case BoinVariant::Default: le = lam_e(0.6 * pt); ld = lam_d(1.4 * pt); break;
                case BoinVariant::Epsilon: le = lam_e(pt - e1); ld = lam_d(pt + e2); break;
                default: le = pt - e1; ld = pt + e2; break;
            }
            if (rate <= le + 1e-9) return {Decision::Escalate};
            if (rate >= ld - 1e-9) return {Decision::DeEscalate};
            return {Decision::Stay};
        }
        default: break;
    }
    throw std::logic_error("no oracle for design");
}

// Safety overlay: P(p > p_T) by grid integration.
std::vector<Decision> oracle_decide(const DesignSpec& d, int x, int n) {
    if (d.uses_safety_rule() && n >= d.safety_min_n) {
        const double above = mass(x, n, d.target.p_T, 1.0);
        if (above > d.safety_threshold + kTieGap) return {Decision::DeEscalateAndExclude};
        if (above > d.safety_threshold - kTieGap) {
            auto r = oracle_rule(d, x, n);
            r.push_back(Decision::DeEscalateAndExclude);
            return r;
        }
    }
    return oracle_rule(d, x, n);
}

// ---------------------------------------------------------------------------

TrueMtd true_mtd_oracle(const Scenario& s) {
    TrueMtd t;
    const double lo = s.p_T - 0.05, hi = s.p_T + 0.05;
    for (int i = 0; i < s.doses(); ++i)
        if (s.probs[i] > lo - 1e-9 && s.probs[i] < hi + 1e-9) t.doses.push_back(i);
    if (!t.doses.empty()) return t;
    for (int i = s.doses() - 1; i >= 0; --i)
        if (s.probs[i] < s.p_T) return TrueMtd{{i}, 2};
    return t;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string run_cli_capture(std::vector<std::string> args) {
    args.insert(args.begin(), "ivd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    if (run_cli(static_cast<int>(argv.size()), argv.data(), out, err) != 0)
        throw std::runtime_error("ivd exited non-zero: " + err.str());
    return out.str();
}

}  // namespace

int main() {
    const TargetSpec t30 = TargetSpec::make(0.3, 0.05, 0.05);

    criterion("boin-boundaries", [](std::string& detail) {
        const auto a = boin_boundaries(0.3, 0.18, 0.42);
        const auto b = boin_boundaries(0.3, 0.25, 0.35);
        const auto [f1, f2] = boin_inverse(0.3, 0.25, 0.35);
        detail = fmt("(%.4f,%.4f) ", a.lambda_e, a.lambda_d) + fmt("(%.4f,%.4f) ", b.lambda_e, b.lambda_d) +
                 fmt("inverse (%.4f,%.4f) tol 0.001", f1, f2);
        auto near = [](double v, double want) { return std::abs(v - want) <= 0.001; };
        return near(a.lambda_e, 0.236) && near(a.lambda_d, 0.358) && near(b.lambda_e, 0.275) &&
               near(b.lambda_d, 0.325) && near(f1, 0.205) && near(f2, 0.402);
    });

    criterion("mtpi-decisions", [&](std::string& detail) {
        const bool m = mtpi_decide(t30, {3, 6}) == Decision::Stay && mtpi_decide(t30, {4, 8}) == Decision::DeEscalate &&
                       mtpi_decide(t30, {5, 10}) == Decision::DeEscalate;
        const auto oracle36 = oracle_rule(make_design("mtpi2", t30), 3, 6);
        const bool m2 = mtpi2_decide(t30, {1, 3}) == Decision::Stay && mtpi2_decide(t30, {3, 6}) == Decision::DeEscalate &&
                        oracle36 == std::vector<Decision>{Decision::DeEscalate};
        detail = std::string("mTPI (3,6)=S (4,8)=D (5,10)=D: ") + (m ? "ok" : "mismatch") +
                 "; mTPI-2 (1,3)=S (3,6)=D with grid oracle: " + (m2 ? "ok" : "mismatch");
        return m && m2;
    });

    criterion("oracle-equivalence", [&](std::string& detail) {
        int cells = 0, mismatches = 0, near_ties = 0;
        std::string first_bad;
        for (double pt : {0.1, 0.2, 0.3}) {
            const auto target = TargetSpec::make(pt, 0.05, 0.05);
            for (const auto& id : design_ids()) {
                const auto d = make_design(id, target);
                if (!d.is_fixed_rule()) continue;
                const auto table = decision_table(d, 30);
                for (int n = 0; n <= 30; ++n)
                    for (int x = 0; x <= n; ++x) {
                        ++cells;
                        const auto want = oracle_decide(d, x, n);
                        if (want.size() > 1) ++near_ties;
                        if (std::find(want.begin(), want.end(), table.at(x, n)) == want.end()) {
                            ++mismatches;
                            if (first_bad.empty())
                                first_bad = " first: " + id + " p_T=" + detail::format_pt(pt) + " " + std::to_string(x) + "/" +
                                            std::to_string(n);
                        }
                    }
            }
        }
        detail = std::to_string(cells) + " cells, 7 tables x 3 targets, N_max 30, step 1e-5; " +
                 std::to_string(mismatches) + " mismatches, " + std::to_string(near_ties) + " near-ties" + first_bad;
        return mismatches == 0 && cells > 0;
    });

    criterion("ccd-delta", [](std::string& detail) {
        const std::vector<std::pair<double, double>> list{{0.10, 0.09}, {0.15, 0.09}, {0.20, 0.09},
                                                          {0.25, 0.09}, {0.30, 0.10}, {0.35, 0.10},
                                                          {0.40, 0.12}, {0.45, 0.13}, {0.50, 0.13}};
        int ok = 0;
        for (const auto& [pt, delta] : list) ok += ccd_delta(pt) == delta;
        detail = std::to_string(ok) + "/9 exact";
        return ok == 9;
    });

    criterion("true-mtd", [](std::string& detail) {
        int ok = 0, total = 0;
        for (const auto& s : builtin_jiwang_all()) {
            ++total;
            ok += true_mtd(s.probs, TargetSpec::make(s.p_T, 0.05, 0.05)).doses == true_mtd_oracle(s).doses;
        }
        const auto p3 = builtin_jiwang(0.3);
        const auto s8 = true_mtd(p3[7].probs, TargetSpec::make(0.3, 0.05, 0.05)).doses;
        const auto s1 = true_mtd(p3[0].probs, TargetSpec::make(0.3, 0.05, 0.05)).doses;
        const bool anchors = s8 == std::vector<int>{0, 1, 2, 3} && s1 == std::vector<int>{5};
        detail = std::to_string(ok) + "/" + std::to_string(total) + " scenarios agree; anchors s8={1,2,3,4} s1={6}: " +
                 (anchors ? "ok" : "mismatch");
        return ok == total && anchors;
    });

    criterion("directional-oc", [&](std::string& detail) {
        const std::vector<std::string> ids{"mtpi", "mtpi2", "boin-default", "boin-epsilon", "boin-lambda", "crm", "3+3"};
        std::vector<DesignSpec> designs;
        for (const auto& id : ids) designs.push_back(make_design(id, t30));
        TrialConfig cfg;
        cfg.seed = 20170101;
        const auto scenarios = builtin_jiwang_all();
        const auto batch = run_batch(designs, scenarios, cfg, 2000, {4, false});
        const std::size_t S = scenarios.size();
        std::vector<double> rel(ids.size(), 0.0);
        std::vector<std::vector<double>> safety(ids.size());
        for (std::size_t d = 0; d < ids.size(); ++d)
            for (std::size_t s = 0; s < S; ++s) {
                const auto& o = batch.summaries[d * S + s];
                rel[d] += o.reliability / static_cast<double>(S);
                if (o.safety) safety[d].push_back(*o.safety);
            }
        const double sm = median(safety[0]), sm2 = median(safety[1]), sbl = median(safety[4]);
        const bool a = sm2 >= sm && sm2 >= sbl;
        bool b = true;
        for (std::size_t d = 0; d + 1 < ids.size(); ++d) b = b && rel[6] < rel[d];
        const double hi = std::max({rel[1], rel[4], rel[5]}), lo = std::min({rel[1], rel[4], rel[5]});
        const bool c = hi - lo <= 0.05;
        detail = fmt("(a) median safety mtpi2 %.4f mtpi %.4f boin-lambda %.4f; ", sm2, sm, sbl) +
                 fmt("(b) reliability 3+3 %.4f vs min other %.4f; ", rel[6],
                     *std::min_element(rel.begin(), rel.end() - 1)) +
                 fmt("(c) mtpi2 %.4f boin-lambda %.4f crm %.4f spread %.4f <= 0.05", rel[1], rel[4], rel[5], hi - lo);
        detail = std::string(a ? "" : "[a failed] ") + (b ? "" : "[b failed] ") + (c ? "" : "[c failed] ") + detail;
        return a && b && c;
    });

    criterion("paoletti-calibration", [](std::string& detail) {
        PaolettiConfig cfg;
        StreamRng rng(derive_key(2004));
        std::vector<int> counts(6, 0);
        bool monotone = true;
        double below = 0.0, above = 0.0;
        int nb = 0, na = 0;
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            const auto d = paoletti_draw(cfg, rng);
            const auto& p = d.scenario.probs;
            ++counts[d.mtd];
            for (std::size_t k = 1; k < p.size(); ++k) monotone = monotone && p[k] >= p[k - 1];
            if (d.mtd > 0) {
                below += p[d.mtd] - p[d.mtd - 1];
                ++nb;
            }
            if (d.mtd < 5) {
                above += p[d.mtd + 1] - p[d.mtd];
                ++na;
            }
        }
        double chi = 0.0;
        for (int c : counts) chi += (c - draws / 6.0) * (c - draws / 6.0) / (draws / 6.0);
        const double pval = boost::math::cdf(boost::math::complement(boost::math::chi_squared(5), chi));
        below /= nb;
        above /= na;
        detail = fmt("chi2 p=%.4f (>0.01); mean gap below %.4f above %.4f (<0.1); ", pval, below, above) +
                 (monotone ? "all monotone" : "non-monotone draw");
        return pval > 0.01 && monotone && below < 0.1 && above < 0.1;
    });

    criterion("diff-grid-signs", [&](std::string& detail) {
        const int N = 51;
        const auto m2 = score_grid(decision_table(make_design("mtpi2", t30), N));
        const auto bl = score_grid(decision_table(make_design("boin-lambda", t30), N));
        TrialConfig cfg;
        cfg.sample_size = N;
        cfg.seed = 51;
        const auto crm = score_grid(
            crm_table_from_scenarios(make_design("crm", t30), builtin_jiwang(0.3), cfg, 2000, 4), "crm");
        const double d1 = table_diff(m2, bl, N), d2 = table_diff(m2, crm, N);
        const bool anti = table_diff(bl, m2, N) == -d1 && table_diff(crm, m2, N) == -d2;
        const bool self = table_diff(m2, m2, N) == 0.0 && table_diff(crm, crm, N) == 0.0;
        detail = fmt("diff(mtpi2,boin-lambda)=%.3f diff(mtpi2,crm)=%.3f (%.0f unvisited crm cells); ", d1, d2,
                     static_cast<double>(unvisited_cells(m2, crm, N))) +
                 "antisymmetry " + (anti ? "exact" : "broken") + ", self-zero " + (self ? "exact" : "broken");
        return d1 > 0 && d2 > 0 && anti && self;
    });

    criterion("determinism", [](std::string& detail) {
        const std::vector<std::string> base{"simulate", "--scenarios", "jiwang:all", "--trials", "200", "--seed", "99"};
        auto with_workers = [&](const char* w) {
            auto a = base;
            a.insert(a.end(), {"--workers", w});
            return run_cli_capture(a);
        };
        const auto one = with_workers("1"), again = with_workers("1");
        const auto eight = with_workers("8"), eight_again = with_workers("8");
        const bool ok = one == again && one == eight && eight == eight_again && !one.empty();
        detail = std::to_string(one.size()) + " bytes; 1 vs 1, 1 vs 8, 8 vs 8: " + (ok ? "identical" : "differ");
        return ok;
    });

    std::printf("%s: %d criterion(s) failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
