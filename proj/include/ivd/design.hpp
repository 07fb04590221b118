#pragma once

// Per-cohort decision engines for the interval designs (TPI, mTPI, mTPI-2,
// CCD, BOIN) and 3+3, together with the posterior-tail safety rule.
//
// Every function here is a pure function of its arguments. A decision is
// requested after a cohort completes at the current dose; it depends on that
// dose's cumulative tally (x, n) only, never on data at other doses.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ivd/numerics.hpp"
#include "ivd/types.hpp"

namespace ivd {

// ---------------------------------------------------------------------------
// Beta posterior numerics
// ---------------------------------------------------------------------------

inline BetaPosterior posterior(DoseTally tally, double prior_a = 1.0, double prior_b = 1.0) {
    tally.validate();
    if (!(prior_a > 0.0) || !(prior_b > 0.0)) throw ParameterError("beta prior must be positive");
    return {prior_a + tally.x, prior_b + tally.n - tally.x};
}

inline BetaPosterior posterior(DoseTally tally, BetaPrior prior) {
    return posterior(tally, prior.a, prior.b);
}

inline double interval_probability(const BetaPosterior& post, Interval iv) {
    iv.validate();
    // Upper-tail differences lose less precision when the interval sits right
    // of the bulk of the posterior.
    double p;
    if (iv.lo > post.mean())
        p = num::beta_sf(post.alpha, post.beta, iv.lo) - num::beta_sf(post.alpha, post.beta, iv.hi);
    else
        p = num::beta_cdf(post.alpha, post.beta, iv.hi) - num::beta_cdf(post.alpha, post.beta, iv.lo);
    if (!std::isfinite(p)) throw ComputationError("interval probability is not finite");
    return std::clamp(p, 0.0, 1.0);
}

// Unit probability mass: interval probability per unit length.
inline double upm(const BetaPosterior& post, Interval iv) {
    if (!(iv.hi > iv.lo)) throw ParameterError("UPM of a zero-length interval");
    return interval_probability(post, iv) / iv.length();
}

// Probability mass (or UPM) of an interval tagged with the decision it backs.
struct IntervalScore {
    Interval interval;
    Decision decision;
    double probability = 0.0;
    double upm = 0.0;
};

namespace detail {

// argmax over scores; exact ties go to the safer decision (D > S > E).
template <class Score>
Decision argmax_safer(std::span<const IntervalScore> entries, Score score) {
    const IntervalScore* best = nullptr;
    for (const auto& e : entries) {
        if (best == nullptr) {
            best = &e;
            continue;
        }
        const double s = score(e);
        const double b = score(*best);
        if (s > b || (s == b && safety_rank(e.decision) > safety_rank(best->decision))) best = &e;
    }
    return best ? best->decision : Decision::Stay;
}

inline IntervalScore score_interval(const BetaPosterior& post, Interval iv, Decision d) {
    IntervalScore s{iv, d, 0.0, 0.0};
    if (iv.hi > iv.lo) {
        s.probability = interval_probability(post, iv);
        s.upm = s.probability / iv.length();
    }
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mTPI
// ---------------------------------------------------------------------------

inline std::array<IntervalScore, 3> mtpi_scores(const TargetSpec& target, DoseTally tally,
                                                BetaPrior prior = {}) {
    const auto post = posterior(tally, prior);
    const double lo = target.lower();
    const double hi = target.upper();
    if (!(hi > lo)) throw ParameterError("mTPI needs eps1 + eps2 > 0");
    return {detail::score_interval(post, {0.0, lo}, Decision::Escalate),
            detail::score_interval(post, {lo, hi}, Decision::Stay),
            detail::score_interval(post, {hi, 1.0}, Decision::DeEscalate)};
}

inline Decision mtpi_decide(const TargetSpec& target, DoseTally tally, BetaPrior prior = {}) {
    tally.validate();
    if (tally.n == 0) return Decision::Stay;
    const auto scores = mtpi_scores(target, tally, prior);
    return detail::argmax_safer(std::span<const IntervalScore>(scores),
                                [](const IntervalScore& s) { return s.upm; });
}

// ---------------------------------------------------------------------------
// mTPI-2
// ---------------------------------------------------------------------------

struct TaggedInterval {
    Interval interval;
    Decision decision;
};

// Tiles (0,1) with subintervals of the equivalence-interval length, anchored
// at the EI; the outermost tile on each side is clipped at 0 or 1.
inline std::vector<TaggedInterval> mtpi2_partition(const TargetSpec& target) {
    target.validate();
    const double lo = target.lower();
    const double hi = target.upper();
    const double width = target.eps1 + target.eps2;
    if (!(width > 0.0)) throw ParameterError("mTPI-2 needs eps1 + eps2 > 0");
    constexpr double clip_tol = 1e-9;

    std::vector<TaggedInterval> below;
    for (int k = 0;; ++k) {
        const double top = lo - k * width;
        if (top <= clip_tol) break;
        double bottom = lo - (k + 1) * width;
        if (bottom < clip_tol) bottom = 0.0;
        below.push_back({{bottom, top}, Decision::Escalate});
        if (bottom == 0.0) break;
    }
    std::vector<TaggedInterval> tiles(below.rbegin(), below.rend());
    tiles.push_back({{lo, hi}, Decision::Stay});
    for (int k = 0;; ++k) {
        const double bottom = hi + k * width;
        if (bottom >= 1.0 - clip_tol) break;
        double top = hi + (k + 1) * width;
        if (top > 1.0 - clip_tol) top = 1.0;
        tiles.push_back({{bottom, top}, Decision::DeEscalate});
        if (top == 1.0) break;
    }
    return tiles;
}

inline std::vector<IntervalScore> mtpi2_scores(std::span<const TaggedInterval> tiles,
                                               DoseTally tally, BetaPrior prior = {}) {
    const auto post = posterior(tally, prior);
    std::vector<IntervalScore> out;
    out.reserve(tiles.size());
    for (const auto& t : tiles) out.push_back(detail::score_interval(post, t.interval, t.decision));
    return out;
}

inline Decision mtpi2_decide(std::span<const TaggedInterval> tiles, DoseTally tally,
                             BetaPrior prior = {}) {
    tally.validate();
    if (tally.n == 0) return Decision::Stay;
    const auto scores = mtpi2_scores(tiles, tally, prior);
    return detail::argmax_safer(std::span<const IntervalScore>(scores),
                                [](const IntervalScore& s) { return s.upm; });
}

inline Decision mtpi2_decide(const TargetSpec& target, DoseTally tally, BetaPrior prior = {}) {
    const auto tiles = mtpi2_partition(target);
    return mtpi2_decide(tiles, tally, prior);
}

// ---------------------------------------------------------------------------
// TPI
// ---------------------------------------------------------------------------

struct TpiScores {
    double sigma = 0.0;
    std::array<IntervalScore, 3> intervals;
};

// Intervals scale with the posterior sd; the under-dosing interval is empty
// (probability 0) once p_T - k1*sigma <= 0.
inline TpiScores tpi_scores(const TargetSpec& target, double k1, double k2, DoseTally tally,
                            BetaPrior prior = {}) {
    if (!(k1 > 0.0) || !(k2 > 0.0)) throw ParameterError("TPI constants must be positive");
    const auto post = posterior(tally, prior);
    const double sigma = post.sd();
    const double a = std::clamp(target.p_T - k1 * sigma, 0.0, 1.0);
    const double b = std::clamp(target.p_T + k2 * sigma, 0.0, 1.0);
    TpiScores s;
    s.sigma = sigma;
    s.intervals = {detail::score_interval(post, {0.0, a}, Decision::Escalate),
                   detail::score_interval(post, {a, b}, Decision::Stay),
                   detail::score_interval(post, {b, 1.0}, Decision::DeEscalate)};
    return s;
}

inline Decision tpi_decide(const TargetSpec& target, double k1, double k2, DoseTally tally,
                           BetaPrior prior = {}) {
    tally.validate();
    if (tally.n == 0) return Decision::Stay;
    const auto s = tpi_scores(target, k1, k2, tally, prior);
    return detail::argmax_safer(std::span<const IntervalScore>(s.intervals),
                                [](const IntervalScore& e) { return e.probability; });
}

// ---------------------------------------------------------------------------
// CCD
// ---------------------------------------------------------------------------

// Published half-widths for p_T on the 0.05 grid from 0.10 to 0.50.
inline double ccd_delta(double p_T) {
    struct Row {
        double p_T;
        double delta;
    };
    static constexpr std::array<Row, 9> table{{{0.10, 0.09},
                                               {0.15, 0.09},
                                               {0.20, 0.09},
                                               {0.25, 0.09},
                                               {0.30, 0.10},
                                               {0.35, 0.10},
                                               {0.40, 0.12},
                                               {0.45, 0.13},
                                               {0.50, 0.13}}};
    for (const auto& r : table)
        if (std::abs(r.p_T - p_T) < 1e-9) return r.delta;
    throw ConfigError("no tabulated CCD delta for p_T = " + std::to_string(p_T) +
                      "; a delta override is required");
}

// Closed middle interval: p_hat equal to either boundary stays.
inline Decision ccd_decide(double p_T, double delta, DoseTally tally) {
    tally.validate();
    if (!(delta > 0.0)) throw ParameterError("CCD delta must be positive");
    if (tally.n == 0) return Decision::Stay;
    const double p_hat = tally.rate();
    if (p_hat < p_T - delta - kBoundaryTol) return Decision::Escalate;
    if (p_hat > p_T + delta + kBoundaryTol) return Decision::DeEscalate;
    return Decision::Stay;
}

// ---------------------------------------------------------------------------
// BOIN (local)
// ---------------------------------------------------------------------------

struct BoinBoundaries {
    double phi1 = 0.0;
    double phi2 = 0.0;
    double lambda_e = 0.0;
    double lambda_d = 0.0;
};

namespace detail {

inline double boin_lambda_e(double p_T, double phi1) {
    return std::log((1.0 - phi1) / (1.0 - p_T)) /
           std::log(p_T * (1.0 - phi1) / (phi1 * (1.0 - p_T)));
}

inline double boin_lambda_d(double p_T, double phi2) {
    return std::log((1.0 - p_T) / (1.0 - phi2)) /
           std::log(phi2 * (1.0 - p_T) / (p_T * (1.0 - phi2)));
}

}  // namespace detail

inline BoinBoundaries boin_boundaries(double p_T, double phi1, double phi2) {
    if (!(phi1 > 0.0 && phi1 < p_T && p_T < phi2 && phi2 < 1.0))
        throw ParameterError("BOIN requires 0 < phi1 < p_T < phi2 < 1");
    BoinBoundaries b{phi1, phi2, detail::boin_lambda_e(p_T, phi1), detail::boin_lambda_d(p_T, phi2)};
    if (!(b.phi1 < b.lambda_e && b.lambda_e < p_T && p_T < b.lambda_d && b.lambda_d < b.phi2))
        throw ComputationError("BOIN boundaries violate phi1 < lambda_e < p_T < lambda_d < phi2");
    return b;
}

// Recovers (phi1, phi2) from the decision boundaries. Both boundary maps are
// strictly increasing, so each inversion is a bracketed 1-d root search.
inline std::pair<double, double> boin_inverse(double p_T, double lambda_e, double lambda_d) {
    if (!(lambda_e > 0.0 && lambda_e < p_T && p_T < lambda_d && lambda_d < 1.0))
        throw ParameterError("BOIN inverse requires 0 < lambda_e < p_T < lambda_d < 1");
    constexpr double edge = 1e-12;
    const double phi1 = num::find_root(
        [&](double f) { return detail::boin_lambda_e(p_T, f) - lambda_e; }, edge, p_T - edge);
    const double phi2 = num::find_root(
        [&](double f) { return detail::boin_lambda_d(p_T, f) - lambda_d; }, p_T + edge, 1.0 - edge);
    return {phi1, phi2};
}

// Escalate on (0, lambda_e], stay on (lambda_e, lambda_d), de-escalate on [lambda_d, 1).
inline Decision boin_decide(const BoinBoundaries& bounds, DoseTally tally) {
    tally.validate();
    if (tally.n == 0) return Decision::Stay;
    const double p_hat = tally.rate();
    if (p_hat <= bounds.lambda_e + kBoundaryTol) return Decision::Escalate;
    if (p_hat >= bounds.lambda_d - kBoundaryTol) return Decision::DeEscalate;
    return Decision::Stay;
}

enum class BoinVariant { Default, Epsilon, Lambda };

inline BoinBoundaries boin_variant_bounds(double p_T, BoinVariant variant, const TargetSpec& target) {
    switch (variant) {
        case BoinVariant::Default: return boin_boundaries(p_T, 0.6 * p_T, 1.4 * p_T);
        case BoinVariant::Epsilon: return boin_boundaries(p_T, p_T - target.eps1, p_T + target.eps2);
        case BoinVariant::Lambda: {
            const double le = p_T - target.eps1;
            const double ld = p_T + target.eps2;
            const auto [phi1, phi2] = boin_inverse(p_T, le, ld);
            return {phi1, phi2, le, ld};
        }
    }
    throw ParameterError("unknown BOIN variant");
}

// ---------------------------------------------------------------------------
// Safety rule
// ---------------------------------------------------------------------------

inline double prob_above_target(double p_T, DoseTally tally, BetaPrior prior = {}) {
    const auto post = posterior(tally, prior);
    return num::beta_sf(post.alpha, post.beta, p_T);
}

// True when the current dose (and everything above it) should be excluded:
// enough patients and Pr(p > p_T | data) strictly above the threshold.
inline bool safety_exclude(const TargetSpec& target, DoseTally tally, double threshold = 0.95,
                           int min_n = 3, BetaPrior prior = {}) {
    tally.validate();
    if (!(threshold > 0.5 && threshold < 1.0)) throw ParameterError("safety threshold must be in (0.5,1)");
    if (min_n < 1) throw ParameterError("safety min_n must be >= 1");
    if (tally.n < min_n) return false;
    return prob_above_target(target.p_T, tally, prior) > threshold;
}

// ---------------------------------------------------------------------------
// 3+3
// ---------------------------------------------------------------------------

struct ThreePlusThreeStep {
    Decision decision = Decision::Stay;
    bool exclude_current = false;
    bool complete = false;
    std::optional<int> mtd;  // set when the design declares (complete && dose found)
};

// One step of the standard 3+3 after a cohort of three has been added at
// `current`. Doses at index >= `admissible` are already ruled out as too toxic.
inline ThreePlusThreeStep three_plus_three_decide(std::span<const DoseTally> tallies, int admissible,
                                                  int current, int cohort_size = 3) {
    if (cohort_size != 3) throw ConfigError("3+3 requires cohort size 3");
    const int doses = static_cast<int>(tallies.size());
    if (current < 0 || current >= doses || current >= admissible)
        throw ParameterError("3+3 state is inconsistent");
    const DoseTally t = tallies[static_cast<std::size_t>(current)];
    t.validate();
    const bool top = current == doses - 1;
    const bool above_excluded = !top && current + 1 >= admissible;

    auto de_escalate = [&]() {
        ThreePlusThreeStep s{Decision::DeEscalate, true, false, std::nullopt};
        if (current == 0) {
            s.decision = Decision::StopTrial;
            s.complete = true;
        } else if (tallies[static_cast<std::size_t>(current - 1)].n >= 6) {
            s.complete = true;
            s.mtd = current - 1;
        }
        return s;
    };

    if (t.n == 3) {
        if (t.x == 0) {
            if (top || above_excluded) return {Decision::Stay, false, false, std::nullopt};
            return {Decision::Escalate, false, false, std::nullopt};
        }
        if (t.x == 1) return {Decision::Stay, false, false, std::nullopt};
        return de_escalate();
    }
    if (t.n == 6) {
        if (t.x <= 1) {
            if (top || above_excluded) return {Decision::Stay, false, true, current};
            return {Decision::Escalate, false, false, std::nullopt};
        }
        return de_escalate();
    }
    throw ConfigError("3+3 tally must hold 3 or 6 patients, got " + std::to_string(t.n));
}

// ---------------------------------------------------------------------------
// Design specification
// ---------------------------------------------------------------------------

enum class Family { TPI, mTPI, mTPI2, CCD, BOIN, ThreePlusThree, CRM };

struct TpiParams {
    double k1 = 1.0;
    double k2 = 1.5;
};
struct MtpiParams {};
struct Mtpi2Params {};
struct CcdParams {
    std::optional<double> delta;  // falls back to the published table
    bool safety = false;
};
struct BoinParams {
    BoinVariant variant = BoinVariant::Default;
};
struct ThreePlusThreeParams {};
struct CrmParams {
    std::vector<double> skeleton;  // empty: default skeleton sized to the dose count
    double prior_sd = 1.34;
    bool no_skip = true;
    bool safety = false;
};

// Alternative order matches Family.
using FamilyParams = std::variant<TpiParams, MtpiParams, Mtpi2Params, CcdParams, BoinParams,
                                  ThreePlusThreeParams, CrmParams>;

struct DesignSpec {
    FamilyParams params = Mtpi2Params{};
    TargetSpec target{};
    double safety_threshold = 0.95;
    int safety_min_n = 3;
    BetaPrior prior{};
    // Pseudo-counts for the end-of-trial isotonic estimates.
    BetaPrior selection_prior{0.005, 0.005};

    Family family() const { return static_cast<Family>(params.index()); }

    template <class P>
    const P& get() const {
        return std::get<P>(params);
    }

    // Stable identifier used on the command line and in result files.
    std::string id() const {
        switch (family()) {
            case Family::TPI: return "tpi";
            case Family::mTPI: return "mtpi";
            case Family::mTPI2: return "mtpi2";
            case Family::CCD: return "ccd";
            case Family::BOIN:
                switch (get<BoinParams>().variant) {
                    case BoinVariant::Default: return "boin-default";
                    case BoinVariant::Epsilon: return "boin-epsilon";
                    case BoinVariant::Lambda: return "boin-lambda";
                }
                break;
            case Family::ThreePlusThree: return "3+3";
            case Family::CRM: return "crm";
        }
        return "?";
    }

    // Decisions are a fixed function of (x, n).
    bool is_fixed_rule() const { return family() != Family::CRM && family() != Family::ThreePlusThree; }

    bool uses_safety_rule() const {
        switch (family()) {
            case Family::TPI:
            case Family::mTPI:
            case Family::mTPI2:
            case Family::BOIN: return true;
            case Family::CCD: return get<CcdParams>().safety;
            case Family::CRM: return get<CrmParams>().safety;
            case Family::ThreePlusThree: return false;
        }
        return false;
    }

    void validate() const {
        target.validate();
        if (!(safety_threshold > 0.5 && safety_threshold < 1.0))
            throw ConfigError("safety threshold must lie in (0.5,1)");
        if (safety_min_n < 1) throw ConfigError("safety min_n must be >= 1");
        if (!(prior.a > 0.0) || !(prior.b > 0.0)) throw ConfigError("beta prior must be positive");
        if (!(selection_prior.a > 0.0) || !(selection_prior.b > 0.0))
            throw ConfigError("selection prior must be positive");
        switch (family()) {
            case Family::TPI: {
                const auto& p = get<TpiParams>();
                if (!(p.k1 > 0.0) || !(p.k2 > 0.0)) throw ConfigError("TPI k1, k2 must be positive");
                break;
            }
            case Family::mTPI:
            case Family::mTPI2:
                if (!(target.eps1 + target.eps2 > 0.0)) throw ConfigError("eps1 + eps2 must be positive");
                break;
            case Family::CCD: {
                const auto& p = get<CcdParams>();
                if (p.delta && !(*p.delta > 0.0 && *p.delta < target.p_T && target.p_T + *p.delta < 1.0))
                    throw ConfigError("CCD delta out of range");
                break;
            }
            case Family::CRM: {
                const auto& p = get<CrmParams>();
                if (!(p.prior_sd > 0.0)) throw ConfigError("CRM prior sd must be positive");
                break;
            }
            default: break;
        }
    }
};

// Builds a design from its identifier:
// tpi, mtpi, mtpi2, ccd, boin (= boin-default), boin-default, boin-epsilon,
// boin-lambda, 3+3, crm.
inline DesignSpec make_design(std::string_view id, const TargetSpec& target) {
    DesignSpec d;
    d.target = target;
    if (id == "tpi") d.params = TpiParams{};
    else if (id == "mtpi") d.params = MtpiParams{};
    else if (id == "mtpi2" || id == "mtpi-2") d.params = Mtpi2Params{};
    else if (id == "ccd") d.params = CcdParams{};
    else if (id == "boin" || id == "boin-default") d.params = BoinParams{BoinVariant::Default};
    else if (id == "boin-epsilon") d.params = BoinParams{BoinVariant::Epsilon};
    else if (id == "boin-lambda") d.params = BoinParams{BoinVariant::Lambda};
    else if (id == "3+3" || id == "3plus3") d.params = ThreePlusThreeParams{};
    else if (id == "crm") d.params = CrmParams{};
    else throw ConfigError("unknown design '" + std::string(id) + "'");
    d.validate();
    return d;
}

inline const std::vector<std::string>& design_ids() {
    static const std::vector<std::string> ids{"tpi",          "mtpi",        "mtpi2", "ccd",
                                              "boin-default", "boin-epsilon", "boin-lambda",
                                              "3+3",          "crm"};
    return ids;
}

// A fixed-rule design with its derived constants (BOIN boundaries, CCD delta,
// mTPI-2 tiles) computed once.
class FixedRule {
public:
    explicit FixedRule(DesignSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        if (!spec_.is_fixed_rule())
            throw ConfigError("design '" + spec_.id() + "' has no fixed decision rule");
        switch (spec_.family()) {
            case Family::mTPI2: tiles_ = mtpi2_partition(spec_.target); break;
            case Family::CCD: {
                const auto& p = spec_.get<CcdParams>();
                delta_ = p.delta ? *p.delta : ccd_delta(spec_.target.p_T);
                break;
            }
            case Family::BOIN:
                boin_ = boin_variant_bounds(spec_.target.p_T, spec_.get<BoinParams>().variant, spec_.target);
                break;
            default: break;
        }
    }

    const DesignSpec& spec() const { return spec_; }
    const std::vector<TaggedInterval>& tiles() const { return tiles_; }
    double ccd_delta_value() const { return delta_; }
    const BoinBoundaries& boin() const { return boin_; }

    // Up-and-down rule alone.
    Decision rule(DoseTally t) const {
        switch (spec_.family()) {
            case Family::TPI: {
                const auto& p = spec_.get<TpiParams>();
                return tpi_decide(spec_.target, p.k1, p.k2, t, spec_.prior);
            }
            case Family::mTPI: return mtpi_decide(spec_.target, t, spec_.prior);
            case Family::mTPI2: return mtpi2_decide(tiles_, t, spec_.prior);
            case Family::CCD: return ccd_decide(spec_.target.p_T, delta_, t);
            case Family::BOIN: return boin_decide(boin_, t);
            default: break;
        }
        throw ConfigError("not a fixed-rule design");
    }

    bool safety_fires(DoseTally t) const {
        return spec_.uses_safety_rule() &&
               safety_exclude(spec_.target, t, spec_.safety_threshold, spec_.safety_min_n, spec_.prior);
    }

    // Rule with the safety overlay: DeEscalateAndExclude where the rule fires.
    Decision decide(DoseTally t) const {
        if (safety_fires(t)) return Decision::DeEscalateAndExclude;
        return rule(t);
    }

private:
    DesignSpec spec_;
    std::vector<TaggedInterval> tiles_;
    double delta_ = 0.0;
    BoinBoundaries boin_{};
};

inline Decision decide(const DesignSpec& spec, DoseTally tally) { return FixedRule(spec).decide(tally); }

}  // namespace ivd
