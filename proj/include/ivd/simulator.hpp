#pragma once

// Trial-level state machine for every design family, single-trial simulation,
// operating-characteristic metrics and the parallel batch runner.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ivd/crm.hpp"
#include "ivd/design.hpp"
#include "ivd/rng.hpp"
#include "ivd/scenarios.hpp"
#include "ivd/selection.hpp"

namespace ivd {

struct TrialConfig {
    int sample_size = 30;
    int cohort_size = 3;
    int start_dose = 0;  // 0-based
    std::uint64_t seed = 0;

    void validate(int doses) const {
        if (cohort_size < 1) throw ConfigError("cohort size must be >= 1");
        if (sample_size < cohort_size) throw ConfigError("sample size must be >= cohort size");
        if (sample_size > 10000) throw ConfigError("sample size above 10000");
        if (start_dose < 0 || start_dose >= doses) throw ConfigError("start dose out of range");
    }
};

enum class StopReason { MaxN, SafetyStop, DesignComplete };

inline std::string_view stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::MaxN: return "max_n";
        case StopReason::SafetyStop: return "safety_stop";
        case StopReason::DesignComplete: return "design_complete";
    }
    return "?";
}

struct CohortRecord {
    int dose = 0;
    int dlt = 0;
    int size = 0;
    DoseTally cumulative{};          // tally at `dose` after this cohort
    Decision rule_decision{};        // what the design asked for
    Decision applied{};              // after capping at the ends of the dose range
    std::optional<int> next_dose;    // empty once the trial has stopped
    int admissible = 0;              // exclusion boundary after this cohort
};

struct TrialState {
    std::vector<DoseTally> tallies;
    int admissible = 0;  // doses at index >= admissible are excluded
    int current = 0;
    int treated = 0;
    bool stopped = false;
    std::optional<StopReason> stop_reason;
    std::optional<int> declared_mtd;  // 3+3 only
    std::vector<CohortRecord> cohorts;

    int doses() const { return static_cast<int>(tallies.size()); }
};

// Binds a design to a dose count and trial configuration. Decisions of
// fixed-rule designs are tabulated up to the sample size on construction.
class DesignEngine {
public:
    DesignEngine(DesignSpec spec, int doses, TrialConfig cfg) : spec_(std::move(spec)), doses_(doses), cfg_(cfg) {
        spec_.validate();
        if (doses < 1 || doses > 20) throw ConfigError("dose count must be in [1,20]");
        cfg_.validate(doses);
        if (spec_.is_fixed_rule()) {
            rule_.emplace(spec_);
            const int nmax = cfg_.sample_size;
            table_.reserve(static_cast<std::size_t>((nmax + 1) * (nmax + 2) / 2));
            for (int n = 0; n <= nmax; ++n)
                for (int x = 0; x <= n; ++x) table_.push_back(rule_->decide({x, n}));
        } else if (spec_.family() == Family::CRM) {
            const auto& p = spec_.get<CrmParams>();
            if (doses < 2) throw ConfigError("CRM needs at least 2 doses");
            CrmModel model{p.skeleton.empty() ? default_skeleton(doses) : p.skeleton, p.prior_sd};
            if (static_cast<int>(model.skeleton.size()) != doses)
                throw ConfigError("CRM skeleton length does not match the dose count");
            try {
                crm_.emplace(std::move(model));
            } catch (const ParameterError& e) {
                throw ConfigError(e.what());
            }
        } else if (cfg_.cohort_size != 3) {
            throw ConfigError("3+3 requires cohort size 3");
        }
    }

    const DesignSpec& spec() const { return spec_; }
    const TrialConfig& config() const { return cfg_; }
    int doses() const { return doses_; }

    TrialState start() const {
        TrialState s;
        s.tallies.assign(static_cast<std::size_t>(doses_), DoseTally{});
        s.admissible = doses_;
        s.current = cfg_.start_dose;
        return s;
    }

    // Fixed-rule decision (with safety overlay) for a tally.
    Decision fixed_decision(DoseTally t) const {
        if (!rule_) throw ConfigError("design '" + spec_.id() + "' has no fixed decision rule");
        t.validate();
        if (t.n <= cfg_.sample_size) return table_[static_cast<std::size_t>(t.n * (t.n + 1) / 2 + t.x)];
        return rule_->decide(t);
    }

    // Records a cohort at the current dose and moves the state forward.
    const CohortRecord& apply_cohort(TrialState& s, int dlt, int size) const {
        if (s.stopped) throw ConfigError("trial has already stopped");
        if (size < 1) throw ParameterError("cohort size must be >= 1");
        if (dlt < 0 || dlt > size) throw ParameterError("DLT count must lie in [0, cohort size]");
        if (static_cast<int>(s.tallies.size()) != doses_) throw ParameterError("state does not match the design");
        const int c = s.current;
        auto& t = s.tallies[static_cast<std::size_t>(c)];
        t.x += dlt;
        t.n += size;
        s.treated += size;

        CohortRecord rec;
        rec.dose = c;
        rec.dlt = dlt;
        rec.size = size;
        rec.cumulative = t;

        if (spec_.family() == Family::ThreePlusThree)
            step_three_plus_three(s, rec);
        else if (spec_.family() == Family::CRM)
            step_crm(s, rec);
        else
            step_fixed(s, rec);

        if (!s.stopped && s.treated + cfg_.cohort_size > cfg_.sample_size) {
            s.stopped = true;
            s.stop_reason = StopReason::MaxN;
        }
        rec.admissible = s.admissible;
        rec.next_dose = s.stopped ? std::nullopt : std::optional<int>(s.current);
        s.cohorts.push_back(rec);
        return s.cohorts.back();
    }

    // Outcome of a hypothetical cohort; `s` is left untouched.
    CohortRecord preview(const TrialState& s, int dlt, int size) const {
        TrialState copy = s;
        return apply_cohort(copy, dlt, size);
    }

    // Final MTD choice for the state.
    std::optional<int> select(const TrialState& s) const {
        if (s.stop_reason == StopReason::SafetyStop) return std::nullopt;
        switch (spec_.family()) {
            case Family::ThreePlusThree: {
                if (s.stop_reason == StopReason::DesignComplete) return s.declared_mtd;
                std::optional<int> best;
                for (int i = 0; i < std::min(s.admissible, doses_); ++i) {
                    const auto& t = s.tallies[static_cast<std::size_t>(i)];
                    if (t.n > 0 && 6 * t.x <= t.n) best = i;
                }
                return best;
            }
            case Family::CRM: {
                const auto mean = crm_->posterior_tox(s.tallies);
                std::optional<int> best;
                double gap = std::numeric_limits<double>::infinity();
                for (int i = 0; i < std::min(s.admissible, doses_); ++i) {
                    if (s.tallies[static_cast<std::size_t>(i)].n == 0) continue;
                    const double g = std::abs(mean[static_cast<std::size_t>(i)] - spec_.target.p_T);
                    if (g < gap) {
                        gap = g;
                        best = i;
                    }
                }
                return best;
            }
            default: return select_mtd(s.tallies, s.admissible, spec_.target, spec_.selection_prior).selected;
        }
    }

private:
    void stop(TrialState& s, StopReason r) const {
        s.stopped = true;
        s.stop_reason = r;
    }

    void step_fixed(TrialState& s, CohortRecord& rec) const {
        const int c = s.current;
        const Decision d = fixed_decision(rec.cumulative);
        rec.rule_decision = d;
        switch (d) {
            case Decision::DeEscalateAndExclude:
                s.admissible = std::min(s.admissible, c);
                if (c == 0) {
                    rec.applied = Decision::StopTrial;
                    stop(s, StopReason::SafetyStop);
                } else {
                    rec.applied = d;
                    s.current = c - 1;
                }
                break;
            case Decision::Escalate:
                if (c + 1 < s.admissible && c + 1 < doses_) {
                    rec.applied = d;
                    s.current = c + 1;
                } else {
                    rec.applied = Decision::Stay;
                }
                break;
            case Decision::DeEscalate:
                if (c > 0) {
                    rec.applied = d;
                    s.current = c - 1;
                } else {
                    rec.applied = Decision::Stay;
                }
                break;
            default: rec.applied = Decision::Stay; break;
        }
    }

    void step_crm(TrialState& s, CohortRecord& rec) const {
        const int c = s.current;
        const bool excluded = spec_.uses_safety_rule() &&
                              safety_exclude(spec_.target, rec.cumulative, spec_.safety_threshold,
                                             spec_.safety_min_n, spec_.prior);
        if (excluded) {
            s.admissible = std::min(s.admissible, c);
            if (c == 0) {
                rec.rule_decision = Decision::DeEscalateAndExclude;
                rec.applied = Decision::StopTrial;
                stop(s, StopReason::SafetyStop);
                return;
            }
        }
        const auto& p = spec_.get<CrmParams>();
        const auto mean = crm_->posterior_tox(s.tallies);
        const auto next = crm_select_dose(mean, s.tallies, s.admissible, c, spec_.target.p_T, p.no_skip);
        if (!next) {
            rec.rule_decision = Decision::StopTrial;
            rec.applied = Decision::StopTrial;
            stop(s, StopReason::SafetyStop);
            return;
        }
        rec.rule_decision = excluded ? Decision::DeEscalateAndExclude : crm_relative_decision(c, *next);
        rec.applied = rec.rule_decision;
        s.current = *next;
    }

    void step_three_plus_three(TrialState& s, CohortRecord& rec) const {
        const int c = s.current;
        const auto step = three_plus_three_decide(s.tallies, s.admissible, c, cfg_.cohort_size);
        rec.rule_decision = step.decision;
        rec.applied = step.decision;
        if (step.exclude_current) s.admissible = std::min(s.admissible, c);
        if (step.complete) {
            s.declared_mtd = step.mtd;
            stop(s, StopReason::DesignComplete);
            return;
        }
        if (step.decision == Decision::Escalate) s.current = c + 1;
        else if (step.decision == Decision::DeEscalate) s.current = c - 1;
    }

    DesignSpec spec_;
    int doses_;
    TrialConfig cfg_;
    std::optional<FixedRule> rule_;
    std::vector<Decision> table_;  // index n(n+1)/2 + x
    std::optional<CrmPosterior> crm_;
};

struct TrialRecord {
    std::vector<CohortRecord> cohorts;
    std::vector<DoseTally> tallies;
    StopReason stop_reason = StopReason::MaxN;
    std::optional<int> selected;
    int treated = 0;
    int admissible = 0;
};

inline TrialRecord run_engine(const DesignEngine& engine, std::span<const double> probs, StreamRng& rng) {
    if (static_cast<int>(probs.size()) != engine.doses()) throw ConfigError("scenario dose count mismatch");
    TrialState s = engine.start();
    const int size = engine.config().cohort_size;
    while (!s.stopped) {
        const int x = rng.binomial(size, probs[static_cast<std::size_t>(s.current)]);
        engine.apply_cohort(s, x, size);
    }
    TrialRecord r;
    r.selected = engine.select(s);
    r.cohorts = std::move(s.cohorts);
    r.tallies = std::move(s.tallies);
    r.stop_reason = *s.stop_reason;
    r.treated = s.treated;
    r.admissible = s.admissible;
    return r;
}

inline TrialRecord simulate_trial(const DesignSpec& design, const Scenario& scenario, const TrialConfig& cfg,
                                  StreamRng& rng) {
    scenario.validate();
    const DesignEngine engine(design, scenario.doses(), cfg);
    return run_engine(engine, scenario.probs, rng);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Fraction of patients at or below the highest true MTD; undefined when the
// truth is 'none'.
inline std::optional<double> metric_safety(const TrialRecord& r, const TrueMtd& truth) {
    if (truth.none() || r.treated == 0) return std::nullopt;
    int at_or_below = 0;
    for (int i = 0; i <= truth.highest() && i < static_cast<int>(r.tallies.size()); ++i)
        at_or_below += r.tallies[static_cast<std::size_t>(i)].n;
    return static_cast<double>(at_or_below) / r.treated;
}

inline bool selection_correct(const std::optional<int>& selected, const TrueMtd& truth) {
    if (truth.none()) return !selected.has_value();
    return selected && truth.contains(*selected);
}

inline double metric_reliability(std::span<const TrialRecord> records, const TrueMtd& truth) {
    if (records.empty()) throw ParameterError("reliability needs at least one record");
    std::size_t hits = 0;
    for (const auto& r : records) hits += selection_correct(r.selected, truth) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

// 1 - d * sum |p_i - p_T| n_i / (N * sum |p_i - p_T|).
inline std::optional<double> metric_accuracy(std::span<const DoseTally> tallies, std::span<const double> probs,
                                             double p_T) {
    if (tallies.size() != probs.size()) throw ParameterError("accuracy: tallies and probabilities differ in length");
    double total_gap = 0.0, weighted = 0.0;
    int patients = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double g = std::abs(probs[i] - p_T);
        total_gap += g;
        weighted += g * tallies[i].n;
        patients += tallies[i].n;
    }
    if (!(total_gap > 0.0) || patients == 0) return std::nullopt;
    return 1.0 - static_cast<double>(probs.size()) * weighted / (patients * total_gap);
}

inline std::optional<double> metric_accuracy(const TrialRecord& r, const Scenario& sc) {
    return metric_accuracy(r.tallies, sc.probs, sc.p_T);
}

// ---------------------------------------------------------------------------
// Batch runner
// ---------------------------------------------------------------------------

struct OcSummary {
    std::string design;
    std::string scenario;
    std::size_t scenario_index = 0;
    std::size_t design_index = 0;
    double p_T = 0.0;
    int trials = 0;
    std::optional<double> safety;   // mean over trials; empty when the truth is 'none'
    double reliability = 0.0;
    double reliability_se = 0.0;
    std::optional<double> accuracy;
    std::vector<double> selection;   // per dose, then 'none' last
    std::vector<double> allocation;  // fraction of all patients per dose
    double mean_patients = 0.0;
    double safety_stop_rate = 0.0;
    TrueMtd truth;
};

// Accumulates trials in index order so the summary is independent of scheduling.
class OcAccumulator {
public:
    OcAccumulator(const Scenario& sc, const TargetSpec& target)
        : scenario_(sc), truth_(true_mtd(sc.probs, target)),
          selected_(static_cast<std::size_t>(sc.doses()) + 1, 0),
          patients_(static_cast<std::size_t>(sc.doses()), 0) {}

    void add(const TrialRecord& r) {
        ++trials_;
        if (auto s = metric_safety(r, truth_)) {
            safety_sum_ += *s;
            ++safety_n_;
        }
        if (auto a = metric_accuracy(r, scenario_)) {
            accuracy_sum_ += *a;
            ++accuracy_n_;
        }
        hits_ += selection_correct(r.selected, truth_) ? 1 : 0;
        ++selected_[r.selected ? static_cast<std::size_t>(*r.selected) : selected_.size() - 1];
        for (std::size_t i = 0; i < patients_.size(); ++i) patients_[i] += r.tallies[i].n;
        treated_ += r.treated;
        safety_stops_ += r.stop_reason == StopReason::SafetyStop ? 1 : 0;
    }

    OcSummary summary() const {
        OcSummary o;
        o.scenario = scenario_.label;
        o.p_T = scenario_.p_T;
        o.trials = static_cast<int>(trials_);
        o.truth = truth_;
        if (trials_ == 0) return o;
        const double t = static_cast<double>(trials_);
        if (safety_n_ > 0) o.safety = safety_sum_ / static_cast<double>(safety_n_);
        if (accuracy_n_ > 0) o.accuracy = accuracy_sum_ / static_cast<double>(accuracy_n_);
        o.reliability = static_cast<double>(hits_) / t;
        o.reliability_se = std::sqrt(o.reliability * (1.0 - o.reliability) / t);
        for (auto c : selected_) o.selection.push_back(static_cast<double>(c) / t);
        for (auto p : patients_)
            o.allocation.push_back(treated_ > 0 ? static_cast<double>(p) / static_cast<double>(treated_) : 0.0);
        o.mean_patients = static_cast<double>(treated_) / t;
        o.safety_stop_rate = static_cast<double>(safety_stops_) / t;
        return o;
    }

private:
    Scenario scenario_;
    TrueMtd truth_;
    std::size_t trials_ = 0;
    double safety_sum_ = 0.0;
    std::size_t safety_n_ = 0;
    double accuracy_sum_ = 0.0;
    std::size_t accuracy_n_ = 0;
    std::size_t hits_ = 0;
    std::vector<std::size_t> selected_;
    std::vector<long long> patients_;
    long long treated_ = 0;
    std::size_t safety_stops_ = 0;
};

struct BatchOptions {
    int workers = 1;
    bool keep_records = false;
};

struct BatchResult {
    std::vector<OcSummary> summaries;            // design-major: index d * scenarios + s
    std::vector<std::vector<TrialRecord>> records;  // same indexing; filled with keep_records
};

// The design's target probability follows each scenario; its equivalence
// interval half-widths are kept.
inline DesignSpec retarget(DesignSpec d, double p_T) {
    d.target.p_T = p_T;
    return d;
}

inline BatchResult run_batch(const std::vector<DesignSpec>& designs, const std::vector<Scenario>& scenarios,
                             const TrialConfig& cfg, int trials, BatchOptions opt = {}) {
    if (trials < 1) throw ConfigError("trials per scenario must be >= 1");
    if (opt.workers < 1) throw ConfigError("workers must be >= 1");
    if (designs.empty() || scenarios.empty()) throw ConfigError("need at least one design and one scenario");

    // Configuration errors surface here, before any trial runs.
    std::vector<DesignEngine> engines;
    engines.reserve(designs.size() * scenarios.size());
    for (const auto& d : designs)
        for (const auto& s : scenarios) {
            s.validate();
            auto spec = retarget(d, s.p_T);
            try {
                spec.validate();
            } catch (const ParameterError& e) {
                throw ConfigError(std::string(e.what()));
            }
            TrialConfig c = cfg;
            engines.emplace_back(std::move(spec), s.doses(), c);
        }

    const std::size_t tasks = engines.size();
    BatchResult out;
    out.summaries.resize(tasks);
    if (opt.keep_records) out.records.resize(tasks);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= tasks) return;
            try {
                const std::size_t di = k / scenarios.size();
                const std::size_t si = k % scenarios.size();
                const auto& sc = scenarios[si];
                const auto& engine = engines[k];
                OcAccumulator acc(sc, engine.spec().target);
                for (int t = 0; t < trials; ++t) {
                    StreamRng rng(derive_key(cfg.seed, si, di, static_cast<std::uint64_t>(t)));
                    auto rec = run_engine(engine, sc.probs, rng);
                    acc.add(rec);
                    if (opt.keep_records) out.records[k].push_back(std::move(rec));
                }
                auto sum = acc.summary();
                sum.design = designs[di].id();
                sum.design_index = di;
                sum.scenario_index = si;
                out.summaries[k] = std::move(sum);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(tasks);
            }
        }
    };
    const int n = std::min<int>(opt.workers, static_cast<int>(tasks));
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace ivd
