#pragma once

// JSON forms of designs, trial configurations and per-tally decision
// diagnostics.

#include <cstdio>
#include <string>

#include "json.hpp"

#include "ivd/design.hpp"
#include "ivd/simulator.hpp"

namespace ivd {

using json = nlohmann::json;

namespace detail {

template <class T>
T field(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("field '") + key + "' has the wrong type");
    }
}

}  // namespace detail

// {"design": id, "p_T", "eps": [e1, e2] or "eps1"/"eps2", optional "k1", "k2",
//  "delta", "safety", "skeleton", "prior_sd", "no_skip", "safety_threshold",
//  "safety_min_n", "prior": {"a", "b"}}
inline DesignSpec design_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("design must be a JSON object");
    if (!j.contains("design") || !j["design"].is_string()) throw ConfigError("missing 'design' identifier");
    TargetSpec t;
    t.p_T = detail::field(j, "p_T", 0.3);
    if (j.contains("eps")) {
        const auto& e = j["eps"];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
            throw ConfigError("'eps' must be a pair of numbers");
        t.eps1 = e[0].get<double>();
        t.eps2 = e[1].get<double>();
    } else {
        t.eps1 = detail::field(j, "eps1", 0.05);
        t.eps2 = detail::field(j, "eps2", 0.05);
    }
    try {
        t.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    DesignSpec d = make_design(j["design"].get<std::string>(), t);
    switch (d.family()) {
        case Family::TPI:
            d.params = TpiParams{detail::field(j, "k1", 1.0), detail::field(j, "k2", 1.5)};
            break;
        case Family::CCD: {
            CcdParams p;
            if (j.contains("delta") && !j["delta"].is_null()) p.delta = detail::field(j, "delta", 0.0);
            p.safety = detail::field(j, "safety", false);
            d.params = p;
            break;
        }
        case Family::CRM: {
            CrmParams p;
            p.skeleton = detail::field(j, "skeleton", std::vector<double>{});
            p.prior_sd = detail::field(j, "prior_sd", 1.34);
            p.no_skip = detail::field(j, "no_skip", true);
            p.safety = detail::field(j, "safety", false);
            if (!p.skeleton.empty()) {
                try {
                    CrmModel{p.skeleton, p.prior_sd}.validate();
                } catch (const ParameterError& e) {
                    throw ConfigError(e.what());
                }
            }
            d.params = p;
            break;
        }
        default: break;
    }
    d.safety_threshold = detail::field(j, "safety_threshold", 0.95);
    d.safety_min_n = detail::field(j, "safety_min_n", 3);
    if (j.contains("prior")) {
        d.prior.a = detail::field(j["prior"], "a", 1.0);
        d.prior.b = detail::field(j["prior"], "b", 1.0);
    }
    d.validate();
    return d;
}

inline json design_to_json(const DesignSpec& d) {
    json j{{"design", d.id()},
           {"p_T", d.target.p_T},
           {"eps", {d.target.eps1, d.target.eps2}},
           {"safety_threshold", d.safety_threshold},
           {"safety_min_n", d.safety_min_n},
           {"prior", {{"a", d.prior.a}, {"b", d.prior.b}}}};
    switch (d.family()) {
        case Family::TPI: {
            const auto& p = d.get<TpiParams>();
            j["k1"] = p.k1;
            j["k2"] = p.k2;
            break;
        }
        case Family::CCD: {
            const auto& p = d.get<CcdParams>();
            j["delta"] = p.delta ? json(*p.delta) : json(nullptr);
            j["safety"] = p.safety;
            break;
        }
        case Family::CRM: {
            const auto& p = d.get<CrmParams>();
            j["skeleton"] = p.skeleton;
            j["prior_sd"] = p.prior_sd;
            j["no_skip"] = p.no_skip;
            j["safety"] = p.safety;
            break;
        }
        default: break;
    }
    return j;
}

inline TrialConfig trial_config_from_json(const json& j, int doses) {
    TrialConfig c;
    if (!j.is_null() && !j.is_object()) throw ConfigError("trial config must be an object");
    if (j.is_object()) {
        c.sample_size = detail::field(j, "sample_size", 30);
        c.cohort_size = detail::field(j, "cohort_size", 3);
        c.start_dose = detail::field(j, "start_dose", 1) - 1;
        c.seed = detail::field<std::uint64_t>(j, "seed", 0);
    }
    c.validate(doses);
    return c;
}

inline json trial_config_to_json(const TrialConfig& c) {
    return {{"sample_size", c.sample_size},
            {"cohort_size", c.cohort_size},
            {"start_dose", c.start_dose + 1},
            {"seed", c.seed}};
}

namespace detail {

inline json score_json(const IntervalScore& s) {
    return {{"interval", {s.interval.lo, s.interval.hi}},
            {"decision", letter(s.decision)},
            {"probability", s.probability},
            {"upm", s.upm}};
}

}  // namespace detail

// Decision for a tally plus the quantities it was derived from.
inline json explain(const DesignSpec& d, DoseTally t) {
    t.validate();
    const FixedRule rule(d);
    json j{{"design", d.id()},
           {"x", t.x},
           {"n", t.n},
           {"decision", letter(rule.decide(t))},
           {"rule_decision", letter(rule.rule(t))}};
    if (d.uses_safety_rule()) {
        j["safety"] = {{"prob_above_target", prob_above_target(d.target.p_T, t, d.prior)},
                       {"threshold", d.safety_threshold},
                       {"min_n", d.safety_min_n},
                       {"fires", rule.safety_fires(t)}};
    }
    switch (d.family()) {
        case Family::mTPI: {
            json arr = json::array();
            for (const auto& s : mtpi_scores(d.target, t, d.prior)) arr.push_back(detail::score_json(s));
            j["upms"] = arr;
            break;
        }
        case Family::mTPI2: {
            json arr = json::array();
            for (const auto& s : mtpi2_scores(rule.tiles(), t, d.prior)) arr.push_back(detail::score_json(s));
            j["upms"] = arr;
            break;
        }
        case Family::TPI: {
            const auto& p = d.get<TpiParams>();
            const auto s = tpi_scores(d.target, p.k1, p.k2, t, d.prior);
            json arr = json::array();
            for (const auto& e : s.intervals) arr.push_back(detail::score_json(e));
            j["sigma"] = s.sigma;
            j["intervals"] = arr;
            break;
        }
        case Family::CCD:
            j["boundaries"] = {{"delta", rule.ccd_delta_value()},
                               {"lower", d.target.p_T - rule.ccd_delta_value()},
                               {"upper", d.target.p_T + rule.ccd_delta_value()}};
            j["p_hat"] = t.rate();
            break;
        case Family::BOIN: {
            const auto& b = rule.boin();
            j["boundaries"] = {{"phi1", b.phi1}, {"phi2", b.phi2}, {"lambda_e", b.lambda_e}, {"lambda_d", b.lambda_d}};
            j["p_hat"] = t.rate();
            break;
        }
        default: break;
    }
    return j;
}

// Human-readable diagnostics, one quantity per line.
inline std::string explain_text(const json& e) {
    char buf[160];
    std::string out;
    auto line = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        out += buf;
        out += '\n';
    };
    line("design %s  x=%d n=%d", e["design"].get<std::string>().c_str(), e["x"].get<int>(), e["n"].get<int>());
    line("rule decision %s", e["rule_decision"].get<std::string>().c_str());
    for (const char* key : {"upms", "intervals"})
        if (e.contains(key))
            for (const auto& s : e[key])
                line("  %-2s (%.4f, %.4f)  prob %.6f  upm %.6f", s["decision"].get<std::string>().c_str(),
                     s["interval"][0].get<double>(), s["interval"][1].get<double>(), s["probability"].get<double>(),
                     s["upm"].get<double>());
    if (e.contains("sigma")) line("posterior sd %.6f", e["sigma"].get<double>());
    if (e.contains("boundaries")) {
        const auto& b = e["boundaries"];
        if (b.contains("lambda_e"))
            line("lambda_e %.6f  lambda_d %.6f  phi1 %.6f  phi2 %.6f", b["lambda_e"].get<double>(),
                 b["lambda_d"].get<double>(), b["phi1"].get<double>(), b["phi2"].get<double>());
        else
            line("delta %.4f  interval [%.4f, %.4f]", b["delta"].get<double>(), b["lower"].get<double>(),
                 b["upper"].get<double>());
        line("p_hat %.6f", e["p_hat"].get<double>());
    }
    if (e.contains("safety"))
        line("Pr(p > p_T | data) %.6f  threshold %.2f  %s", e["safety"]["prob_above_target"].get<double>(),
             e["safety"]["threshold"].get<double>(), e["safety"]["fires"].get<bool>() ? "exclude" : "keep");
    return out;
}

}  // namespace ivd
