#pragma once

// Core value types shared by every design: targets, tallies, intervals,
// beta posteriors and the up-and-down decision codes.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ivd {

// Bad caller-supplied values (out-of-range probability, x > n, ...).
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A numerical routine failed to produce a trustworthy value.
struct ComputationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A design or trial configuration that cannot be run.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t line, std::size_t column)
        : std::runtime_error(what + " (line " + std::to_string(line) + ", column " +
                             std::to_string(column) + ")"),
          line(line),
          column(column) {}
    std::size_t line;
    std::size_t column;
};

// Comparisons of a point estimate against a boundary treat differences below
// this as equality; x/n values for realistic n are far further apart.
inline constexpr double kBoundaryTol = 1e-10;

inline bool is_probability(double p) { return std::isfinite(p) && p > 0.0 && p < 1.0; }

struct TargetSpec {
    double p_T = 0.3;
    double eps1 = 0.05;
    double eps2 = 0.05;

    static TargetSpec make(double p_T, double eps1, double eps2, double eps_cap = 0.3) {
        TargetSpec t{p_T, eps1, eps2};
        t.validate(eps_cap);
        return t;
    }

    void validate(double eps_cap = 0.3) const {
        if (!is_probability(p_T)) throw ParameterError("p_T must lie in (0,1)");
        if (!(eps1 >= 0.0) || !(eps2 >= 0.0)) throw ParameterError("eps1, eps2 must be >= 0");
        if (eps1 > eps_cap || eps2 > eps_cap)
            throw ParameterError("eps1, eps2 exceed the configured cap");
        if (!(p_T - eps1 > 0.0)) throw ParameterError("p_T - eps1 must be > 0");
        if (!(p_T + eps2 < 1.0)) throw ParameterError("p_T + eps2 must be < 1");
    }

    double lower() const { return p_T - eps1; }
    double upper() const { return p_T + eps2; }
};

struct DoseTally {
    int x = 0;  // DLTs
    int n = 0;  // patients treated

    void validate() const {
        if (n < 0 || x < 0 || x > n) throw ParameterError("tally requires 0 <= x <= n");
    }
    double rate() const { return n > 0 ? static_cast<double>(x) / n : 0.0; }
    friend bool operator==(const DoseTally&, const DoseTally&) = default;
};

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    static Interval make(double lo, double hi) {
        Interval iv{lo, hi};
        iv.validate();
        return iv;
    }
    void validate() const {
        if (!(lo >= 0.0 && lo < hi && hi <= 1.0))
            throw ParameterError("interval requires 0 <= lo < hi <= 1");
    }
    double length() const { return hi - lo; }
};

struct BetaPrior {
    double a = 1.0;
    double b = 1.0;
};

struct BetaPosterior {
    double alpha = 1.0;
    double beta = 1.0;

    double mean() const { return alpha / (alpha + beta); }
    double variance() const {
        const double s = alpha + beta;
        return alpha * beta / (s * s * (s + 1.0));
    }
    double sd() const { return std::sqrt(variance()); }
};

enum class Decision : std::uint8_t { Escalate, Stay, DeEscalate, DeEscalateAndExclude, StopTrial };

inline std::string_view letter(Decision d) {
    switch (d) {
        case Decision::Escalate: return "E";
        case Decision::Stay: return "S";
        case Decision::DeEscalate: return "D";
        case Decision::DeEscalateAndExclude: return "DU";
        case Decision::StopTrial: return "STOP";
    }
    return "?";
}

inline Decision decision_from_letter(std::string_view s) {
    if (s == "E") return Decision::Escalate;
    if (s == "S") return Decision::Stay;
    if (s == "D") return Decision::DeEscalate;
    if (s == "DU") return Decision::DeEscalateAndExclude;
    if (s == "STOP") return Decision::StopTrial;
    throw ParameterError("unknown decision code '" + std::string(s) + "'");
}

// E=1, S=2, D=3; exclusion and stopping are de-escalations for scoring.
inline int decision_score(Decision d) {
    switch (d) {
        case Decision::Escalate: return 1;
        case Decision::Stay: return 2;
        default: return 3;
    }
}

// Safety ordering used to break ties: larger is safer.
inline int safety_rank(Decision d) { return decision_score(d); }

}  // namespace ivd
