#pragma once

// Decision tables R(x, n) for fixed-rule designs, empirical decision
// frequencies for CRM, mean decision scores and table-difference grids.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ivd/design.hpp"
#include "ivd/scenarios.hpp"
#include "ivd/simulator.hpp"

namespace ivd {

// Cells are stored column by column: index n(n+1)/2 + x.
inline std::size_t cell_index(int x, int n) { return static_cast<std::size_t>(n * (n + 1) / 2 + x); }

struct DecisionTable {
    std::string design;
    TargetSpec target;
    int n_max = 0;
    std::vector<Decision> cells;

    Decision at(int x, int n) const {
        if (n < 0 || n > n_max || x < 0 || x > n) throw ParameterError("table cell out of range");
        return cells[cell_index(x, n)];
    }
};

inline DecisionTable decision_table(const DesignSpec& design, int n_max) {
    if (n_max < 1) throw ParameterError("N_max must be >= 1");
    if (!design.is_fixed_rule())
        throw ConfigError("design '" + design.id() + "' has no fixed table; use crm_empirical_table");
    const FixedRule rule(design);
    DecisionTable t{design.id(), design.target, n_max, {}};
    t.cells.reserve(cell_index(0, n_max + 1));
    for (int n = 0; n <= n_max; ++n)
        for (int x = 0; x <= n; ++x) t.cells.push_back(rule.decide({x, n}));
    return t;
}

struct EmpiricalCell {
    std::array<long long, 3> counts{};  // E, S, D
    long long visits() const { return counts[0] + counts[1] + counts[2]; }
    std::array<double, 3> proportions() const {
        const double v = static_cast<double>(visits());
        if (v == 0) return {0.0, 0.0, 0.0};
        return {counts[0] / v, counts[1] / v, counts[2] / v};
    }
};

struct EmpiricalTable {
    int n_max = 0;
    std::vector<EmpiricalCell> cells;

    const EmpiricalCell& at(int x, int n) const {
        if (n < 0 || n > n_max || x < 0 || x > n) throw ParameterError("table cell out of range");
        return cells[cell_index(x, n)];
    }
};

// Tallies every cohort decision by the cumulative (x, n) at the dose where it
// was taken. Stops and exclusions count as de-escalations.
inline EmpiricalTable crm_empirical_table(std::span<const TrialRecord> records, int n_max) {
    if (records.empty()) throw ParameterError("empirical table needs at least one trial record");
    if (n_max < 1) throw ParameterError("N_max must be >= 1");
    EmpiricalTable t{n_max, std::vector<EmpiricalCell>(cell_index(0, n_max + 1))};
    for (const auto& r : records)
        for (const auto& c : r.cohorts) {
            if (c.cumulative.n > n_max) continue;
            const int k = decision_score(c.rule_decision) - 1;
            ++t.cells[cell_index(c.cumulative.x, c.cumulative.n)].counts[static_cast<std::size_t>(k)];
        }
    return t;
}

// 1 q(E) + 2 q(S) + 3 q(D).
inline double mean_decision_score(std::array<double, 3> q) {
    const double sum = q[0] + q[1] + q[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("decision proportions must sum to 1");
    for (double v : q)
        if (v < 0.0) throw ParameterError("decision proportions must be non-negative");
    return q[0] + 2.0 * q[1] + 3.0 * q[2];
}

// Per-cell scores; empty where a cell was never visited.
struct ScoreGrid {
    std::string label;
    int n_max = 0;
    std::vector<std::optional<double>> cells;

    const std::optional<double>& at(int x, int n) const {
        if (n < 0 || n > n_max || x < 0 || x > n) throw ParameterError("table cell out of range");
        return cells[cell_index(x, n)];
    }
};

inline ScoreGrid score_grid(const DecisionTable& t) {
    ScoreGrid g{t.design, t.n_max, {}};
    g.cells.reserve(t.cells.size());
    for (auto d : t.cells) g.cells.emplace_back(static_cast<double>(decision_score(d)));
    return g;
}

inline ScoreGrid score_grid(const EmpiricalTable& t, std::string label = "crm") {
    ScoreGrid g{std::move(label), t.n_max, {}};
    g.cells.reserve(t.cells.size());
    for (const auto& c : t.cells)
        g.cells.push_back(c.visits() > 0 ? std::optional<double>(mean_decision_score(c.proportions()))
                                         : std::nullopt);
    return g;
}

// Sum over n = 1..N and x = 1..n of score1 - score2; cells missing from
// either grid are skipped.
inline double table_diff(const ScoreGrid& a, const ScoreGrid& b, int n) {
    if (a.n_max != b.n_max) throw ParameterError("tables differ in shape");
    if (n < 1 || n > a.n_max) throw ParameterError("N out of range for the tables");
    double sum = 0.0;
    for (int m = 1; m <= n; ++m)
        for (int x = 1; x <= m; ++x) {
            const auto& s1 = a.at(x, m);
            const auto& s2 = b.at(x, m);
            if (s1 && s2) sum += *s1 - *s2;
        }
    return sum;
}

// Cells skipped by table_diff because one side was never visited.
inline int unvisited_cells(const ScoreGrid& a, const ScoreGrid& b, int n) {
    int count = 0;
    for (int m = 1; m <= n; ++m)
        for (int x = 1; x <= m; ++x)
            if (!a.at(x, m) || !b.at(x, m)) ++count;
    return count;
}

// A score grid as a function of (eps1, eps2); CRM providers ignore both.
using GridProvider = std::function<ScoreGrid(double eps1, double eps2)>;

inline GridProvider fixed_provider(DesignSpec design, int n_max) {
    return [design, n_max](double e1, double e2) {
        DesignSpec d = design;
        d.target.eps1 = e1;
        d.target.eps2 = e2;
        return score_grid(decision_table(d, n_max));
    };
}

inline GridProvider constant_provider(ScoreGrid grid) {
    return [grid](double, double) { return grid; };
}

struct DiffGrid {
    std::vector<double> eps1;
    std::vector<double> eps2;
    std::vector<std::vector<double>> diff;  // [i][j] for eps1[i], eps2[j]
};

inline std::vector<double> linspace(double lo, double hi, int count) {
    if (count < 1) throw ParameterError("grid needs at least one point");
    std::vector<double> v;
    for (int i = 0; i < count; ++i)
        v.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (count - 1));
    return v;
}

inline DiffGrid diff_grid(const GridProvider& first, const GridProvider& second, std::vector<double> eps1,
                          std::vector<double> eps2, int n, int workers = 1) {
    if (eps1.empty() || eps2.empty()) throw ParameterError("epsilon ranges must be non-empty");
    DiffGrid g{std::move(eps1), std::move(eps2), {}};
    g.diff.assign(g.eps1.size(), std::vector<double>(g.eps2.size(), 0.0));
    const std::size_t cells = g.eps1.size() * g.eps2.size();
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    auto work = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= cells) return;
            const std::size_t i = k / g.eps2.size();
            const std::size_t j = k % g.eps2.size();
            try {
                g.diff[i][j] = table_diff(first(g.eps1[i], g.eps2[j]), second(g.eps1[i], g.eps2[j]), n);
            } catch (...) {
                std::lock_guard lock(m);
                if (!failure) failure = std::current_exception();
                next.store(cells);
            }
        }
    };
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(cells)));
    if (w == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < w; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return g;
}

// CRM decision frequencies from simulated trials on a scenario set.
inline EmpiricalTable crm_table_from_scenarios(const DesignSpec& crm, const std::vector<Scenario>& scenarios,
                                               const TrialConfig& cfg, int trials, int workers = 1) {
    if (crm.family() != Family::CRM) throw ConfigError("expected a CRM design");
    auto batch = run_batch({crm}, scenarios, cfg, trials, {workers, true});
    std::vector<TrialRecord> all;
    for (auto& rs : batch.records)
        for (auto& r : rs) all.push_back(std::move(r));
    return crm_empirical_table(all, cfg.sample_size);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Header "x/n,1,...,N"; row x lists R(x, n) for n = 1..N and is blank for n < x.
inline std::string table_to_csv(const DecisionTable& t) {
    std::string out = "x/n";
    for (int n = 1; n <= t.n_max; ++n) out += "," + std::to_string(n);
    out += '\n';
    for (int x = 0; x <= t.n_max; ++x) {
        out += std::to_string(x);
        for (int n = 1; n <= t.n_max; ++n) {
            out += ',';
            if (x <= n) out += letter(t.at(x, n));
        }
        out += '\n';
    }
    return out;
}

inline DecisionTable table_from_csv(std::string_view text) {
    DecisionTable t;
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        for (const auto& f : detail::split_csv_line(line, line_no)) fields.push_back(f.text);
        rows.push_back(std::move(fields));
    }
    if (rows.empty() || rows[0].empty() || rows[0][0] != "x/n") throw ParseError("header must start with x/n", 1, 1);
    t.n_max = static_cast<int>(rows[0].size()) - 1;
    if (t.n_max < 1 || static_cast<int>(rows.size()) != t.n_max + 2)
        throw ParseError("table must have rows x = 0..N", 1, 1);
    t.cells.assign(cell_index(0, t.n_max + 1), Decision::Stay);
    for (int n = 0; n <= t.n_max; ++n) t.cells[cell_index(0, n)] = Decision::Stay;
    for (int x = 0; x <= t.n_max; ++x) {
        const auto& r = rows[static_cast<std::size_t>(x + 1)];
        if (static_cast<int>(r.size()) != t.n_max + 1)
            throw ParseError("wrong number of columns", static_cast<std::size_t>(x + 2), 1);
        for (int n = 1; n <= t.n_max; ++n) {
            const auto& f = r[static_cast<std::size_t>(n)];
            if (x > n) {
                if (!f.empty()) throw ParseError("cell above the diagonal must be empty", x + 2, n + 1);
                continue;
            }
            try {
                t.cells[cell_index(x, n)] = decision_from_letter(f);
            } catch (const ParameterError& e) {
                throw ParseError(e.what(), static_cast<std::size_t>(x + 2), static_cast<std::size_t>(n + 1));
            }
        }
    }
    return t;
}

// Header "x/n,1..N" with cells "qE;qS;qD;visits", blank when unvisited.
inline std::string empirical_to_csv(const EmpiricalTable& t) {
    std::string out = "x/n";
    for (int n = 1; n <= t.n_max; ++n) out += "," + std::to_string(n);
    out += '\n';
    char buf[96];
    for (int x = 0; x <= t.n_max; ++x) {
        out += std::to_string(x);
        for (int n = 1; n <= t.n_max; ++n) {
            out += ',';
            if (x > n) continue;
            const auto& c = t.at(x, n);
            if (c.visits() == 0) continue;
            const auto q = c.proportions();
            std::snprintf(buf, sizeof buf, "%.6f;%.6f;%.6f;%lld", q[0], q[1], q[2], c.visits());
            out += buf;
        }
        out += '\n';
    }
    return out;
}

// Header "eps1/eps2,<eps2 values>", one row per eps1.
inline std::string diff_grid_to_csv(const DiffGrid& g) {
    char buf[64];
    std::string out = "eps1/eps2";
    for (double e : g.eps2) {
        std::snprintf(buf, sizeof buf, ",%.6f", e);
        out += buf;
    }
    out += '\n';
    for (std::size_t i = 0; i < g.eps1.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6f", g.eps1[i]);
        out += buf;
        for (double v : g.diff[i]) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace ivd
