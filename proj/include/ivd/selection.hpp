#pragma once

// End-of-trial MTD selection (isotonic regression of posterior means) and the
// ground-truth MTD used to score simulated trials.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "ivd/types.hpp"

namespace ivd {

// Weighted least-squares non-decreasing fit by pool-adjacent-violators.
inline std::vector<double> pava(std::span<const double> values, std::span<const double> weights) {
    if (values.size() != weights.size()) throw ParameterError("pava: values and weights differ in length");
    for (double w : weights)
        if (!(w > 0.0)) throw ParameterError("pava: weights must be positive");

    struct Block {
        double mean;
        double weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    blocks.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        blocks.push_back({values[i], weights[i], 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
            Block top = blocks.back();
            blocks.pop_back();
            Block& prev = blocks.back();
            const double w = prev.weight + top.weight;
            prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w;
            prev.weight = w;
            prev.count += top.count;
        }
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean);
    return out;
}

struct SelectionResult {
    std::optional<int> selected;
    // Isotonic estimate per dose; NaN for untried doses.
    std::vector<double> isotonic_estimates;
};

// Posterior means (a + x)/(a + b + n) of tried doses, smoothed by PAVA with
// pseudo-count weights, then the tried non-excluded dose closest to p_T.
// Equal distances: the lower candidate if its estimate exceeds p_T, otherwise
// the higher one.
// Doses at index >= `admissible` are excluded.
inline SelectionResult select_mtd(std::span<const DoseTally> tallies, int admissible,
                                  const TargetSpec& target, BetaPrior prior = {}) {
    SelectionResult res;
    res.isotonic_estimates.assign(tallies.size(), std::nan(""));

    std::vector<std::size_t> tried;
    std::vector<double> means, weights;
    for (std::size_t i = 0; i < tallies.size(); ++i) {
        const auto& t = tallies[i];
        t.validate();
        if (t.n == 0) continue;
        tried.push_back(i);
        means.push_back((prior.a + t.x) / (prior.a + prior.b + t.n));
        weights.push_back(t.n + prior.a + prior.b);
    }
    if (tried.empty()) return res;
    const auto iso = pava(means, weights);
    for (std::size_t k = 0; k < tried.size(); ++k) res.isotonic_estimates[tried[k]] = iso[k];

    constexpr double tie_tol = 1e-12;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < tried.size(); ++k) {
        if (static_cast<int>(tried[k]) >= admissible) continue;
        best_gap = std::min(best_gap, std::abs(iso[k] - target.p_T));
    }
    if (!std::isfinite(best_gap)) return res;

    std::vector<std::size_t> ties;
    for (std::size_t k = 0; k < tried.size(); ++k) {
        if (static_cast<int>(tried[k]) >= admissible) continue;
        if (std::abs(iso[k] - target.p_T) <= best_gap + tie_tol) ties.push_back(k);
    }
    const std::size_t lowest = ties.front();
    const std::size_t chosen = iso[lowest] > target.p_T ? lowest : ties.back();
    res.selected = static_cast<int>(tried[chosen]);
    return res;
}

struct TrueMtd {
    std::vector<int> doses;  // empty means 'none'
    int rule = 3;            // which rule produced the set (1, 2 or 3)

    bool none() const { return doses.empty(); }
    bool contains(int dose) const {
        for (int d : doses)
            if (d == dose) return true;
        return false;
    }
    int highest() const { return doses.empty() ? -1 : doses.back(); }
};

// Rule 1: every dose inside the closed equivalence interval. Rule 2: else the
// highest dose strictly below p_T. Rule 3: else none.
inline TrueMtd true_mtd(std::span<const double> probs, const TargetSpec& target) {
    TrueMtd t;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (probs[i] >= target.lower() - kBoundaryTol && probs[i] <= target.upper() + kBoundaryTol)
            t.doses.push_back(static_cast<int>(i));
    if (!t.doses.empty()) {
        t.rule = 1;
        return t;
    }
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] < target.p_T) {
            t.doses.push_back(static_cast<int>(i));
            t.rule = 2;
            return t;
        }
    }
    t.rule = 3;
    return t;
}

}  // namespace ivd
