#pragma once

// One-parameter power-model CRM: p_i(theta) = q_i^exp(theta), with
// theta ~ Normal(0, prior_sd^2). Posterior means come from a trapezoid rule on
// a fixed theta grid; the per-dose log-probabilities on that grid are
// tabulated once per model so each update is a handful of multiply-adds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <span>
#include <vector>

#include "ivd/types.hpp"

namespace ivd {

struct CrmModel {
    std::vector<double> skeleton;
    double prior_sd = 1.34;

    void validate() const {
        if (skeleton.size() < 2 || skeleton.size() > 20)
            throw ParameterError("CRM skeleton needs between 2 and 20 doses");
        for (std::size_t i = 0; i < skeleton.size(); ++i) {
            if (!is_probability(skeleton[i])) throw ParameterError("CRM skeleton values must lie in (0,1)");
            if (i > 0 && !(skeleton[i] > skeleton[i - 1]))
                throw ParameterError("CRM skeleton must be strictly increasing");
        }
        if (!(prior_sd > 0.0)) throw ParameterError("CRM prior sd must be positive");
    }
};

// (0.05, 0.10, 0.20, 0.30, 0.40, 0.50) truncated to `doses`; beyond six doses
// the tail rises linearly from 0.50 to 0.95.
inline std::vector<double> default_skeleton(int doses) {
    if (doses < 1 || doses > 20) throw ParameterError("dose count must be in [1,20]");
    static constexpr double base[] = {0.05, 0.10, 0.20, 0.30, 0.40, 0.50};
    std::vector<double> s;
    for (int i = 0; i < doses && i < 6; ++i) s.push_back(base[i]);
    for (int i = 6; i < doses; ++i) s.push_back(0.50 + 0.45 * (i - 5) / (doses - 5));
    return s;
}

struct TrialData {
    std::vector<DoseTally> tallies;
    int current = 0;
};

struct CrmMoments {
    std::vector<double> mean;
    std::vector<double> variance;
};

class CrmPosterior {
public:
    explicit CrmPosterior(CrmModel model, int grid_points = 1025, double half_width_sds = 10.0)
        : model_(std::move(model)) {
        model_.validate();
        if (grid_points < 3) throw ParameterError("CRM grid needs at least 3 points");
        const std::size_t k = static_cast<std::size_t>(grid_points);
        const std::size_t d = model_.skeleton.size();
        const double half = half_width_sds * model_.prior_sd;
        const double h = 2.0 * half / static_cast<double>(k - 1);
        weight_.resize(k);
        log_prior_.resize(k);
        log_p_.resize(k * d);
        log_q_.resize(k * d);
        p_.resize(k * d);
        for (std::size_t j = 0; j < k; ++j) {
            const double theta = -half + h * static_cast<double>(j);
            weight_[j] = (j == 0 || j + 1 == k) ? 0.5 * h : h;
            log_prior_[j] = -0.5 * theta * theta / (model_.prior_sd * model_.prior_sd);
            const double power = std::exp(theta);
            for (std::size_t i = 0; i < d; ++i) {
                const double lp = power * std::log(model_.skeleton[i]);
                log_p_[j * d + i] = lp;
                log_q_[j * d + i] = std::log(-std::expm1(lp));
                p_[j * d + i] = std::exp(lp);
            }
        }
    }

    const CrmModel& model() const { return model_; }
    std::size_t doses() const { return model_.skeleton.size(); }

    CrmMoments moments(std::span<const DoseTally> tallies) const {
        const std::size_t d = doses();
        if (tallies.size() != d) throw ParameterError("tally count does not match the skeleton");
        for (const auto& t : tallies) t.validate();
        const std::size_t k = weight_.size();

        std::vector<double> log_post(k);
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            double l = log_prior_[j];
            for (std::size_t i = 0; i < d; ++i) {
                const auto& t = tallies[i];
                if (t.n == 0) continue;
                if (t.x > 0) l += t.x * log_p_[j * d + i];
                if (t.n > t.x) l += (t.n - t.x) * log_q_[j * d + i];
            }
            log_post[j] = l;
            peak = std::max(peak, l);
        }
        if (!std::isfinite(peak)) throw ComputationError("CRM posterior vanished on the quadrature grid");

        double norm = 0.0;
        std::vector<double> m1(d, 0.0), m2(d, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const double w = weight_[j] * std::exp(log_post[j] - peak);
            norm += w;
            for (std::size_t i = 0; i < d; ++i) {
                const double p = p_[j * d + i];
                m1[i] += w * p;
                m2[i] += w * p * p;
            }
        }
        if (!(norm > 0.0) || !std::isfinite(norm)) throw ComputationError("CRM quadrature failed");
        CrmMoments out{std::vector<double>(d), std::vector<double>(d)};
        for (std::size_t i = 0; i < d; ++i) {
            out.mean[i] = m1[i] / norm;
            out.variance[i] = std::max(0.0, m2[i] / norm - out.mean[i] * out.mean[i]);
        }
        return out;
    }

    std::vector<double> posterior_tox(std::span<const DoseTally> tallies) const {
        return moments(tallies).mean;
    }

private:
    CrmModel model_;
    std::vector<double> weight_;
    std::vector<double> log_prior_;
    std::vector<double> log_p_;  // log p_i(theta_j), row-major [j][i]
    std::vector<double> log_q_;  // log(1 - p_i(theta_j))
    std::vector<double> p_;
};

inline std::vector<double> crm_posterior_tox(const CrmModel& model, const TrialData& data) {
    return CrmPosterior(model).posterior_tox(data.tallies);
}

// Dose whose posterior mean is closest to p_T (ties to the lower dose),
// restricted to doses below `admissible` and, with no_skip, to at most one level
// above the highest dose tried so far. nullopt when every dose is excluded.
inline std::optional<int> crm_select_dose(std::span<const double> post_mean,
                                          std::span<const DoseTally> tallies,
                                          int admissible, int current, double p_T,
                                          bool no_skip) {
    const int d = static_cast<int>(post_mean.size());
    int highest_tried = current;
    for (int i = 0; i < d; ++i)
        if (tallies[static_cast<std::size_t>(i)].n > 0) highest_tried = std::max(highest_tried, i);
    const int cap = no_skip ? std::min(d - 1, highest_tried + 1) : d - 1;
    std::optional<int> best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= cap; ++i) {
        if (i >= admissible) break;
        const double gap = std::abs(post_mean[static_cast<std::size_t>(i)] - p_T);
        if (gap < best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

inline std::optional<int> crm_next_dose(const CrmPosterior& post, const TrialData& data, double p_T,
                                        bool no_skip, int admissible) {
    if (data.current < 0 || static_cast<std::size_t>(data.current) >= data.tallies.size())
        throw ParameterError("current dose out of range");
    const auto mean = post.posterior_tox(data.tallies);
    return crm_select_dose(mean, data.tallies, admissible, data.current, p_T, no_skip);
}

inline std::optional<int> crm_next_dose(const CrmModel& model, const TrialData& data, double p_T,
                                        bool no_skip, int admissible) {
    return crm_next_dose(CrmPosterior(model), data, p_T, no_skip, admissible);
}

inline Decision crm_relative_decision(int current, int next) {
    if (next > current) return Decision::Escalate;
    if (next < current) return Decision::DeEscalate;
    return Decision::Stay;
}

}  // namespace ivd
