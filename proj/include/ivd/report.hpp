#pragma once

// Operating-characteristic exports: one CSV row or JSON object per
// design x scenario. Doses are 1-based in every exported field.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivd/simulator.hpp"

namespace ivd {

inline constexpr const char* kOcSchema = "oc.v1";

namespace detail {

inline std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string fmt6(const std::optional<double>& v) { return v ? fmt6(*v) : std::string("NA"); }

inline std::string join6(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt6(v[i]);
    }
    return out;
}

inline std::string truth_field(const TrueMtd& t) {
    if (t.none()) return "none";
    std::string out;
    for (std::size_t i = 0; i < t.doses.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(t.doses[i] + 1);
    }
    return out;
}

}  // namespace detail

inline std::string oc_csv_header() {
    return "schema,design,scenario,scenario_index,p_T,doses,trials,safety,reliability,reliability_se,"
           "accuracy,mean_patients,safety_stop_rate,true_mtd,selection,allocation\n";
}

inline std::string oc_csv_row(const OcSummary& o) {
    std::string r = kOcSchema;
    r += ',' + detail::csv_quote(o.design);
    r += ',' + detail::csv_quote(o.scenario);
    r += ',' + std::to_string(o.scenario_index + 1);
    r += ',' + detail::fmt6(o.p_T);
    r += ',' + std::to_string(o.allocation.size());
    r += ',' + std::to_string(o.trials);
    r += ',' + detail::fmt6(o.safety);
    r += ',' + detail::fmt6(o.reliability);
    r += ',' + detail::fmt6(o.reliability_se);
    r += ',' + detail::fmt6(o.accuracy);
    r += ',' + detail::fmt6(o.mean_patients);
    r += ',' + detail::fmt6(o.safety_stop_rate);
    r += ',' + detail::truth_field(o.truth);
    r += ',' + detail::join6(o.selection);
    r += ',' + detail::join6(o.allocation);
    r += '\n';
    return r;
}

inline std::string oc_csv(const std::vector<OcSummary>& rows) {
    std::string out = oc_csv_header();
    for (const auto& o : rows) out += oc_csv_row(o);
    return out;
}

inline nlohmann::json oc_json(const std::vector<OcSummary>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& o : rows) {
        std::vector<int> truth;
        for (int d : o.truth.doses) truth.push_back(d + 1);
        arr.push_back({{"design", o.design},
                       {"scenario", o.scenario},
                       {"scenario_index", o.scenario_index + 1},
                       {"p_T", o.p_T},
                       {"trials", o.trials},
                       {"safety", o.safety ? nlohmann::json(*o.safety) : nlohmann::json(nullptr)},
                       {"reliability", o.reliability},
                       {"reliability_se", o.reliability_se},
                       {"accuracy", o.accuracy ? nlohmann::json(*o.accuracy) : nlohmann::json(nullptr)},
                       {"mean_patients", o.mean_patients},
                       {"safety_stop_rate", o.safety_stop_rate},
                       {"true_mtd", truth},
                       {"selection", o.selection},
                       {"allocation", o.allocation}});
    }
    return {{"schema", kOcSchema}, {"results", std::move(arr)}};
}

}  // namespace ivd
