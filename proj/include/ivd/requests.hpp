#pragma once

// Request parsing shared by the command line and the HTTP service: design
// lists, scenario sources and batch simulation.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ivd/json_io.hpp"
#include "ivd/report.hpp"
#include "ivd/scenarios.hpp"
#include "ivd/simulator.hpp"

namespace ivd {

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto end = s.find(sep, pos);
        out.emplace_back(s.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
    return out;
}

namespace detail {

inline double parse_double_arg(const std::string& s, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    return v;
}

inline int parse_int_arg(const std::string& s, const char* what) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(std::string("invalid ") + what + " '" + s + "'");
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::vector<Scenario> load_scenario_file(const std::string& path) {
    const auto text = detail::read_file(path);
    const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    return is_json ? scenarios_from_json_text(text) : scenarios_from_csv(text);
}

// Scenario sources, comma-separated:
//   jiwang:all | jiwang:<p_T>
//   paoletti:<count>[:<doses>[:<p_T>]]
//   random:<count>
//   file:<path>          (.json or CSV)
// Generated sources draw from streams keyed on `seed` and the source position.
inline std::vector<Scenario> scenarios_from_source(std::string_view spec, std::uint64_t seed) {
    std::vector<Scenario> out;
    std::uint64_t position = 0;
    for (const auto& item : split(spec, ',')) {
        ++position;
        const auto colon = item.find(':');
        const std::string kind = item.substr(0, colon);
        const std::string arg = colon == std::string::npos ? "" : item.substr(colon + 1);
        if (kind == "jiwang") {
            if (arg == "all" || arg.empty()) {
                auto all = builtin_jiwang_all();
                out.insert(out.end(), all.begin(), all.end());
            } else {
                try {
                    auto part = builtin_jiwang(detail::parse_double_arg(arg, "p_T"));
                    out.insert(out.end(), part.begin(), part.end());
                } catch (const ParameterError& e) {
                    throw ConfigError(e.what());
                }
            }
        } else if (kind == "paoletti") {
            const auto parts = split(arg, ':');
            PaolettiConfig cfg;
            const int count = detail::parse_int_arg(parts[0], "scenario count");
            if (parts.size() > 1) cfg.doses = detail::parse_int_arg(parts[1], "dose count");
            if (parts.size() > 2) cfg.p_T = detail::parse_double_arg(parts[2], "p_T");
            if (count < 1) throw ConfigError("scenario count must be >= 1");
            try {
                cfg.validate();
            } catch (const ParameterError& e) {
                throw ConfigError(e.what());
            }
            StreamRng rng(derive_key(seed, 0x5041u, position));
            for (int i = 0; i < count; ++i) {
                auto s = paoletti_generate(cfg, rng);
                s.label = "paoletti-" + std::to_string(i + 1);
                out.push_back(std::move(s));
            }
        } else if (kind == "random") {
            const int count = detail::parse_int_arg(arg, "scenario count");
            if (count < 1) throw ConfigError("scenario count must be >= 1");
            StreamRng rng(derive_key(seed, 0x524Eu, position));
            RandomScenarioAxes axes;
            for (int i = 0; i < count; ++i) {
                auto s = random_scenario(axes, rng);
                s.label += "-" + std::to_string(i + 1);
                out.push_back(std::move(s));
            }
        } else if (kind == "file") {
            auto part = load_scenario_file(arg);
            out.insert(out.end(), part.begin(), part.end());
        } else {
            throw ConfigError("unknown scenario source '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("no scenarios");
    return out;
}

struct SimulateRequest {
    std::vector<DesignSpec> designs;
    std::vector<Scenario> scenarios;
    TrialConfig cfg;
    int trials = 2000;
    int workers = 1;
};

inline std::vector<DesignSpec> designs_from_list(std::string_view ids, const TargetSpec& target) {
    std::vector<DesignSpec> out;
    for (const auto& id : split(ids, ','))
        if (!id.empty()) out.push_back(make_design(id, target));
    if (out.empty()) throw ConfigError("no designs given");
    return out;
}

// {"designs": ["mtpi2", {...}], "scenarios": "jiwang:0.3" | [{label,p_T,probs}],
//  "trials", "sample_size", "cohort_size", "start_dose", "seed", "workers",
//  "eps": [e1, e2]}
inline SimulateRequest simulate_request_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("request must be a JSON object");
    SimulateRequest r;
    r.trials = detail::field(j, "trials", 2000);
    r.workers = detail::field(j, "workers", 1);
    const auto seed = detail::field<std::uint64_t>(j, "seed", 0);
    TargetSpec target;
    if (j.contains("eps")) {
        const auto& e = j["eps"];
        if (!e.is_array() || e.size() != 2) throw ConfigError("'eps' must be a pair");
        target.eps1 = e[0].get<double>();
        target.eps2 = e[1].get<double>();
    }
    if (!j.contains("designs") || !j["designs"].is_array()) throw ConfigError("'designs' must be an array");
    for (const auto& d : j["designs"]) {
        if (d.is_string()) r.designs.push_back(make_design(d.get<std::string>(), target));
        else r.designs.push_back(design_from_json(d));
    }
    if (r.designs.empty()) throw ConfigError("no designs given");
    if (!j.contains("scenarios")) throw ConfigError("missing 'scenarios'");
    const auto& s = j["scenarios"];
    try {
        if (s.is_string()) r.scenarios = scenarios_from_source(s.get<std::string>(), seed);
        else if (s.is_array()) r.scenarios = scenarios_from_json(json{{"scenarios", s}});
        else r.scenarios = scenarios_from_json(s);
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    if (r.scenarios.empty()) throw ConfigError("no scenarios");
    r.cfg = TrialConfig{detail::field(j, "sample_size", 30), detail::field(j, "cohort_size", 3),
                        detail::field(j, "start_dose", 1) - 1, seed};
    if (r.trials < 1) throw ConfigError("trials must be >= 1");
    if (r.workers < 1) throw ConfigError("workers must be >= 1");
    return r;
}

inline BatchResult run_simulate(const SimulateRequest& r) {
    return run_batch(r.designs, r.scenarios, r.cfg, r.trials, {r.workers, false});
}

}  // namespace ivd
