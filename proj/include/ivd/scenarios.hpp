#pragma once

// Toxicity scenarios: the 42 six-dose Ji-Wang scenarios, the Paoletti
// probit-model generator, a configurable random generator, and CSV/JSON files.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ivd/numerics.hpp"
#include "ivd/rng.hpp"
#include "ivd/types.hpp"

namespace ivd {

struct Scenario {
    std::vector<double> probs;
    double p_T = 0.3;
    std::string label;

    int doses() const { return static_cast<int>(probs.size()); }

    // Degenerate 0/1 probabilities are accepted so certain-outcome scenarios
    // can be simulated.
    void validate() const {
        if (probs.empty() || probs.size() > 20) throw ParameterError("scenario needs 1 to 20 doses");
        if (!is_probability(p_T)) throw ParameterError("scenario p_T must lie in (0,1)");
        for (double p : probs)
            if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("scenario probabilities must lie in [0,1]");
    }
    friend bool operator==(const Scenario&, const Scenario&) = default;
};

// ---------------------------------------------------------------------------
// Ji-Wang scenario set
// ---------------------------------------------------------------------------

namespace detail {

using SixDoses = std::array<double, 6>;

inline constexpr std::array<SixDoses, 14> kJiWang10{{
    {0.04, 0.05, 0.06, 0.07, 0.08, 0.09},
    {0.15, 0.2, 0.25, 0.3, 0.35, 0.4},
    {0.01, 0.1, 0.2, 0.25, 0.3, 0.35},
    {0.01, 0.02, 0.03, 0.04, 0.1, 0.25},
    {0.05, 0.4, 0.5, 0.6, 0.65, 0.7},
    {0.01, 0.03, 0.05, 0.4, 0.5, 0.6},
    {0.01, 0.02, 0.03, 0.04, 0.05, 0.4},
    {0.09, 0.11, 0.13, 0.15, 0.17, 0.19},
    {0.05, 0.07, 0.09, 0.11, 0.13, 0.15},
    {0.01, 0.03, 0.05, 0.07, 0.09, 0.11},
    {0.02, 0.04, 0.08, 0.12, 0.17, 0.25},
    {0.02, 0.04, 0.07, 0.1, 0.15, 0.2},
    {0.1, 0.15, 0.2, 0.25, 0.3, 0.35},
    {0.01, 0.03, 0.05, 0.06, 0.08, 0.1},
}};

inline constexpr std::array<SixDoses, 14> kJiWang20{{
    {0.02, 0.05, 0.08, 0.11, 0.14, 0.17},
    {0.25, 0.35, 0.4, 0.5, 0.6, 0.7},
    {0.01, 0.2, 0.4, 0.6, 0.8, 0.95},
    {0.04, 0.06, 0.08, 0.1, 0.2, 0.5},
    {0.05, 0.5, 0.8, 0.9, 0.95, 0.99},
    {0.01, 0.05, 0.1, 0.5, 0.7, 0.9},
    {0.01, 0.03, 0.07, 0.1, 0.15, 0.7},
    {0.19, 0.21, 0.23, 0.25, 0.27, 0.29},
    {0.15, 0.17, 0.19, 0.21, 0.23, 0.25},
    {0.11, 0.13, 0.15, 0.17, 0.19, 0.21},
    {0.05, 0.11, 0.17, 0.23, 0.29, 0.35},
    {0.05, 0.1, 0.15, 0.2, 0.3, 0.4},
    {0.2, 0.25, 0.3, 0.35, 0.4, 0.45},
    {0.05, 0.08, 0.11, 0.14, 0.17, 0.2},
}};

inline constexpr std::array<SixDoses, 14> kJiWang30{{
    {0.02, 0.05, 0.1, 0.15, 0.2, 0.25},
    {0.35, 0.45, 0.5, 0.6, 0.7, 0.8},
    {0.01, 0.3, 0.55, 0.65, 0.8, 0.95},
    {0.04, 0.06, 0.08, 0.1, 0.3, 0.6},
    {0.05, 0.6, 0.8, 0.9, 0.95, 0.99},
    {0.01, 0.05, 0.1, 0.6, 0.7, 0.9},
    {0.01, 0.03, 0.07, 0.1, 0.15, 0.75},
    {0.29, 0.31, 0.33, 0.35, 0.37, 0.39},
    {0.25, 0.27, 0.29, 0.31, 0.33, 0.35},
    {0.21, 0.23, 0.25, 0.27, 0.29, 0.31},
    {0.05, 0.2, 0.27, 0.33, 0.39, 0.45},
    {0.05, 0.1, 0.2, 0.3, 0.4, 0.4},
    {0.3, 0.35, 0.4, 0.45, 0.5, 0.55},
    {0.15, 0.18, 0.21, 0.24, 0.27, 0.3},
}};

inline std::string format_pt(double p_T) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", p_T);
    return buf;
}

}  // namespace detail

// The 14 scenarios for p_T in {0.1, 0.2, 0.3}, labelled "jiwang-<p_T>-<k>".
inline std::vector<Scenario> builtin_jiwang(double p_T) {
    const std::array<detail::SixDoses, 14>* rows = nullptr;
    double exact = 0.0;
    if (std::abs(p_T - 0.1) < 1e-9) rows = &detail::kJiWang10, exact = 0.1;
    else if (std::abs(p_T - 0.2) < 1e-9) rows = &detail::kJiWang20, exact = 0.2;
    else if (std::abs(p_T - 0.3) < 1e-9) rows = &detail::kJiWang30, exact = 0.3;
    else throw ParameterError("the Ji-Wang set covers p_T in {0.1, 0.2, 0.3} only");
    std::vector<Scenario> out;
    for (std::size_t k = 0; k < rows->size(); ++k) {
        const auto& r = (*rows)[k];
        out.push_back({std::vector<double>(r.begin(), r.end()), exact,
                       "jiwang-" + detail::format_pt(exact) + "-" + std::to_string(k + 1)});
    }
    return out;
}

inline std::vector<Scenario> builtin_jiwang_all() {
    std::vector<Scenario> all;
    for (double p : {0.1, 0.2, 0.3}) {
        auto part = builtin_jiwang(p);
        all.insert(all.end(), part.begin(), part.end());
    }
    return all;
}

// ---------------------------------------------------------------------------
// Paoletti probit generator
// ---------------------------------------------------------------------------

struct PaolettiConfig {
    int doses = 6;
    double p_T = 0.2;
    double mu1 = 0.55;  // offset location below the MTD (adjacent dose)
    double mu2 = 0.55;  // above the MTD (adjacent dose)
    double mu3 = 0.55;  // below, further doses
    double mu4 = 0.55;  // above, further doses
    double sd_mtd = 0.01;
    double sd_adj = 0.1;
    double sd_far = 0.25;
    int max_retries = 100;

    void validate() const {
        if (doses < 2 || doses > 20) throw ParameterError("Paoletti generator needs 2 to 20 doses");
        if (!is_probability(p_T)) throw ParameterError("p_T must lie in (0,1)");
        for (double m : {mu1, mu2, mu3, mu4})
            if (!is_probability(m)) throw ParameterError("mu values must lie in (0,1)");
        if (sd_mtd < 0.0 || sd_adj < 0.0 || sd_far < 0.0) throw ParameterError("standard deviations must be >= 0");
        if (max_retries < 1) throw ParameterError("max_retries must be >= 1");
    }
};

struct PaolettiDraw {
    Scenario scenario;
    int mtd = 0;  // index chosen as the MTD
};

inline PaolettiDraw paoletti_draw(const PaolettiConfig& cfg, StreamRng& rng) {
    cfg.validate();
    constexpr double lo = 1e-6, hi = 1.0 - 1e-6;
    auto clip = [&](double p) { return std::clamp(p, lo, hi); };
    auto probit = [&](double p) { return num::normal_quantile(clip(p)); };
    auto phi = [&](double z) { return clip(num::normal_cdf(z)); };

    const int d = cfg.doses;
    const int mtd = rng.uniform_int(0, d - 1);
    const double z_target = num::normal_quantile(cfg.p_T);
    std::vector<double> p(static_cast<std::size_t>(d));
    auto at = [&](int i) -> double& { return p[static_cast<std::size_t>(i)]; };

    // The reflected value 2 p_T - p_i must be a probability whenever an
    // adjacent dose uses it; otherwise the MTD draw is repeated.
    double p_mtd = 0.0;
    double z_mtd = 0.0;
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
        p_mtd = phi(rng.normal(z_target, cfg.sd_mtd));
        z_mtd = probit(p_mtd);
        const double reflected = 2.0 * cfg.p_T - p_mtd;
        const bool need_below = mtd > 0 && z_mtd > z_target;
        const bool need_above = mtd < d - 1 && z_mtd < z_target;
        ok = !((need_below || need_above) && !(reflected > 0.0 && reflected < 1.0));
    }
    if (!ok) throw ComputationError("Paoletti generator: 2 p_T - p_i left (0,1) on every retry");
    at(mtd) = p_mtd;

    const double z_reflected = (mtd > 0 && z_mtd > z_target) || (mtd < d - 1 && z_mtd < z_target)
                                   ? probit(2.0 * cfg.p_T - p_mtd)
                                   : z_mtd;
    if (mtd > 0) {
        const double xi = rng.normal(num::normal_quantile(cfg.mu1), cfg.sd_adj);
        const double base = z_mtd > z_target ? z_reflected : z_mtd;
        at(mtd - 1) = phi(base - xi * xi);
    }
    if (mtd < d - 1) {
        const double xi = rng.normal(num::normal_quantile(cfg.mu2), cfg.sd_adj);
        const double base = z_mtd < z_target ? z_reflected : z_mtd;
        at(mtd + 1) = phi(base + xi * xi);
    }
    for (int i = mtd - 2; i >= 0; --i) {
        const double xi = rng.normal(num::normal_quantile(cfg.mu3), cfg.sd_far);
        at(i) = phi(probit(at(i + 1)) - xi * xi);
    }
    for (int i = mtd + 2; i < d; ++i) {
        const double xi = rng.normal(num::normal_quantile(cfg.mu4), cfg.sd_far);
        at(i) = phi(probit(at(i - 1)) + xi * xi);
    }
    // Probit/Phi round trips can reorder near-equal neighbours by an ulp.
    for (int i = 1; i < d; ++i) at(i) = std::max(at(i), at(i - 1));

    PaolettiDraw out;
    out.scenario = {std::move(p), cfg.p_T, "paoletti"};
    out.mtd = mtd;
    return out;
}

inline Scenario paoletti_generate(const PaolettiConfig& cfg, StreamRng& rng) {
    return paoletti_draw(cfg, rng).scenario;
}

// ---------------------------------------------------------------------------
// Random scenarios
// ---------------------------------------------------------------------------

enum class CurveFamily { SortedUniform, Logistic, Mixed };

// Dose count uniform on [min_doses, max_doses]; p_T uniform over p_T_set.
// SortedUniform: d iid U(floor, ceiling) draws sorted ascending.
// Logistic: logit p_i = logit(p_T) + slope * (i - pivot), pivot ~ U(0, d-1),
//           slope ~ U(0.3, 1.5).
// Mixed: either of the two with probability 1/2.
struct RandomScenarioAxes {
    int min_doses = 3;
    int max_doses = 8;
    std::vector<double> p_T_set{0.1, 0.2, 0.25, 0.3, 0.33};
    CurveFamily family = CurveFamily::Mixed;
    double floor = 0.01;
    double ceiling = 0.8;

    void validate() const {
        if (min_doses < 1 || max_doses > 20 || min_doses > max_doses)
            throw ParameterError("dose range must satisfy 1 <= min <= max <= 20");
        if (p_T_set.empty()) throw ParameterError("p_T set is empty");
        for (double p : p_T_set)
            if (!is_probability(p)) throw ParameterError("p_T values must lie in (0,1)");
        if (!(floor > 0.0 && floor < ceiling && ceiling < 1.0)) throw ParameterError("need 0 < floor < ceiling < 1");
    }
};

inline Scenario random_scenario(const RandomScenarioAxes& axes, StreamRng& rng) {
    axes.validate();
    const int d = rng.uniform_int(axes.min_doses, axes.max_doses);
    const double p_T = axes.p_T_set[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(axes.p_T_set.size()) - 1))];
    CurveFamily family = axes.family;
    if (family == CurveFamily::Mixed)
        family = rng.uniform() < 0.5 ? CurveFamily::SortedUniform : CurveFamily::Logistic;

    std::vector<double> p(static_cast<std::size_t>(d));
    if (family == CurveFamily::SortedUniform) {
        for (auto& v : p) v = axes.floor + (axes.ceiling - axes.floor) * rng.uniform();
        std::sort(p.begin(), p.end());
    } else {
        const double pivot = (d - 1) * rng.uniform();
        const double slope = 0.3 + 1.2 * rng.uniform();
        const double base = std::log(p_T / (1.0 - p_T));
        for (int i = 0; i < d; ++i) {
            const double eta = base + slope * (i - pivot);
            p[static_cast<std::size_t>(i)] = std::clamp(1.0 / (1.0 + std::exp(-eta)), 0.001, 0.999);
        }
    }
    return {std::move(p), p_T, "random-" + std::to_string(d)};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw ComputationError("cannot format number");
    return std::string(buf, end);
}

inline std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos && (s.empty() || (s.front() != ' ' && s.back() != ' ')))
        return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

struct CsvField {
    std::string text;
    std::size_t column;  // 1-based
};

inline std::vector<CsvField> split_csv_line(std::string_view line, std::size_t line_no) {
    std::vector<CsvField> fields;
    std::size_t i = 0;
    while (true) {
        CsvField f{{}, i + 1};
        if (i < line.size() && line[i] == '"') {
            ++i;
            bool closed = false;
            while (i < line.size()) {
                if (line[i] == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        f.text += '"';
                        i += 2;
                        continue;
                    }
                    closed = true;
                    ++i;
                    break;
                }
                f.text += line[i++];
            }
            if (!closed) throw ParseError("unterminated quoted field", line_no, f.column);
            if (i < line.size() && line[i] != ',')
                throw ParseError("unexpected character after quoted field", line_no, i + 1);
        } else {
            while (i < line.size() && line[i] != ',') f.text += line[i++];
        }
        fields.push_back(std::move(f));
        if (i >= line.size()) break;
        ++i;  // comma
    }
    return fields;
}

inline double parse_number(const CsvField& f, std::size_t line_no) {
    std::string_view s = f.text;
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ParseError("invalid number '" + f.text + "'", line_no, f.column);
    return v;
}

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

// CSV: header "label,p_T,p1,...,pK"; each row holds its own dose count, so
// rows may stop before pK.
inline std::string scenarios_to_csv(const std::vector<Scenario>& scenarios) {
    std::size_t width = 1;
    for (const auto& s : scenarios) width = std::max(width, s.probs.size());
    std::string out = "label,p_T";
    for (std::size_t i = 1; i <= width; ++i) out += ",p" + std::to_string(i);
    out += '\n';
    for (const auto& s : scenarios) {
        out += detail::csv_quote(s.label);
        out += ',' + detail::format_double(s.p_T);
        for (double p : s.probs) out += ',' + detail::format_double(p);
        out += '\n';
    }
    return out;
}

inline std::vector<Scenario> scenarios_from_csv(std::string_view text) {
    std::vector<Scenario> out;
    std::size_t line_no = 0;
    std::size_t width = 0;
    bool header_seen = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        pos = end + 1;
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const auto fields = detail::split_csv_line(line, line_no);
        if (!header_seen) {
            if (fields.size() < 3 || fields[0].text != "label" || fields[1].text != "p_T")
                throw ParseError("header must start with label,p_T,p1", line_no, 1);
            for (std::size_t i = 2; i < fields.size(); ++i)
                if (fields[i].text != "p" + std::to_string(i - 1))
                    throw ParseError("expected column p" + std::to_string(i - 1), line_no, fields[i].column);
            width = fields.size() - 2;
            header_seen = true;
            continue;
        }
        if (fields.size() > width + 2) throw ParseError("more dose columns than the header", line_no, fields[width + 2].column);
        if (fields.size() < 3) throw ParseError("row needs label, p_T and at least one dose", line_no, 1);
        Scenario s;
        s.label = fields[0].text;
        s.p_T = detail::parse_number(fields[1], line_no);
        if (!is_probability(s.p_T)) throw ParseError("p_T must lie in (0,1)", line_no, fields[1].column);
        bool tail = false;
        for (std::size_t i = 2; i < fields.size(); ++i) {
            if (fields[i].text.empty()) {
                tail = true;
                continue;
            }
            if (tail) throw ParseError("dose value after an empty field", line_no, fields[i].column);
            const double p = detail::parse_number(fields[i], line_no);
            if (!(p >= 0.0 && p <= 1.0)) throw ParseError("probability outside [0,1]", line_no, fields[i].column);
            s.probs.push_back(p);
        }
        if (s.probs.empty()) throw ParseError("row has no dose values", line_no, 1);
        out.push_back(std::move(s));
    }
    if (!header_seen) throw ParseError("missing header", 1, 1);
    return out;
}

inline nlohmann::json scenarios_to_json(const std::vector<Scenario>& scenarios) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scenarios) arr.push_back({{"label", s.label}, {"p_T", s.p_T}, {"probs", s.probs}});
    return {{"format", "ivd-scenarios"}, {"version", 1}, {"scenarios", std::move(arr)}};
}

inline std::vector<Scenario> scenarios_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("scenarios") || !doc["scenarios"].is_array())
        throw ParseError("expected an object with a 'scenarios' array", 1, 1);
    std::vector<Scenario> out;
    for (const auto& item : doc["scenarios"]) {
        Scenario s;
        try {
            s.label = item.value("label", std::string());
            s.p_T = item.at("p_T").get<double>();
            s.probs = item.at("probs").get<std::vector<double>>();
            s.validate();
        } catch (const std::exception& e) {
            throw ParseError(std::string("invalid scenario #") + std::to_string(out.size() + 1) + ": " + e.what(), 1, 1);
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<Scenario> scenarios_from_json_text(std::string_view text) {
    try {
        return scenarios_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError(std::string("malformed JSON: ") + e.what(), line, col);
    }
}

}  // namespace ivd
