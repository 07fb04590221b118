#pragma once

// Command-line front end: decide, table, diff, simulate, scenarios, serve.
// Exit status 0 on success, 2 on usage or configuration errors, 1 otherwise.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ivd/json_io.hpp"
#include "ivd/report.hpp"
#include "ivd/requests.hpp"
#include "ivd/service.hpp"
#include "ivd/tables.hpp"

namespace ivd {

namespace detail {

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    f << text;
}

struct TargetOpts {
    double p_T = 0.3;
    std::vector<double> eps{0.05, 0.05};

    void add(CLI::App* app) {
        app->add_option("--pt", p_T, "target toxicity probability")->capture_default_str();
        app->add_option("--eps", eps, "eps1 eps2 (equivalence interval half-widths)")
            ->expected(2)
            ->capture_default_str();
    }
    TargetSpec target() const {
        try {
            return TargetSpec::make(p_T, eps.at(0), eps.at(1));
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
};

struct DesignOpts {
    std::string design = "mtpi2";
    TargetOpts target;
    double k1 = 1.0, k2 = 1.5;
    double delta = 0.0;
    bool ccd_safety = false;

    void add(CLI::App* app, bool required = true) {
        auto* o = app->add_option("--design", design, "design id (tpi, mtpi, mtpi2, ccd, boin-default, "
                                                       "boin-epsilon, boin-lambda, 3+3, crm)");
        if (required) o->required();
        target.add(app);
        app->add_option("--k1", k1, "TPI k1")->capture_default_str();
        app->add_option("--k2", k2, "TPI k2")->capture_default_str();
        app->add_option("--delta", delta, "CCD half-width override");
        app->add_flag("--ccd-safety", ccd_safety, "apply the posterior safety rule to CCD");
    }

    DesignSpec spec() const {
        DesignSpec d = make_design(design, target.target());
        if (d.family() == Family::TPI) d.params = TpiParams{k1, k2};
        if (d.family() == Family::CCD) {
            CcdParams p;
            if (delta > 0.0) p.delta = delta;
            p.safety = ccd_safety;
            d.params = p;
        }
        d.validate();
        return d;
    }
};

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Interval dose-finding designs: decisions, tables, simulation and service"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;

    // decide
    auto* decide_cmd = app.add_subcommand("decide", "decision for x DLTs out of n patients");
    detail::DesignOpts decide_design;
    int dx = 0, dn = 0;
    bool decide_json = false;
    decide_design.add(decide_cmd);
    decide_cmd->add_option("--x", dx, "DLTs")->required();
    decide_cmd->add_option("--n", dn, "patients")->required();
    decide_cmd->add_flag("--json", decide_json, "print diagnostics as JSON");
    decide_cmd->add_option("--seed", seed, "unused; accepted for uniformity");

    // table
    auto* table_cmd = app.add_subcommand("table", "decision table CSV");
    detail::DesignOpts table_design;
    int nmax = 15;
    std::string table_out;
    table_design.add(table_cmd);
    table_cmd->add_option("--nmax", nmax, "largest n")->capture_default_str();
    table_cmd->add_option("--out", table_out, "output file (default stdout)");
    table_cmd->add_option("--seed", seed, "unused; accepted for uniformity");

    // diff
    auto* diff_cmd = app.add_subcommand("diff", "table-difference grid over (eps1, eps2)");
    std::string first = "mtpi2", second = "boin-lambda";
    detail::TargetOpts diff_target;
    std::vector<double> eps1_range, eps2_range;
    int diff_n = 51, crm_trials = 2000, diff_workers = 1;
    std::string crm_scenarios = "jiwang:0.3", diff_out;
    diff_cmd->add_option("--first", first, "design 1")->capture_default_str();
    diff_cmd->add_option("--second", second, "design 2")->capture_default_str();
    diff_target.add(diff_cmd);
    diff_cmd->add_option("--eps1-range", eps1_range, "lo hi count")->expected(3);
    diff_cmd->add_option("--eps2-range", eps2_range, "lo hi count")->expected(3);
    diff_cmd->add_option("--n", diff_n, "largest n summed")->capture_default_str();
    diff_cmd->add_option("--crm-trials", crm_trials, "CRM trials per scenario")->capture_default_str();
    diff_cmd->add_option("--crm-scenarios", crm_scenarios, "CRM scenario source")->capture_default_str();
    diff_cmd->add_option("--workers", diff_workers, "threads")->capture_default_str();
    diff_cmd->add_option("--out", diff_out, "output file (default stdout)");
    diff_cmd->add_option("--seed", seed, "random seed for CRM simulation")->capture_default_str();

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "operating characteristics CSV");
    std::string designs = "mtpi,mtpi2,boin-lambda,crm,3+3", sources = "jiwang:all", sim_out, sim_format = "csv";
    std::vector<double> sim_eps{0.05, 0.05};
    int trials = 2000, sample_size = 30, cohort_size = 3, start_dose = 1, workers = 1;
    sim_cmd->add_option("--designs", designs, "comma-separated design ids")->capture_default_str();
    sim_cmd->add_option("--scenarios", sources, "scenario source(s)")->capture_default_str();
    sim_cmd->add_option("--eps", sim_eps, "eps1 eps2")->expected(2)->capture_default_str();
    sim_cmd->add_option("--trials", trials, "trials per scenario")->capture_default_str();
    sim_cmd->add_option("--sample-size", sample_size, "patients per trial")->capture_default_str();
    sim_cmd->add_option("--cohort-size", cohort_size, "patients per cohort")->capture_default_str();
    sim_cmd->add_option("--start-dose", start_dose, "first dose (1-based)")->capture_default_str();
    sim_cmd->add_option("--workers", workers, "threads")->capture_default_str();
    sim_cmd->add_option("--format", sim_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sim_cmd->add_option("--out", sim_out, "output file (default stdout)");
    sim_cmd->add_option("--seed", seed, "random seed")->capture_default_str();

    // scenarios
    auto* sc_cmd = app.add_subcommand("scenarios", "generate or convert scenario files");
    std::string sc_source = "jiwang:all", sc_out, sc_format;
    sc_cmd->add_option("--source", sc_source, "scenario source(s)")->capture_default_str();
    sc_cmd->add_option("--format", sc_format, "csv or json (default from --out, else csv)")
        ->check(CLI::IsMember({"csv", "json"}));
    sc_cmd->add_option("--out", sc_out, "output file (default stdout)");
    sc_cmd->add_option("--seed", seed, "random seed")->capture_default_str();

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "start the HTTP service");
    int port = 0;
    std::string host = "127.0.0.1", store;
    int serve_workers = 1;
    serve_cmd->add_option("--port", port, "port (default $IVD_PORT or 8080)");
    serve_cmd->add_option("--host", host, "bind address")->capture_default_str();
    serve_cmd->add_option("--store", store, "session store file (default $IVD_STORE)");
    serve_cmd->add_option("--workers", serve_workers, "threads per simulation job")->capture_default_str();
    serve_cmd->add_option("--seed", seed, "unused; accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*decide_cmd) {
            const auto d = decide_design.spec();
            if (!d.is_fixed_rule()) throw ConfigError("design '" + d.id() + "' has no fixed per-tally decision");
            const auto e = explain(d, DoseTally{dx, dn});
            if (decide_json) {
                out << e.dump(2) << '\n';
            } else {
                out << e["decision"].get<std::string>() << '\n';
                out << explain_text(e);
            }
        } else if (*table_cmd) {
            if (nmax < 1) throw ConfigError("--nmax must be >= 1");
            detail::write_output(table_out, table_to_csv(decision_table(table_design.spec(), nmax)), out);
        } else if (*diff_cmd) {
            const auto target = diff_target.target();
            auto axis = [&](const std::vector<double>& r, double fallback) {
                if (r.empty()) return std::vector<double>{fallback};
                if (r[2] < 1 || r[2] != static_cast<int>(r[2])) throw ConfigError("grid count must be a positive integer");
                return linspace(r[0], r[1], static_cast<int>(r[2]));
            };
            const auto e1 = axis(eps1_range, target.eps1);
            const auto e2 = axis(eps2_range, target.eps2);
            auto provider = [&](const std::string& id) -> GridProvider {
                auto d = make_design(id, target);
                if (d.family() == Family::CRM) {
                    TrialConfig cfg{diff_n, 3, 0, seed};
                    auto scen = scenarios_from_source(crm_scenarios, seed);
                    return constant_provider(score_grid(crm_table_from_scenarios(d, scen, cfg, crm_trials, diff_workers)));
                }
                if (!d.is_fixed_rule()) throw ConfigError("design '" + id + "' has no decision table");
                return fixed_provider(d, diff_n);
            };
            const auto g = diff_grid(provider(first), provider(second), e1, e2, diff_n, diff_workers);
            detail::write_output(diff_out, diff_grid_to_csv(g), out);
        } else if (*sim_cmd) {
            SimulateRequest r;
            if (sim_eps.size() != 2) throw ConfigError("--eps needs two values");
            TargetSpec t{0.3, sim_eps[0], sim_eps[1]};
            r.designs = designs_from_list(designs, t);
            r.scenarios = scenarios_from_source(sources, seed);
            r.cfg = TrialConfig{sample_size, cohort_size, start_dose - 1, seed};
            r.trials = trials;
            r.workers = workers;
            if (trials < 1) throw ConfigError("--trials must be >= 1");
            if (workers < 1) throw ConfigError("--workers must be >= 1");
            const auto batch = run_simulate(r);
            detail::write_output(sim_out,
                                 sim_format == "json" ? oc_json(batch.summaries).dump(2) + "\n"
                                                      : oc_csv(batch.summaries),
                                 out);
        } else if (*sc_cmd) {
            const auto sc = scenarios_from_source(sc_source, seed);
            std::string fmt = sc_format;
            if (fmt.empty())
                fmt = sc_out.size() >= 5 && sc_out.compare(sc_out.size() - 5, 5, ".json") == 0 ? "json" : "csv";
            detail::write_output(sc_out, fmt == "json" ? scenarios_to_json(sc).dump(2) + "\n" : scenarios_to_csv(sc),
                                 out);
        } else if (*serve_cmd) {
            if (port == 0) {
                const char* env = std::getenv("IVD_PORT");
                port = env ? detail::parse_int_arg(env, "IVD_PORT") : 8080;
            }
            if (store.empty())
                if (const char* env = std::getenv("IVD_STORE")) store = env;
            if (port < 1 || port > 65535) throw ConfigError("port out of range");
            Service svc({store, serve_workers});
            err << "listening on " << host << ":" << port << '\n';
            if (!svc.listen(host, port)) {
                err << "error: cannot listen on " << host << ":" << port << '\n';
                return 1;
            }
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParameterError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace ivd
