#pragma once

// HTTP service: decisions, tables, asynchronous batch simulation and live
// trial sessions. Session state is event-sourced; with a store path every
// event is appended to a JSON-lines file and replayed on start-up.

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "ivd/json_io.hpp"
#include "ivd/report.hpp"
#include "ivd/requests.hpp"
#include "ivd/simulator.hpp"
#include "ivd/tables.hpp"

namespace ivd {

struct HttpError : std::runtime_error {
    HttpError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status(status), code(std::move(code)) {}
    int status;
    std::string code;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

// A live trial. The event log alone determines the state.
class TrialSession {
public:
    TrialSession(std::string id, DesignSpec design, TrialConfig cfg, int doses)
        : id_(std::move(id)), engine_(std::move(design), doses, cfg), state_(engine_.start()) {}

    const std::string& id() const { return id_; }
    const DesignEngine& engine() const { return engine_; }
    const TrialState& state() const { return state_; }
    const json& events() const { return events_; }
    std::mutex& mutex() { return mutex_; }

    std::string status() const {
        if (!state_.stopped) return "active";
        return state_.stop_reason == StopReason::SafetyStop ? "stopped" : "completed";
    }

    json create_event() const {
        return {{"type", "create"},
                {"id", id_},
                {"design", design_to_json(engine_.spec())},
                {"config", trial_config_to_json(engine_.config())},
                {"doses", engine_.doses()}};
    }

    // Applies a cohort and appends it to the log; returns the logged event.
    json add_cohort(int dlt, int size, std::string time) {
        check_cohort(dlt, size);
        const auto& rec = engine_.apply_cohort(state_, dlt, size);
        json ev = cohort_json(rec);
        ev["type"] = "cohort";
        ev["id"] = id_;
        ev["time"] = std::move(time);
        events_.push_back(ev);
        return ev;
    }

    json preview(int dlt, int size) const {
        check_cohort(dlt, size);
        return cohort_json(engine_.preview(state_, dlt, size));
    }

    json to_json() const {
        json tallies = json::array();
        for (const auto& t : state_.tallies) tallies.push_back({{"x", t.x}, {"n", t.n}});
        json excluded = json::array();
        for (int i = state_.admissible; i < state_.doses(); ++i) excluded.push_back(i + 1);
        json cohorts = json::array();
        for (const auto& c : state_.cohorts) cohorts.push_back(cohort_json(c));
        json j{{"id", id_},
               {"design", design_to_json(engine_.spec())},
               {"config", trial_config_to_json(engine_.config())},
               {"doses", engine_.doses()},
               {"status", status()},
               {"current_dose", state_.current + 1},
               {"treated", state_.treated},
               {"tallies", tallies},
               {"excluded", excluded},
               {"cohorts", cohorts},
               {"events", events_}};
        j["stop_reason"] = state_.stop_reason ? json(stop_reason_name(*state_.stop_reason)) : json(nullptr);
        if (state_.stopped) {
            const auto mtd = engine_.select(state_);
            j["mtd"] = mtd ? json(*mtd + 1) : json(nullptr);
        } else {
            j["mtd"] = nullptr;
        }
        return j;
    }

    static json cohort_json(const CohortRecord& c) {
        return {{"dose", c.dose + 1},
                {"dlt_count", c.dlt},
                {"cohort_size", c.size},
                {"x", c.cumulative.x},
                {"n", c.cumulative.n},
                {"decision", letter(c.rule_decision)},
                {"applied", letter(c.applied)},
                {"next_dose", c.next_dose ? json(*c.next_dose + 1) : json(nullptr)},
                {"admissible_doses", c.admissible}};
    }

private:
    void check_cohort(int dlt, int size) const {
        if (state_.stopped) throw HttpError(422, "trial_stopped", "the trial has already stopped");
        if (size < 1) throw HttpError(422, "invalid_cohort", "cohort_size must be >= 1");
        if (dlt < 0 || dlt > size) throw HttpError(422, "invalid_cohort", "dlt_count must lie in [0, cohort_size]");
        if (engine_.spec().family() == Family::ThreePlusThree && size != 3)
            throw HttpError(422, "invalid_cohort", "3+3 cohorts have exactly three patients");
    }

    std::string id_;
    DesignEngine engine_;
    TrialState state_;
    json events_ = json::array();
    std::mutex mutex_;
};

struct SimJob {
    std::string status = "queued";  // queued, running, done, failed
    std::string csv;
    json results;
    std::string error;
};

struct ServiceOptions {
    std::string store_path;  // empty: in-memory only
    int job_workers = 1;     // threads per simulation job
};

class Service {
public:
    explicit Service(ServiceOptions opt = {}) : opt_(std::move(opt)) {
        if (!opt_.store_path.empty()) replay_store();
        routes();
    }

    ~Service() {
        stop();
        std::vector<std::thread> threads;
        {
            std::lock_guard lock(jobs_mutex_);
            threads.swap(job_threads_);
        }
        for (auto& t : threads)
            if (t.joinable()) t.join();
    }

    httplib::Server& server() { return server_; }

    bool listen(const std::string& host, int port) { return server_.listen(host, port); }
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

    std::size_t session_count() {
        std::lock_guard lock(sessions_mutex_);
        return sessions_.size();
    }

    // Rebuilds sessions from a JSON-lines event log.
    static std::map<std::string, std::shared_ptr<TrialSession>> replay(std::istream& in) {
        std::map<std::string, std::shared_ptr<TrialSession>> out;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json ev;
            try {
                ev = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(std::string("event store: ") + e.what(), line_no, 1);
            }
            const auto type = ev.value("type", std::string());
            const auto id = ev.value("id", std::string());
            if (type == "create") {
                const auto design = design_from_json(ev.at("design"));
                const int doses = ev.at("doses").get<int>();
                const auto cfg = trial_config_from_json(ev.at("config"), doses);
                out[id] = std::make_shared<TrialSession>(id, design, cfg, doses);
            } else if (type == "cohort") {
                auto it = out.find(id);
                if (it == out.end()) throw ParseError("event store: cohort for unknown session", line_no, 1);
                const auto logged = it->second->add_cohort(ev.at("dlt_count").get<int>(),
                                                           ev.at("cohort_size").get<int>(), ev.value("time", ""));
                if (logged.at("decision") != ev.at("decision") || logged.at("next_dose") != ev.at("next_dose"))
                    throw ParseError("event store: replayed decision differs from the log", line_no, 1);
            } else if (type == "delete") {
                out.erase(id);
            } else {
                throw ParseError("event store: unknown event type", line_no, 1);
            }
        }
        return out;
    }

private:
    void replay_store() {
        std::ifstream in(opt_.store_path);
        if (!in) return;
        sessions_ = replay(in);
        // Ids of deleted sessions stay retired.
        std::ifstream again(opt_.store_path);
        std::string line;
        while (std::getline(again, line)) {
            const auto ev = json::parse(line, nullptr, false);
            if (ev.is_object() && ev.contains("id") && ev["id"].is_string()) bump_id(ev["id"].get<std::string>());
        }
    }

    void bump_id(const std::string& id) {
        if (id.size() > 1 && id[0] == 't') {
            try {
                next_session_ = std::max<unsigned long>(next_session_, std::stoul(id.substr(1)) + 1);
            } catch (const std::exception&) {
            }
        }
    }

    void persist(const json& ev) {
        if (opt_.store_path.empty()) return;
        std::lock_guard lock(store_mutex_);
        std::ofstream out(opt_.store_path, std::ios::app);
        if (!out) throw HttpError(500, "store_error", "cannot write the session store");
        out << ev.dump() << '\n';
        out.flush();
    }

    static json parse_body(const httplib::Request& req) {
        try {
            return json::parse(req.body.empty() ? std::string("{}") : req.body);
        } catch (const json::parse_error& e) {
            throw HttpError(400, "bad_json", e.what());
        }
    }

    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <class F>
    static httplib::Server::Handler guard(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const HttpError& e) {
                send(res, e.status, {{"code", e.code}, {"message", e.what()}});
            } catch (const ConfigError& e) {
                send(res, 400, {{"code", "bad_config"}, {"message", e.what()}});
            } catch (const ParseError& e) {
                send(res, 400, {{"code", "bad_request"}, {"message", e.what()}});
            } catch (const ParameterError& e) {
                send(res, 422, {{"code", "invalid_value"}, {"message", e.what()}});
            } catch (const json::exception& e) {
                send(res, 400, {{"code", "bad_request"}, {"message", e.what()}});
            } catch (const std::exception& e) {
                send(res, 500, {{"code", "internal"}, {"message", e.what()}});
            }
        };
    }

    std::shared_ptr<TrialSession> find_session(const std::string& id) {
        std::lock_guard lock(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw HttpError(404, "not_found", "unknown trial session '" + id + "'");
        return it->second;
    }

    static DesignSpec design_of(const json& body) {
        if (!body.contains("design")) throw ConfigError("missing 'design'");
        if (body["design"].is_object()) return design_from_json(body["design"]);
        return design_from_json(body);
    }

    static json catalog() {
        json designs = json::array();
        auto num = [](double v) { return json{{"type", "number"}, {"default", v}}; };
        const json common{{"p_T", num(0.3)},
                          {"eps", {{"type", "array[2]"}, {"default", {0.05, 0.05}}}},
                          {"safety_threshold", num(0.95)},
                          {"safety_min_n", {{"type", "integer"}, {"default", 3}}},
                          {"prior", {{"type", "object"}, {"default", {{"a", 1.0}, {"b", 1.0}}}}}};
        for (const auto& id : design_ids()) {
            const auto d = make_design(id, TargetSpec{});
            json params = common;
            if (d.family() == Family::TPI) {
                params["k1"] = num(1.0);
                params["k2"] = num(1.5);
            } else if (d.family() == Family::CCD) {
                params["delta"] = {{"type", "number|null"}, {"default", nullptr}};
                params["safety"] = {{"type", "boolean"}, {"default", false}};
            } else if (d.family() == Family::CRM) {
                params["skeleton"] = {{"type", "array"}, {"default", json::array()}};
                params["prior_sd"] = num(1.34);
                params["no_skip"] = {{"type", "boolean"}, {"default", true}};
                params["safety"] = {{"type", "boolean"}, {"default", false}};
            }
            designs.push_back({{"id", id}, {"fixed_table", d.is_fixed_rule()}, {"params", params}});
        }
        return {{"designs", designs}};
    }

    void routes() {
        server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return;
            if (res.status == 404) send(res, 404, {{"code", "not_found"}, {"message", "no such route"}});
            else send(res, res.status, {{"code", "http_error"}, {"message", "request failed"}});
        });
        server_.Get("/designs", guard([](const httplib::Request&, httplib::Response& res) { send(res, 200, catalog()); }));

        server_.Post("/decision", guard([](const httplib::Request& req, httplib::Response& res) {
            const auto body = parse_body(req);
            const auto design = design_of(body);
            if (!design.is_fixed_rule())
                throw ConfigError("design '" + design.id() + "' has no fixed per-tally decision");
            const DoseTally t{body.at("x").get<int>(), body.at("n").get<int>()};
            send(res, 200, explain(design, t));
        }));

        server_.Post("/tables", guard([](const httplib::Request& req, httplib::Response& res) {
            const auto body = parse_body(req);
            const auto design = design_of(body);
            const int n_max = body.value("n_max", 15);
            if (n_max < 1 || n_max > 200) throw HttpError(422, "invalid_value", "n_max must lie in [1, 200]");
            const auto t = decision_table(design, n_max);
            json columns = json::array();
            for (int n = 0; n <= n_max; ++n) {
                json col = json::array();
                for (int x = 0; x <= n; ++x) col.push_back(letter(t.at(x, n)));
                columns.push_back(col);
            }
            send(res, 200, {{"design", design_to_json(design)}, {"n_max", n_max}, {"columns", columns},
                            {"csv", table_to_csv(t)}});
        }));

        server_.Post("/simulate", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            if (!body.contains("workers")) body["workers"] = opt_.job_workers;
            auto request = simulate_request_from_json(body);
            // Configuration problems are reported now rather than as a failed job.
            for (const auto& d : request.designs)
                for (const auto& s : request.scenarios) DesignEngine(retarget(d, s.p_T), s.doses(), request.cfg);
            std::string id;
            std::shared_ptr<SimJob> job = std::make_shared<SimJob>();
            {
                std::lock_guard lock(jobs_mutex_);
                id = "j" + std::to_string(next_job_++);
                jobs_[id] = job;
                job_threads_.emplace_back([this, job, request = std::move(request)]() {
                    {
                        std::lock_guard l(jobs_mutex_);
                        job->status = "running";
                    }
                    try {
                        auto batch = run_simulate(request);
                        auto csv = oc_csv(batch.summaries);
                        auto results = oc_json(batch.summaries);
                        std::lock_guard l(jobs_mutex_);
                        job->csv = std::move(csv);
                        job->results = std::move(results);
                        job->status = "done";
                    } catch (const std::exception& e) {
                        std::lock_guard l(jobs_mutex_);
                        job->error = e.what();
                        job->status = "failed";
                    }
                });
            }
            send(res, 202, {{"job", id}, {"status", "queued"}});
        }));

        server_.Get(R"(/jobs/([A-Za-z0-9]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(jobs_mutex_);
            auto it = jobs_.find(req.matches[1]);
            if (it == jobs_.end()) throw HttpError(404, "not_found", "unknown job");
            const auto& j = *it->second;
            json body{{"job", it->first}, {"status", j.status}};
            if (j.status == "done") {
                body["csv"] = j.csv;
                body["results"] = j.results;
            }
            if (j.status == "failed") body["error"] = j.error;
            send(res, 200, body);
        }));

        server_.Post("/trials", guard([this](const httplib::Request& req, httplib::Response& res) {
            const auto body = parse_body(req);
            const auto design = design_of(body);
            const int doses = body.value("doses", 6);
            if (doses < 1 || doses > 20) throw ConfigError("doses must lie in [1, 20]");
            const auto cfg = trial_config_from_json(body.value("config", json::object()), doses);
            std::shared_ptr<TrialSession> s;
            {
                std::lock_guard lock(sessions_mutex_);
                const std::string id = "t" + std::to_string(next_session_++);
                s = std::make_shared<TrialSession>(id, design, cfg, doses);
                persist(s->create_event());
                sessions_[id] = s;
            }
            send(res, 201, s->to_json());
        }));

        server_.Get(R"(/trials/([A-Za-z0-9]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            auto s = find_session(req.matches[1]);
            std::lock_guard lock(s->mutex());
            send(res, 200, s->to_json());
        }));

        server_.Post(R"(/trials/([A-Za-z0-9]+)/cohorts)",
                     guard([this](const httplib::Request& req, httplib::Response& res) {
                         auto s = find_session(req.matches[1]);
                         std::unique_lock lock(s->mutex(), std::try_to_lock);
                         if (!lock.owns_lock())
                             throw HttpError(409, "conflict", "another cohort is being recorded for this trial");
                         const auto body = parse_body(req);
                         const int dlt = body.at("dlt_count").get<int>();
                         const int size = body.value("cohort_size", s->engine().config().cohort_size);
                         const auto ev = s->add_cohort(dlt, size, utc_timestamp());
                         persist(ev);
                         send(res, 200, {{"cohort", ev}, {"state", s->to_json()}});
                     }));

        server_.Post(R"(/trials/([A-Za-z0-9]+)/whatif)",
                     guard([this](const httplib::Request& req, httplib::Response& res) {
                         auto s = find_session(req.matches[1]);
                         std::unique_lock lock(s->mutex(), std::try_to_lock);
                         if (!lock.owns_lock())
                             throw HttpError(409, "conflict", "the trial is being updated");
                         const auto body = parse_body(req);
                         const int dlt = body.at("dlt_count").get<int>();
                         const int size = body.value("cohort_size", s->engine().config().cohort_size);
                         send(res, 200, s->preview(dlt, size));
                     }));

        server_.Delete(R"(/trials/([A-Za-z0-9]+))", guard([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            {
                std::lock_guard lock(sessions_mutex_);
                if (sessions_.erase(id) == 0) throw HttpError(404, "not_found", "unknown trial session '" + id + "'");
                persist({{"type", "delete"}, {"id", id}, {"time", utc_timestamp()}});
            }
            send(res, 200, {{"deleted", id}});
        }));
    }

    ServiceOptions opt_;
    httplib::Server server_;
    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<TrialSession>> sessions_;
    unsigned long next_session_ = 1;
    std::mutex store_mutex_;
    std::mutex jobs_mutex_;
    std::map<std::string, std::shared_ptr<SimJob>> jobs_;
    std::vector<std::thread> job_threads_;
    unsigned long next_job_ = 1;
};

}  // namespace ivd
