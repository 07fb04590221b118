#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <sstream>
#include <thread>

#include "ivd/cli.hpp"
#include "ivd/service.hpp"

using namespace ivd;

namespace {

class Running {
public:
    explicit Running(ServiceOptions opt = {}) : svc_(std::move(opt)) {
        port_ = svc_.bind_any("127.0.0.1");
        thread_ = std::thread([this] { svc_.listen_after_bind(); });
        svc_.server().wait_until_ready();
    }
    ~Running() {
        svc_.stop();
        thread_.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(120, 0);
        return c;
    }
    Service& service() { return svc_; }

private:
    Service svc_;
    int port_ = 0;
    std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
    auto r = c.Post(path, body.dump(), "application/json");
    EXPECT_TRUE(r) << path;
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
}

json get(httplib::Client& c, const std::string& path, int expect) {
    auto r = c.Get(path);
    EXPECT_TRUE(r) << path;
    if (!r) return {};
    EXPECT_EQ(r->status, expect) << path << " " << r->body;
    return json::parse(r->body);
}

}  // namespace

TEST(Http, DesignsAndDecision) {
    Running s;
    auto c = s.client();
    const auto designs = get(c, "/designs", 200);
    EXPECT_GE(designs["designs"].size(), 9u);
    auto d = post(c, "/decision", {{"design", "mtpi2"}, {"p_T", 0.3}, {"x", 1}, {"n", 3}}, 200);
    EXPECT_EQ(d["decision"], "S");
    d = post(c, "/decision", {{"design", "mtpi2"}, {"p_T", 0.3}, {"eps", {0.05, 0.05}}, {"x", 3}, {"n", 6}}, 200);
    EXPECT_EQ(d["decision"], "D");
    EXPECT_TRUE(d.contains("upms"));
    d = post(c, "/decision", {{"design", {{"design", "boin-lambda"}, {"p_T", 0.3}}}, {"x", 3}, {"n", 6}}, 200);
    EXPECT_EQ(d["decision"], "D");
    auto e = post(c, "/decision", {{"design", "crm"}, {"x", 0}, {"n", 3}}, 400);
    EXPECT_TRUE(e.contains("code"));
    EXPECT_TRUE(e.contains("message"));
    post(c, "/decision", {{"design", "mtpi2"}, {"x", 4}, {"n", 3}}, 422);
    auto bad = c.Post("/decision", "{not json", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    get(c, "/nowhere", 404);
}

TEST(Http, Tables) {
    Running s;
    auto c = s.client();
    const auto t = post(c, "/tables", {{"design", "mtpi2"}, {"p_T", 0.3}}, 200);
    EXPECT_EQ(t["n_max"], 15);
    EXPECT_EQ(t["columns"][3][1], "S");
    EXPECT_EQ(t["columns"][3][3], "DU");
    EXPECT_EQ(t["csv"], table_to_csv(decision_table(make_design("mtpi2", TargetSpec::make(0.3, 0.05, 0.05)), 15)));
    post(c, "/tables", {{"design", "mtpi2"}, {"n_max", 0}}, 422);
    post(c, "/tables", {{"design", "3+3"}}, 400);
}

TEST(Http, TrialSessionLifecycle) {
    Running s;
    auto c = s.client();
    auto t = post(c, "/trials", {{"design", "mtpi2"}, {"p_T", 0.3}, {"doses", 4}}, 201);
    const std::string id = t["id"];
    EXPECT_EQ(t["status"], "active");
    EXPECT_EQ(t["current_dose"], 1);

    const auto w = post(c, "/trials/" + id + "/whatif", {{"dlt_count", 0}}, 200);
    EXPECT_EQ(w["decision"], "E");
    EXPECT_EQ(w["next_dose"], 2);
    EXPECT_EQ(get(c, "/trials/" + id, 200)["treated"], 0);

    auto r = post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 0}}, 200);
    EXPECT_EQ(r["cohort"]["decision"], "E");
    EXPECT_EQ(r["state"]["current_dose"], 2);
    r = post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 3}}, 200);
    EXPECT_EQ(r["cohort"]["decision"], "DU");
    EXPECT_EQ(r["state"]["current_dose"], 1);
    EXPECT_EQ(r["state"]["excluded"], json::array({2, 3, 4}));
    // Logged decisions agree with the pure rule on the cumulative tally.
    const auto design = make_design("mtpi2", TargetSpec::make(0.3, 0.05, 0.05));
    for (const auto& ev : r["state"]["events"])
        EXPECT_EQ(ev["decision"], letter(decide(design, {ev["x"].get<int>(), ev["n"].get<int>()})));
    post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 5}}, 422);
    post(c, "/trials/" + id + "/cohorts", {{"cohort_size", 3}}, 400);
    post(c, "/trials/zzz/cohorts", {{"dlt_count", 0}}, 404);

    post(c, "/trials", {{"design", "mtpi2"}, {"doses", 0}}, 400);
    post(c, "/trials", {{"design", "3+3"}, {"config", {{"cohort_size", 2}}}}, 400);

    auto del = c.Delete("/trials/" + id);
    ASSERT_TRUE(del);
    EXPECT_EQ(del->status, 200);
    get(c, "/trials/" + id, 404);
}

TEST(Http, SafetyStopEndsSession) {
    Running s;
    auto c = s.client();
    const std::string id = post(c, "/trials", {{"design", "mtpi2"}, {"p_T", 0.3}}, 201)["id"];
    const auto r = post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 3}}, 200);
    EXPECT_EQ(r["state"]["status"], "stopped");
    EXPECT_EQ(r["state"]["stop_reason"], "safety_stop");
    EXPECT_TRUE(r["state"]["mtd"].is_null());
    const auto e = post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 0}}, 422);
    EXPECT_EQ(e["code"], "trial_stopped");
}

TEST(Http, StoreReplaysAfterRestart) {
    const auto dir = std::filesystem::temp_directory_path() / "ivd_http_store";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    ServiceOptions opt;
    opt.store_path = (dir / "events.jsonl").string();
    json before;
    std::string id, gone;
    {
        Running s(opt);
        auto c = s.client();
        id = post(c, "/trials", {{"design", "boin-lambda"}, {"p_T", 0.25}, {"doses", 5}}, 201)["id"];
        gone = post(c, "/trials", {{"design", "mtpi"}}, 201)["id"];
        post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 0}}, 200);
        post(c, "/trials/" + id + "/cohorts", {{"dlt_count", 1}}, 200);
        before = get(c, "/trials/" + id, 200);
        c.Delete("/trials/" + gone);
    }
    {
        Running s(opt);
        auto c = s.client();
        EXPECT_EQ(get(c, "/trials/" + id, 200), before);
        get(c, "/trials/" + gone, 404);
        EXPECT_EQ(s.service().session_count(), 1u);
        // New ids do not collide with replayed ones.
        const std::string fresh = post(c, "/trials", {{"design", "mtpi2"}}, 201)["id"];
        EXPECT_NE(fresh, id);
        EXPECT_NE(fresh, gone);
    }
    std::filesystem::remove_all(dir);
}

TEST(Http, ReplayRejectsTamperedLog) {
    std::ostringstream log;
    TrialSession t("t1", make_design("mtpi2", TargetSpec::make(0.3, 0.05, 0.05)), TrialConfig{}, 6);
    log << t.create_event().dump() << "\n";
    auto ev = t.add_cohort(0, 3, "now");
    ev["next_dose"] = 1;
    log << ev.dump() << "\n";
    std::istringstream in(log.str());
    EXPECT_THROW(Service::replay(in), ParseError);
    std::istringstream junk("{\"type\":\n");
    EXPECT_THROW(Service::replay(junk), ParseError);
}

TEST(Http, SimulateJobMatchesCli) {
    Running s;
    auto c = s.client();
    const json body{{"designs", {"mtpi2", "crm"}}, {"scenarios", "jiwang:0.2"}, {"trials", 15}, {"seed", 8}};
    const auto accepted = post(c, "/simulate", body, 202);
    const std::string job = accepted["job"];
    json status;
    for (int i = 0; i < 600; ++i) {
        status = get(c, "/jobs/" + job, 200);
        if (status["status"] == "done" || status["status"] == "failed") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    ASSERT_EQ(status["status"], "done");
    const char* argv[] = {"ivd", "simulate", "--designs", "mtpi2,crm", "--scenarios", "jiwang:0.2",
                          "--trials", "15", "--seed", "8"};
    std::ostringstream out, err;
    ASSERT_EQ(run_cli(10, argv, out, err), 0);
    EXPECT_EQ(status["csv"], out.str());
    EXPECT_EQ(status["results"]["results"].size(), 28u);
    get(c, "/jobs/j999", 404);
    post(c, "/simulate", {{"designs", {"3+3"}}, {"scenarios", "jiwang:0.3"}, {"cohort_size", 2}}, 400);
    post(c, "/simulate", {{"designs", {"mtpi2"}}, {"scenarios", "jiwang:0.3"}, {"trials", -1}}, 400);
}
