#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <fstream>
#include <future>
#include <thread>
#include <unistd.h>

#include "echo/miner.hpp"
#include "echo/review_service.hpp"

using namespace echo;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("echo-svc-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ServiceConfig quiet_config(const std::filesystem::path& dir) {
    ServiceConfig c;
    c.data_dir = dir;
    c.auto_rebuild = false;
    return c;
}

// Two submissions, two annotations with three instances each, nothing recorded.
json planted_manifest(bool with_instances) {
    json m{{"exercise", "planted"},
           {"submissions",
            json::array({{{"id", "s1"}, {"source", "a = scale_0(x) + 1\nfor i in merge_1(y): total += i\n\nb = 2\n"}},
                         {{"id", "s2"}, {"source", "c = scale_0(z) + 3\nfor j in merge_1(w): total += j\n"}},
                         {{"id", "s3"}, {"source", "d = scale_0(q) + 5\nfor k in merge_1(v): total += k\n"}},
                         {{"id", "s4"}, {"source", "e = scale_0(r) + 7\nfor m in merge_1(u): total += m\n"}}})},
           {"annotations", json::array({{{"id", "A"}, {"text", "scale call"}}, {{"id", "B"}, {"text", "merge loop"}}})},
           {"instances", json::array()}};
    if (with_instances)
        for (const char* s : {"s1", "s2", "s3"}) {
            m["instances"].push_back({{"annotation", "A"}, {"submission", s}, {"line", 1}});
            m["instances"].push_back({{"annotation", "B"}, {"submission", s}, {"line", 2}});
        }
    return m;
}

std::map<std::string, ParsedSubmission> parsed_of(const json& manifest) {
    return parse_submissions(dataset_from_json(manifest, "."));
}

}  // namespace

TEST_CASE("session without instances serves an empty generation 0") {
    TempDir tmp("empty");
    ReviewService svc(quiet_config(tmp.path));
    const auto id = svc.create_session(planted_manifest(false));
    const auto other = svc.create_session(planted_manifest(false));
    CHECK(id != other);
    CHECK(svc.session_ids().size() == 2);
    auto r = svc.suggest(id, "s1", 1);
    CHECK(r.generation == 0);
    CHECK(r.suggestions.empty());
    CHECK_FALSE(r.reason.empty());
    CHECK(svc.current(id).model->empty());
    CHECK(std::filesystem::is_regular_file(tmp.path / id / "manifest.json"));
    CHECK(std::filesystem::is_regular_file(tmp.path / id / "events.jsonl"));
}

TEST_CASE("initial model equals train() on the manifest instances") {
    TempDir tmp("initial");
    ReviewService svc(quiet_config(tmp.path));
    const auto manifest = planted_manifest(true);
    const auto id = svc.create_session(manifest);
    const auto g = svc.current(id);
    CHECK(g.number == 1);
    CHECK(g.log_size == 6);
    const auto d = dataset_from_json(manifest, ".");
    CHECK(*g.model == train(d.instances, parsed_of(manifest), ModelConfig{}));

    auto r = svc.suggest(id, "s4", 1);
    CHECK(r.generation == 1);
    REQUIRE_FALSE(r.suggestions.empty());
    CHECK(r.suggestions[0].annotation_id == "A");
    CHECK(r.suggestions[0].text == "scale call");
    CHECK(svc.suggest(id, "s4", 2).suggestions[0].annotation_id == "B");
    CHECK(svc.suggest(id, "s4", 1, 1).suggestions.size() == 1);
}

TEST_CASE("recording instances") {
    TempDir tmp("record");
    ReviewService svc(quiet_config(tmp.path));
    const auto id = svc.create_session(planted_manifest(false));

    auto r1 = svc.record_instance(id, "s1", 1, std::string("A"), std::nullopt);
    CHECK(r1.instance_id == 1);
    CHECK(r1.annotation_id == "A");
    CHECK_FALSE(r1.minted);
    CHECK(r1.context_extracted);

    auto r2 = svc.record_instance(id, "s1", 3, std::nullopt, std::string("blank line remark"));
    CHECK(r2.instance_id == 2);
    CHECK(r2.minted);
    CHECK_FALSE(r2.context_extracted);
    const auto library = svc.annotations(id);
    REQUIRE(library.size() == 3);
    CHECK(library.back() == Annotation{r2.annotation_id, "blank line remark"});

    CHECK_THROWS_AS(svc.record_instance(id, "s1", 0, std::string("A"), std::nullopt), BadLine);
    CHECK_THROWS_AS(svc.record_instance(id, "s1", 5, std::string("A"), std::nullopt), BadLine);
    CHECK_THROWS_AS(svc.record_instance(id, "nope", 1, std::string("A"), std::nullopt), UnknownSubmission);
    CHECK_THROWS_AS(svc.record_instance("nope", "s1", 1, std::string("A"), std::nullopt), UnknownSession);
    CHECK_THROWS_AS(svc.record_instance(id, "s1", 1, std::string("Z"), std::nullopt), UnknownAnnotation);
    CHECK_THROWS_AS(svc.record_instance(id, "s1", 1, std::string("A"), std::string("t")), SchemaError);
    CHECK_THROWS_AS(svc.record_instance(id, "s1", 1, std::nullopt, std::nullopt), SchemaError);
    CHECK_THROWS_AS(svc.suggest(id, "s1", 99), BadLine);

    const auto subs = svc.submissions(id);
    CHECK(subs[0].reviewed);
    CHECK(subs[0].instances == 2);
    CHECK_FALSE(subs[1].reviewed);
    CHECK(svc.status(id).instances == 2);
}

TEST_CASE("rebuild semantics") {
    TempDir tmp("rebuild");
    ReviewService svc(quiet_config(tmp.path));
    const auto id = svc.create_session(planted_manifest(false));
    CHECK(svc.rebuild(id) == 1);  // nothing recorded: still an empty model
    CHECK(svc.current(id).model->empty());

    svc.record_instance(id, "s1", 1, std::string("A"), std::nullopt);
    svc.record_instance(id, "s2", 1, std::string("A"), std::nullopt);
    CHECK(svc.rebuild(id) == 2);
    CHECK(svc.current(id).model->find("A")->patterns.empty());  // below the three-tree gate

    svc.record_instance(id, "s3", 1, std::string("A"), std::nullopt);
    CHECK(svc.rebuild(id) == 3);
    const auto g3 = svc.current(id);
    CHECK_FALSE(g3.model->find("A")->patterns.empty());

    CHECK(svc.rebuild(id) == 4);
    const auto g4 = svc.current(id);
    CHECK(*g4.model == *g3.model);
    CHECK(g4.model->serialize() == g3.model->serialize());
}

TEST_CASE("debounced background rebuilds") {
    TempDir tmp("debounce");
    auto config = quiet_config(tmp.path);
    config.auto_rebuild = true;
    config.rebuild_after_instances = 3;
    ReviewService svc(config);
    const auto id = svc.create_session(planted_manifest(false));

    svc.record_instance(id, "s1", 1, std::string("A"), std::nullopt);
    svc.record_instance(id, "s1", 2, std::string("B"), std::nullopt);
    svc.wait_idle(id);
    CHECK(svc.current(id).number == 0);
    svc.record_instance(id, "s2", 1, std::string("A"), std::nullopt);  // moved on to s2
    svc.wait_idle(id);
    CHECK(svc.current(id).number == 1);
    CHECK(svc.current(id).log_size == 3);

    svc.record_instance(id, "s2", 2, std::string("B"), std::nullopt);
    svc.record_instance(id, "s2", 2, std::string("B"), std::nullopt);
    svc.wait_idle(id);
    CHECK(svc.current(id).number == 1);
    svc.record_instance(id, "s2", 1, std::string("A"), std::nullopt);  // third since the last rebuild
    svc.wait_idle(id);
    CHECK(svc.current(id).number == 2);
    CHECK(svc.current(id).log_size == 6);
}

TEST_CASE("concurrent records are all persisted in one total order") {
    TempDir tmp("concurrent");
    ReviewService svc(quiet_config(tmp.path));
    const auto id = svc.create_session(planted_manifest(false));
    constexpr int per_thread = 40;
    auto writer = [&](const char* sub, const char* annotation) {
        std::vector<std::uint64_t> ids;
        for (int k = 0; k < per_thread; ++k)
            ids.push_back(svc.record_instance(id, sub, 1 + k % 2, std::string(annotation), std::nullopt).instance_id);
        return ids;
    };
    auto fa = std::async(std::launch::async, writer, "s1", "A");
    auto fb = std::async(std::launch::async, writer, "s2", "B");
    auto a = fa.get(), b = fb.get();
    std::set<std::uint64_t> all(a.begin(), a.end());
    all.insert(b.begin(), b.end());
    CHECK(all.size() == 2 * per_thread);
    CHECK(*all.begin() == 1);
    CHECK(*all.rbegin() == 2 * per_thread);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::is_sorted(b.begin(), b.end()));

    std::ifstream events(tmp.path / id / "events.jsonl");
    std::uint64_t expected = 1;
    for (std::string line; std::getline(events, line);) {
        auto e = json::parse(line);
        if (e["event"] == "instance") CHECK(e["instance_id"].get<std::uint64_t>() == expected++);
    }
    CHECK(expected == 2 * per_thread + 1);
}

TEST_CASE("suggest during an in-flight rebuild serves the previous generation") {
    TempDir tmp("inflight");
    std::promise<void> entered, release;
    auto release_future = release.get_future().share();
    std::atomic<bool> hold{false};
    auto config = quiet_config(tmp.path);
    config.before_publish = [&](const std::string&, std::uint64_t) {
        if (!hold.exchange(false)) return;
        entered.set_value();
        release_future.wait();
    };
    ReviewService svc(config);
    const auto id = svc.create_session(planted_manifest(true));
    CHECK(svc.current(id).number == 1);

    svc.record_instance(id, "s4", 1, std::string("B"), std::nullopt);
    hold = true;
    auto rebuilding = std::async(std::launch::async, [&] { return svc.rebuild(id); });
    entered.get_future().wait();

    const auto start = std::chrono::steady_clock::now();
    auto r = svc.suggest(id, "s4", 1);
    const auto waited = std::chrono::steady_clock::now() - start;
    CHECK(r.generation == 1);
    CHECK(waited < 1s);
    // Writes are not blocked either.
    CHECK(svc.record_instance(id, "s4", 2, std::string("B"), std::nullopt).instance_id == 8);
    CHECK(svc.status(id).generation == 1);

    release.set_value();
    CHECK(rebuilding.get() == 2);
    CHECK(svc.suggest(id, "s4", 1).generation == 2);
    CHECK(svc.current(id).log_size == 7);  // the prefix seen when the rebuild started
}

TEST_CASE("restart replays the event log") {
    TempDir tmp("replay");
    std::string id, minted;
    std::string model_text;
    std::uint64_t generation = 0;
    json manifest = planted_manifest(true);
    {
        ReviewService svc(quiet_config(tmp.path));
        id = svc.create_session(manifest);
        svc.record_instance(id, "s4", 1, std::string("A"), std::nullopt);
        minted = svc.record_instance(id, "s4", 2, std::nullopt, std::string("new remark")).annotation_id;
        svc.record_instance(id, "s3", 2, minted, std::nullopt);
        generation = svc.rebuild(id);
        model_text = svc.current(id).model->serialize();
    }  // process "dies" here
    {
        ReviewService svc(quiet_config(tmp.path));
        const auto g = svc.current(id);
        CHECK(g.number == generation);
        CHECK(g.model->serialize() == model_text);
        CHECK(svc.annotations(id).back() == Annotation{minted, "new remark"});
        CHECK(svc.status(id).instances == 9);
        CHECK(svc.rebuild(id) == generation + 1);

        // Writes after the last generation, then a torn final line.
        svc.record_instance(id, "s1", 1, std::string("A"), std::nullopt);
    }
    std::ofstream(tmp.path / id / "events.jsonl", std::ios::app) << "{\"event\": \"inst";
    {
        ReviewService svc(quiet_config(tmp.path));
        const auto g = svc.current(id);
        CHECK(g.number == generation + 2);
        CHECK(g.log_size == 10);
        auto d = dataset_from_json(manifest, ".");
        CHECK(svc.status(id).instances == 10);
        CHECK(g.model->contains(minted));
    }
}

TEST_CASE("pattern explosion surfaces as 503 and keeps the served generation") {
    TempDir tmp("explode");
    auto config = quiet_config(tmp.path);
    config.model.miner.max_patterns = 2;
    ReviewService svc(config);
    const auto id = svc.create_session(planted_manifest(true));
    CHECK(svc.current(id).number == 0);
    REQUIRE(svc.status(id).rebuild_error);
    try {
        svc.rebuild(id);
        FAIL("expected PatternExplosion");
    } catch (const PatternExplosion& e) {
        CHECK((e.annotation_id() == "A" || e.annotation_id() == "B"));
        auto [status, body] = problem_detail(e);
        CHECK(status == 503);
        CHECK(body["code"] == "PatternExplosion");
        CHECK(body["annotation_id"] == e.annotation_id());
        CHECK(body["status"] == 503);
    }
    CHECK(svc.current(id).number == 0);
}

TEST_CASE("HTTP API") {
    TempDir tmp("http");
    ReviewService svc(quiet_config(tmp.path));
    ReviewServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread serving([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);

    auto post = [&](const std::string& path, const json& body) {
        auto res = client.Post(path, body.dump(), "application/json");
        REQUIRE(res);
        return std::make_pair(res->status, json::parse(res->body));
    };
    auto get = [&](const std::string& path) {
        auto res = client.Get(path);
        REQUIRE(res);
        return std::make_pair(res->status, json::parse(res->body));
    };

    auto [created, body] = post("/v1/sessions", planted_manifest(true));
    CHECK(created == 201);
    const std::string sid = body["session_id"];
    const std::string base = "/v1/sessions/" + sid;

    auto [st, subs] = get(base + "/submissions");
    CHECK(st == 200);
    REQUIRE(subs["submissions"].size() == 4);
    CHECK(subs["submissions"][0]["reviewed"] == true);
    CHECK(subs["submissions"][3]["reviewed"] == false);

    auto [st2, source] = get(base + "/submissions/s4/source");
    CHECK(st2 == 200);
    CHECK(source["grammar"] == "python");
    CHECK(source["source"].get<std::string>().rfind("e = scale_0", 0) == 0);

    auto [st3, suggest] = get(base + "/submissions/s4/suggest?line=1&top=5");
    CHECK(st3 == 200);
    CHECK(suggest["generation"] == 1);
    REQUIRE_FALSE(suggest["suggestions"].empty());
    CHECK(suggest["suggestions"][0]["annotation_id"] == "A");
    for (const char* key : {"text", "combined", "pattern_score", "unique_fraction"})
        CHECK(suggest["suggestions"][0].contains(key));

    auto [st4, recorded] = post(base + "/submissions/s4/instances", {{"line", 1}, {"annotation_id", "A"}});
    CHECK(st4 == 201);
    CHECK(recorded["instance_id"] == 7);
    CHECK(recorded["context_extracted"] == true);
    auto [st5, minted] = post(base + "/submissions/s1/instances", {{"line", 3}, {"text", "blank"}});
    CHECK(st5 == 201);
    CHECK(minted["context_extracted"] == false);

    auto [st6, rebuilt] = post(base + "/rebuild", json::object());
    CHECK(st6 == 200);
    CHECK(rebuilt["generation"] == 2);

    auto [st7, library] = get(base + "/annotations");
    CHECK(st7 == 200);
    CHECK(library["annotations"].size() == 3);

    auto [st8, blank] = get(base + "/submissions/s1/suggest?line=3");
    CHECK(st8 == 200);
    CHECK(blank["suggestions"].empty());
    CHECK(blank.contains("reason"));

    auto [e1, p1] = get("/v1/sessions/nope/submissions");
    CHECK(e1 == 404);
    CHECK(p1["code"] == "UnknownSession");
    CHECK(p1["status"] == 404);
    auto [e2, p2] = get(base + "/submissions/s1/suggest?line=40");
    CHECK(e2 == 400);
    CHECK(p2["code"] == "BadLine");
    auto [e3, p3] = get(base + "/submissions/s1/suggest");
    CHECK(e3 == 400);
    auto [e4, p4] = post(base + "/submissions/zz/instances", {{"line", 1}, {"annotation_id", "A"}});
    CHECK(e4 == 404);
    CHECK(p4["code"] == "UnknownSubmission");
    auto res = client.Post("/v1/sessions", "{broken", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(json::parse(res->body)["code"] == "SchemaError");
    auto [e5, p5] = post("/v1/sessions", {{"exercise", "x"},
                                          {"submissions", json::array()},
                                          {"annotations", json::array()},
                                          {"instances", json::array({{{"annotation", "a"},
                                                                      {"submission", "b"},
                                                                      {"line", 1}}})}});
    CHECK(e5 == 400);
    CHECK(p5["code"] == "DanglingReference");
    CHECK(p5["references"].size() == 2);
    auto [e6, p6] = get("/v1/nothing");
    CHECK(e6 == 404);

    server.stop();
    serving.join();
}
