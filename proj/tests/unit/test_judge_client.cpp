#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "lcomp/judge_client.hpp"
#include "lcomp/rng.hpp"

using namespace lcomp;

namespace {

const std::vector<ElementFeature> kElements = {
    {"Character (Moon Princess)", "silver hair, crescent tiara"},
};

struct TestServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    nlohmann::json last_body;

    explicit TestServer(const std::string& response_text) {
        server.Post("/v1/judge", [this, response_text](const httplib::Request& req,
                                                        httplib::Response& res) {
            ++hits;
            last_body = nlohmann::json::parse(req.body);
            res.set_content(nlohmann::json({{"text", response_text}}).dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~TestServer() {
        server.stop();
        thread.join();
    }
};

const std::string kCannedResponse =
    "For Image 1:\nGood composition overall.\n\nFor Image 2:\nThe character is missing.\n\n"
    "Scores:\n"
    "Image 1: Composition Quality: 8.5/10, Image Quality: 9/10\n"
    "Image 2: Composition Quality: 5/10, Image Quality: 7/10\n";

Tensor canvas_image(uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({kCanvas, kCanvas});
    for (auto& v : t.data) v = static_cast<float>(rng.next_double());
    return t;
}

}  // namespace

TEST_CASE("http judge posts the expected request shape and parses the reply") {
    TestServer srv(kCannedResponse);
    JudgeClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(srv.port);
    HttpJudge judge(cfg);

    const JudgeVerdict v = judge.evaluate(canvas_image(1), canvas_image(2), kElements, 7);
    CHECK(v.comp1 == 8.5);
    CHECK(v.img1 == 9.0);
    CHECK(v.comp2 == 5.0);
    CHECK(v.img2 == 7.0);
    CHECK(judge.network_calls() == 1);

    const nlohmann::json& body = srv.last_body;
    CHECK(body.at("model") == cfg.model);
    CHECK(body.at("seed") == 7);
    CHECK(body.at("prompt").get<std::string>().find("Moon Princess") != std::string::npos);
    REQUIRE(body.at("images").size() == 2);
    CHECK(body["images"][0].at("format") == "png");
    CHECK_FALSE(body["images"][0].at("data").get<std::string>().empty());
    CHECK(body["images"][0]["data"] != body["images"][1]["data"]);
}

TEST_CASE("repeat queries replay from the cache with no extra network calls") {
    const std::string cache =
        (std::filesystem::temp_directory_path() / "lcomp_judge_cache.jsonl").string();
    std::filesystem::remove(cache);
    TestServer srv(kCannedResponse);
    JudgeClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(srv.port);
    cfg.cache_path = cache;

    const Tensor a = canvas_image(3), b = canvas_image(4);
    {
        HttpJudge judge(cfg);
        judge.evaluate(a, b, kElements, 1);
        judge.evaluate(a, b, kElements, 1);  // in-memory cache hit
        CHECK(judge.network_calls() == 1);
        judge.evaluate(a, b, kElements, 2);  // different seed, new key
        CHECK(judge.network_calls() == 2);
    }
    CHECK(srv.hits == 2);
    {
        // fresh client replays from the file cache
        HttpJudge judge(cfg);
        const JudgeVerdict v = judge.evaluate(a, b, kElements, 1);
        CHECK(v.comp1 == 8.5);
        CHECK(judge.network_calls() == 0);
    }
    CHECK(srv.hits == 2);
    std::filesystem::remove(cache);
}

TEST_CASE("unreachable server raises a query error after retries") {
    JudgeClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:9";  // discard port, nothing listening
    cfg.retries = 1;
    HttpJudge judge(cfg);
    CHECK_THROWS_AS(judge.evaluate(canvas_image(5), canvas_image(6), kElements, 1), QueryError);
}

TEST_CASE("unparseable response propagates as a parse error") {
    TestServer srv("sorry, I cannot rate these images");
    JudgeClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(srv.port);
    HttpJudge judge(cfg);
    CHECK_THROWS_AS(judge.evaluate(canvas_image(7), canvas_image(8), kElements, 1), ParseError);
}

TEST_CASE("base64 encoding reference vectors") {
    CHECK(lcomp::detail::base64_encode("") == "");
    CHECK(lcomp::detail::base64_encode("f") == "Zg==");
    CHECK(lcomp::detail::base64_encode("fo") == "Zm8=");
    CHECK(lcomp::detail::base64_encode("foo") == "Zm9v");
    CHECK(lcomp::detail::base64_encode("foobar") == "Zm9vYmFy");
}
