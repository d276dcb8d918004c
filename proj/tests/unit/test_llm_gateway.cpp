#include <doctest.h>

#include <cstdlib>
#include <deque>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "forge/errors.hpp"
#include "forge/llm_gateway.hpp"
#include "helpers.hpp"

using namespace forge;
using namespace forge::llm;

namespace {

// Local HTTP server that replays a script of status codes, then 200s.
class StubServer {
public:
    explicit StubServer(std::deque<int> statuses) : statuses_(std::move(statuses)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const auto status = next_status(req);
            res.status = status;
            if (status != 200) {
                res.set_content(R"({"error":"scripted"})", "application/json");
                return;
            }
            const auto body = json::parse(req.body);
            json choices = json::array();
            for (int i = 0; i < body.value("n", 1); ++i) {
                choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", "B"}}}});
            }
            res.set_content(json{{"choices", choices}, {"usage", {{"prompt_tokens", 1000}, {"completion_tokens", 500}}}}
                                .dump(),
                            "application/json");
        });
        server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
            res.status = next_status(req);
            const auto body = json::parse(req.body);
            json data = json::array();
            for (std::size_t i = 0; i < body["input"].size(); ++i) {
                data.push_back({{"index", i}, {"embedding", {1.0, static_cast<double>(i), 0.5}}});
            }
            res.set_content(json{{"data", data}, {"usage", {{"prompt_tokens", 10}}}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    [[nodiscard]] int requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    [[nodiscard]] std::string last_auth() const {
        std::lock_guard lock(mu_);
        return last_auth_;
    }

private:
    int next_status(const httplib::Request& req) {
        std::lock_guard lock(mu_);
        ++requests_;
        last_auth_ = req.get_header_value("Authorization");
        if (statuses_.empty()) return 200;
        const int s = statuses_.front();
        statuses_.pop_front();
        return s;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mu_;
    std::deque<int> statuses_;
    int requests_ = 0;
    std::string last_auth_;
};

RemoteConfig fast_config(const std::string& url) {
    RemoteConfig rc;
    rc.base_url = url;
    rc.model = "stub";
    rc.retry.base_delay = std::chrono::milliseconds(1);
    rc.retry.max_delay = std::chrono::milliseconds(4);
    rc.price_prompt_per_1k = 0.01;
    rc.price_completion_per_1k = 0.03;
    return rc;
}

}  // namespace

TEST_CASE("mock completions are deterministic and sized") {
    MockChatBackend mock("m", rule_responder());
    const auto a = mock.complete("Question?\nA. x\nB. y\nC. z\nD. w\nSelect only one answer by stating either A, B, C, or D.", 0.8, 20, 5);
    const auto b = mock.complete("Question?\nA. x\nB. y\nC. z\nD. w\nSelect only one answer by stating either A, B, C, or D.", 0.8, 20, 5);
    CHECK(a.completions.size() == 20);
    CHECK(a.completions == b.completions);
    CHECK_THROWS_AS(mock.complete("p", 0.8, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(mock.complete("", 0.8, 1, 1), std::invalid_argument);
    CHECK(mock.call_count() == 2);
}

TEST_CASE("canned responder replays by prompt fingerprint") {
    MockChatBackend mock("m", canned_responder({{prompt_fingerprint("hello"), {"x", "y"}}}));
    const auto batch = mock.complete("hello", 0.0, 3, 0);
    CHECK(batch.completions == std::vector<std::string>{"x", "y", "x"});
    CHECK_THROWS_AS(mock.complete("other", 0.0, 1, 0), ConfigError);
}

TEST_CASE("retry policy doubles and caps") {
    RetryPolicy p;
    CHECK(p.delay_for(0).count() == 500);
    CHECK(p.delay_for(1).count() == 1000);
    CHECK(p.delay_for(10).count() == 8000);
    CHECK(RetryPolicy::retryable(429));
    CHECK(RetryPolicy::retryable(503));
    CHECK(RetryPolicy::retryable(0));
    CHECK_FALSE(RetryPolicy::retryable(400));
}

TEST_CASE("remote backend retries 429 twice then succeeds") {
    test::QuietLogs quiet;
    StubServer server({429, 429});
    auto ledger = std::make_shared<CallLedger>();
    RemoteChatBackend backend("remote", fast_config(server.url()), ledger);
    const auto batch = backend.complete("hi", 0.8, 3, 1);
    CHECK(batch.completions == std::vector<std::string>{"B", "B", "B"});
    CHECK(batch.retries == 2);
    CHECK(backend.retry_count() == 2);
    CHECK(server.requests() == 3);
    CHECK(batch.usage.cost_usd == doctest::Approx(0.01 + 0.015));
    CHECK(ledger->totals().remote_calls == 1);
}

TEST_CASE("exhausted retries raise BackendUnavailable with the last status") {
    test::QuietLogs quiet;
    StubServer server({503, 503, 503, 502});
    RemoteChatBackend backend("remote", fast_config(server.url()));
    try {
        (void)backend.complete("hi", 0.8, 1, 1);
        FAIL("expected BackendUnavailable");
    } catch (const BackendUnavailable& e) {
        CHECK(e.last_status() == 502);
    }
    CHECK(server.requests() == 4);
}

TEST_CASE("authentication failures are config errors without retries") {
    StubServer server({401});
    RemoteChatBackend backend("remote", fast_config(server.url()));
    CHECK_THROWS_AS((void)backend.complete("hi", 0.8, 1, 1), ConfigError);
    CHECK(server.requests() == 1);
}

TEST_CASE("credentials come from the named environment variable") {
    StubServer server({});
    auto rc = fast_config(server.url());
    rc.api_key_env = "FORGE_TEST_KEY_UNSET_XYZ";
    ::unsetenv("FORGE_TEST_KEY_UNSET_XYZ");
    CHECK_THROWS_AS(RemoteChatBackend("remote", rc), ConfigError);
    ::setenv("FORGE_TEST_KEY_UNSET_XYZ", "sekret", 1);
    RemoteChatBackend backend("remote", rc);
    (void)backend.complete("hi", 0.0, 1, 1);
    CHECK(server.last_auth() == "Bearer sekret");
    ::unsetenv("FORGE_TEST_KEY_UNSET_XYZ");
}

TEST_CASE("backends without n support are called once per sample") {
    StubServer server({});
    auto rc = fast_config(server.url());
    rc.supports_n = false;
    RemoteChatBackend backend("remote", rc);
    const auto batch = backend.complete("hi", 0.8, 4, 1);
    CHECK(batch.completions.size() == 4);
    CHECK(server.requests() == 4);
}

TEST_CASE("budget ceiling stops remote calls") {
    StubServer server({});
    auto ledger = std::make_shared<CallLedger>();
    ledger->set_budget(0.03);
    RemoteChatBackend backend("remote", fast_config(server.url()), ledger);
    (void)backend.complete("hi", 0.8, 1, 1);  // costs 0.025
    (void)backend.complete("hi", 0.8, 1, 2);  // 0.05 total, over the ceiling afterwards
    CHECK_THROWS_AS((void)backend.complete("hi", 0.8, 1, 3), BackendUnavailable);
    CHECK(server.requests() == 2);
}

TEST_CASE("chat cache serves repeated requests from disk") {
    test::TempDir dir;
    StubServer server({});
    auto remote = std::make_shared<RemoteChatBackend>("remote", fast_config(server.url()));
    {
        CachingChatBackend cached(remote, dir.path());
        (void)cached.complete("hi", 0.8, 2, 1);
        const auto again = cached.complete("hi", 0.8, 2, 1);
        CHECK(again.from_cache);
        CHECK(cached.hits() == 1);
        (void)cached.complete("hi", 0.8, 2, 2);  // different seed: new request
    }
    CachingChatBackend fresh(remote, dir.path());
    CHECK(fresh.complete("hi", 0.8, 2, 1).from_cache);
    CHECK(server.requests() == 2);
}

TEST_CASE("ledger totals are monotone and flush appends") {
    test::TempDir dir;
    CallLedger ledger;
    std::uint64_t prev = 0;
    for (int i = 0; i < 5; ++i) {
        ledger.record({"b", "chat", i, true, {10, 5, 0.1}});
        CHECK(ledger.totals().calls > prev);
        prev = ledger.totals().calls;
    }
    ledger.flush_to(dir / "calls.jsonl");
    ledger.record({"b", "embed", 9, false, {}});
    ledger.flush_to(dir / "calls.jsonl");
    CHECK(read_jsonl(dir / "calls.jsonl").size() == 6);
    CHECK(ledger.totals().cost_usd == doctest::Approx(0.5));
}

TEST_CASE("embedding cache: hits, distinct vectors, empty input, disk reuse") {
    test::TempDir dir;
    auto mock = std::make_shared<MockEmbeddingBackend>("e", 32, 1);
    {
        EmbeddingCache cache(mock, dir.path(), 2);
        CHECK(cache.embed(std::vector<std::string>{}).empty());
        const std::vector<std::string> texts{"the cat sat", "a dog ran", "the cat sat"};
        const auto v = cache.embed(texts);
        CHECK(v[0] == v[2]);
        CHECK(v[0] != v[1]);
        CHECK(v[0].size() == 32);
        const auto again = cache.embed(std::vector<std::string>{"a dog ran"});
        CHECK(again[0] == v[1]);
        CHECK(cache.hits() >= 1);
    }
    const auto calls = mock->call_count();
    EmbeddingCache reopened(mock, dir.path(), 2);
    (void)reopened.embed(std::vector<std::string>{"the cat sat", "a dog ran"});
    CHECK(mock->call_count() == calls);
    CHECK(reopened.misses() == 0);
}

TEST_CASE("remote embeddings check the configured dimension") {
    StubServer server({});
    RemoteEmbeddingBackend ok("e", 3, fast_config(server.url()));
    const auto v = ok.embed(std::vector<std::string>{"a", "b"});
    CHECK(v.size() == 2);
    CHECK(v[1][1] == 1.0);
    RemoteEmbeddingBackend wrong("e", 8, fast_config(server.url()));
    CHECK_THROWS_AS((void)wrong.embed(std::vector<std::string>{"a"}), ConfigError);
}

TEST_CASE("cosine similarity") {
    const std::vector<double> a{1, 0};
    const std::vector<double> b{0, 1};
    const std::vector<double> c{2, 0};
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
}
