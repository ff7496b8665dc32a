#include "distill/llm_gateway.hpp"
#include "distill/logging.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <mutex>
#include <thread>

using namespace distill;

namespace {

PromptInstance prompt(const std::string& user) {
    return PromptInstance{"t", 1, {{"system", "Be brief."}, {"user", user}}};
}

ModelEndpoint mock_endpoint() {
    return ModelEndpoint{"teacher", "mock://inline", "", Money{}, Money{}};
}

std::shared_ptr<MockChatBackend> backend_for(const std::vector<std::string>& users, const GenerationConfig& cfg,
                                             std::chrono::milliseconds latency = {}) {
    auto backend = std::make_shared<MockChatBackend>();
    int i = 0;
    for (const auto& u : users) {
        CompletionRequest req{"teacher", prompt(u).messages, cfg};
        FixtureEntry e{"answer to " + u, 10, 3, latency * ((i++ * 7) % 5)};
        backend->add(req.matcher_digest(), e);
    }
    return backend;
}

// Captures every log line for the lifetime of the object.
struct LogCapture {
    std::mutex mu;
    std::vector<std::string> lines;
    LogCapture() {
        set_min_log_level(LogLevel::debug);
        set_log_sink([this](const std::string& line) {
            std::lock_guard lock(mu);
            lines.push_back(line);
        });
    }
    ~LogCapture() {
        set_log_sink({});
        set_min_log_level(LogLevel::info);
    }
    std::string all() {
        std::lock_guard lock(mu);
        std::string out;
        for (const auto& l : lines) {
            out += l + "\n";
        }
        return out;
    }
};

// Local OpenAI-compatible server replaying a fixed list of status codes.
struct ScriptedServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mu;
    std::vector<int> statuses;
    std::vector<std::string> auth_headers;
    std::size_t hits = 0;

    explicit ScriptedServer(std::vector<int> script) : statuses(std::move(script)) {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu);
            auth_headers.push_back(req.get_header_value("Authorization"));
            int status = hits < statuses.size() ? statuses[hits] : 200;
            ++hits;
            res.status = status;
            if (status == 200) {
                json body{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", "ok"}}}}})},
                          {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 1}}}};
                res.set_content(body.dump(), "application/json");
            } else {
                res.set_content(R"({"error":"nope"})", "application/json");
            }
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~ScriptedServer() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST_CASE("generation config validation") {
    GenerationConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_new_tokens = kMaxNewTokensCap + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.top_p = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.temperature = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.top_k = 40;
    c.stop = {"\n\n"};
    CHECK(GenerationConfig::from_json(c.to_json()) == c);
}

TEST_CASE("matcher digest depends on messages and config, not model") {
    GenerationConfig a;
    GenerationConfig b;
    b.temperature = 0.7;
    CompletionRequest r1{"m1", prompt("x").messages, a};
    CompletionRequest r2{"m2", prompt("x").messages, a};
    CompletionRequest r3{"m1", prompt("x").messages, b};
    CompletionRequest r4{"m1", prompt("y").messages, a};
    CHECK(r1.matcher_digest() == r2.matcher_digest());
    CHECK(r1.matcher_digest() != r3.matcher_digest());
    CHECK(r1.matcher_digest() != r4.matcher_digest());
    auto wire = r1.to_wire();
    CHECK(wire["model"] == "m1");
    CHECK(wire["messages"].size() == 2);
}

TEST_CASE("mock backend serves fixtures and reports misses") {
    GenerationConfig cfg;
    auto backend = backend_for({"q1", "q2"}, cfg);
    LlmGateway gw(mock_endpoint(), backend);
    auto rec = gw.generate(prompt("q1"), cfg, "s1");
    CHECK(rec.ok);
    CHECK(rec.raw_output == "answer to q1");
    CHECK(rec.input_tokens == 10);
    CHECK(rec.output_tokens == 3);
    CHECK(rec.attempts == 1);
    CHECK_FALSE(rec.tokens_estimated);
    CHECK_THROWS_AS(gw.generate(prompt("unknown"), cfg, "s3"), FixtureMissError);

    auto text = fixture_line(CompletionRequest{"teacher", prompt("q9").messages, cfg}, FixtureEntry{"nine", {}, {}, {}})
                    .dump() + "\n";
    auto loaded = MockChatBackend::from_jsonl(text);
    LlmGateway gw2(mock_endpoint(), loaded);
    auto est = gw2.generate(prompt("q9"), cfg, "s9");
    CHECK(est.tokens_estimated);
    CHECK(est.output_tokens == estimate_tokens("nine"));
    CHECK(est.input_tokens == estimate_tokens("Be brief.") + estimate_tokens("q9"));
    CHECK_THROWS_AS(MockChatBackend::from_jsonl("{not json}\n"), SchemaError);
}

TEST_CASE("record JSON omits timing unless requested") {
    GenerationConfig cfg;
    LlmGateway gw(mock_endpoint(), backend_for({"q"}, cfg));
    auto rec = gw.generate(prompt("q"), cfg, "s");
    auto j = rec.to_json();
    CHECK_FALSE(j.contains("latency_ms"));
    CHECK(rec.to_json(true).contains("latency_ms"));
    auto back = GenerationRecord::from_json(j);
    CHECK(back.raw_output == rec.raw_output);
    CHECK(back.to_json() == j);
}

TEST_CASE("batch output order is independent of parallelism") {
    GenerationConfig cfg;
    std::vector<std::string> users;
    std::vector<BatchItem> items;
    for (int i = 0; i < 40; ++i) {
        users.push_back("question " + std::to_string(i));
        items.push_back(BatchItem{"s" + std::to_string(i), prompt(users.back())});
    }
    // Unknown prompt in the middle: comes back as a failed record in place.
    items.insert(items.begin() + 17, BatchItem{"missing", prompt("not in fixtures")});
    auto backend = backend_for(users, cfg, std::chrono::milliseconds(2));
    LlmGateway gw(mock_endpoint(), backend);

    std::vector<json> runs;
    for (int k : {1, 4, 16}) {
        auto out = gw.generate_batch(items, cfg, k);
        REQUIRE(out.size() == items.size());
        json arr = json::array();
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].sample_id == items[i].sample_id);
            arr.push_back(out[i].to_json());
        }
        CHECK_FALSE(out[17].ok);
        CHECK(out[17].error_code == "FixtureMissError");
        runs.push_back(arr);
    }
    CHECK(runs[0] == runs[1]);
    CHECK(runs[0] == runs[2]);
    CHECK_THROWS_AS(gw.generate_batch(items, cfg, 0), ConfigError);
}

TEST_CASE("retry policy backoff") {
    RetryPolicy p;
    p.initial_backoff = std::chrono::milliseconds(100);
    p.multiplier = 3.0;
    p.max_backoff = std::chrono::milliseconds(500);
    CHECK(p.delay_before(1).count() == 100);
    CHECK(p.delay_before(2).count() == 300);
    CHECK(p.delay_before(3).count() == 500);
}

TEST_CASE("http backend retries 429 and stops on 400") {
    const char* var = "DISTILL_TEST_GATEWAY_KEY";
    const std::string secret = "sk-test-3f9a2c77e1b04d5a";
    ::setenv(var, secret.c_str(), 1);
    LogCapture logs;
    std::vector<std::chrono::milliseconds> slept;
    RetryPolicy retry{3, std::chrono::milliseconds(100), 2.0, std::chrono::milliseconds(1000)};
    auto sleeper = [&](std::chrono::milliseconds d) { slept.push_back(d); };

    SUBCASE("transient failures") {
        ScriptedServer server({429, 429, 200});
        ModelEndpoint ep{"teacher", server.url(), var, Money{}, Money{}};
        LlmGateway gw(ep, std::make_shared<HttpChatBackend>(ep.base_url), retry, sleeper);
        auto rec = gw.generate(prompt("q"), GenerationConfig{}, "s");
        CHECK(rec.ok);
        CHECK(rec.raw_output == "ok");
        CHECK(rec.attempts == 3);
        CHECK(rec.input_tokens == 12);
        CHECK(server.hits == 3);
        REQUIRE(slept.size() == 2);
        CHECK(slept[0].count() == 100);
        CHECK(slept[1].count() == 200);
        CHECK(server.auth_headers.at(0) == "Bearer " + secret);
        CHECK(rec.to_json(true).dump().find(secret) == std::string::npos);
        CHECK(ep.to_json().dump().find(secret) == std::string::npos);
    }
    SUBCASE("retries exhausted") {
        ScriptedServer server({503, 503, 503, 503, 503, 503});
        ModelEndpoint ep{"teacher", server.url(), var, Money{}, Money{}};
        LlmGateway gw(ep, std::make_shared<HttpChatBackend>(ep.base_url), retry, sleeper);
        CHECK_THROWS_AS(gw.generate(prompt("q"), GenerationConfig{}, "s"), ProviderStatusError);
        CHECK(server.hits == 3);
        std::vector<BatchItem> items{{"s", prompt("q")}};
        auto out = gw.generate_batch(items, GenerationConfig{}, 2);
        CHECK_FALSE(out[0].ok);
        CHECK(out[0].to_json().dump().find(secret) == std::string::npos);
    }
    SUBCASE("client errors are not retried") {
        ScriptedServer server({400, 200});
        ModelEndpoint ep{"teacher", server.url(), var, Money{}, Money{}};
        LlmGateway gw(ep, std::make_shared<HttpChatBackend>(ep.base_url), retry, sleeper);
        try {
            gw.generate(prompt("q"), GenerationConfig{}, "s");
            FAIL("expected ProviderStatusError");
        } catch (const ProviderStatusError& e) {
            CHECK(e.status() == 400);
            CHECK_FALSE(e.retryable());
        }
        CHECK(server.hits == 1);
        CHECK(slept.empty());
    }
    SUBCASE("unreachable host is a transport error") {
        ModelEndpoint ep{"teacher", "http://127.0.0.1:1", var, Money{}, Money{}};
        LlmGateway gw(ep, std::make_shared<HttpChatBackend>(ep.base_url, std::chrono::milliseconds(500)), retry,
                      sleeper);
        CHECK_THROWS_AS(gw.generate(prompt("q"), GenerationConfig{}, "s"), TransportError);
        CHECK(slept.size() == 2);
    }
    CHECK(logs.all().find(secret) == std::string::npos);
    ::unsetenv(var);
}

TEST_CASE("missing credential names the variable only") {
    ::unsetenv("DISTILL_TEST_UNSET_KEY");
    ModelEndpoint ep{"teacher", "http://127.0.0.1:1", "DISTILL_TEST_UNSET_KEY", Money{}, Money{}};
    LlmGateway gw(ep, std::make_shared<HttpChatBackend>(ep.base_url));
    try {
        gw.generate(prompt("q"), GenerationConfig{}, "s");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("DISTILL_TEST_UNSET_KEY") != std::string::npos);
    }
}

TEST_CASE("endpoint JSON round trip") {
    ModelEndpoint ep{"student", "http://localhost:8000/v1", "STUDENT_KEY", Money::from_dollars(0.0003),
                     Money::from_dollars(0.00061)};
    auto back = ModelEndpoint::from_json(ep.to_json());
    CHECK(back.model == "student");
    CHECK(back.api_key_env == "STUDENT_KEY");
    CHECK(back.price_out_per_1k == ep.price_out_per_1k);
}
