#include "distill/llm_gateway.hpp"

#include "distill/digest.hpp"
#include "distill/http_client.hpp"
#include "distill/logging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

namespace distill {

void GenerationConfig::validate() const {
    if (!(temperature >= 0.0)) {
        throw ConfigError("temperature must be >= 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw ConfigError("top_p must be in (0, 1]");
    }
    if (top_k && *top_k <= 0) {
        throw ConfigError("top_k must be positive");
    }
    if (max_new_tokens <= 0 || max_new_tokens > kMaxNewTokensCap) {
        throw ConfigError("max_new_tokens must be in [1, " + std::to_string(kMaxNewTokensCap) + "]");
    }
}

json GenerationConfig::to_json() const {
    json j;
    j["temperature"] = temperature;
    j["top_p"] = top_p;
    j["top_k"] = top_k ? json(*top_k) : json(nullptr);
    j["max_new_tokens"] = max_new_tokens;
    j["frequency_penalty"] = frequency_penalty;
    j["presence_penalty"] = presence_penalty;
    j["stop"] = stop;
    return j;
}

GenerationConfig GenerationConfig::from_json(const json& j) {
    GenerationConfig c;
    try {
        c.temperature = j.value("temperature", c.temperature);
        c.top_p = j.value("top_p", c.top_p);
        if (j.contains("top_k") && !j.at("top_k").is_null()) {
            c.top_k = j.at("top_k").get<int>();
        }
        c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
        c.frequency_penalty = j.value("frequency_penalty", c.frequency_penalty);
        c.presence_penalty = j.value("presence_penalty", c.presence_penalty);
        if (j.contains("stop")) {
            c.stop = j.at("stop").get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad generation config: ") + e.what());
    }
    c.validate();
    return c;
}

json ModelEndpoint::to_json() const {
    return json{{"model", model},
                {"base_url", base_url},
                {"api_key_env", api_key_env},
                {"price_in_per_1k", price_in_per_1k.dollars()},
                {"price_out_per_1k", price_out_per_1k.dollars()}};
}

ModelEndpoint ModelEndpoint::from_json(const json& j) {
    ModelEndpoint e;
    try {
        e.model = j.at("model").get<std::string>();
        e.base_url = j.at("base_url").get<std::string>();
        e.api_key_env = j.value("api_key_env", std::string{});
        e.price_in_per_1k = Money::from_dollars(j.value("price_in_per_1k", 0.0));
        e.price_out_per_1k = Money::from_dollars(j.value("price_out_per_1k", 0.0));
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("bad endpoint: ") + ex.what());
    }
    if (e.price_in_per_1k < Money{} || e.price_out_per_1k < Money{}) {
        throw ConfigError("endpoint prices must be nonnegative");
    }
    return e;
}

json CompletionRequest::to_wire() const {
    json body;
    body["model"] = model;
    json msgs = json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    }
    body["messages"] = std::move(msgs);
    body["temperature"] = config.temperature;
    body["top_p"] = config.top_p;
    if (config.top_k) {
        body["top_k"] = *config.top_k;
    }
    body["max_tokens"] = config.max_new_tokens;
    body["frequency_penalty"] = config.frequency_penalty;
    body["presence_penalty"] = config.presence_penalty;
    if (!config.stop.empty()) {
        body["stop"] = config.stop;
    }
    return body;
}

std::string CompletionRequest::matcher_digest() const {
    json key;
    json msgs = json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    }
    key["messages"] = std::move(msgs);
    key["config"] = config.to_json();
    return sha256_hex(key.dump());
}

HttpChatBackend::HttpChatBackend(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

CompletionResponse HttpChatBackend::complete(const CompletionRequest& request, const std::string& api_key) {
    HttpJsonClient client(base_url_, timeout_);
    std::map<std::string, std::string> headers;
    if (!api_key.empty()) {
        headers["Authorization"] = "Bearer " + api_key;
    }
    auto response = client.post("/chat/completions", request.to_wire().dump(), headers);
    if (response.status < 200 || response.status >= 300) {
        throw ProviderStatusError(response.status, response.body);
    }
    json doc;
    try {
        doc = json::parse(response.body);
    } catch (const json::exception&) {
        throw ProviderError("completion response is not JSON");
    }
    if (!doc.contains("choices") || !doc.at("choices").is_array() || doc.at("choices").empty()) {
        throw EmptyCompletionError("completion response has no choices");
    }
    const auto& message = doc.at("choices").at(0).value("message", json::object());
    if (!message.contains("content") || !message.at("content").is_string()) {
        throw EmptyCompletionError("first choice has no text content");
    }
    CompletionResponse out;
    out.text = message.at("content").get<std::string>();
    if (doc.contains("usage") && doc.at("usage").is_object()) {
        const auto& usage = doc.at("usage");
        if (usage.contains("prompt_tokens") && usage.at("prompt_tokens").is_number_integer()) {
            out.input_tokens = usage.at("prompt_tokens").get<std::int64_t>();
        }
        if (usage.contains("completion_tokens") && usage.at("completion_tokens").is_number_integer()) {
            out.output_tokens = usage.at("completion_tokens").get<std::int64_t>();
        }
    }
    return out;
}

MockChatBackend::MockChatBackend(std::map<std::string, FixtureEntry> fixtures) : fixtures_(std::move(fixtures)) {}

std::shared_ptr<MockChatBackend> MockChatBackend::from_jsonl(std::string_view text) {
    auto backend = std::make_shared<MockChatBackend>();
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            FixtureEntry entry;
            entry.completion = j.at("completion").get<std::string>();
            if (j.contains("input_tokens") && !j.at("input_tokens").is_null()) {
                entry.input_tokens = j.at("input_tokens").get<std::int64_t>();
            }
            if (j.contains("output_tokens") && !j.at("output_tokens").is_null()) {
                entry.output_tokens = j.at("output_tokens").get<std::int64_t>();
            }
            entry.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
            backend->add(j.at("matcher_digest").get<std::string>(), std::move(entry));
        } catch (const json::exception& e) {
            throw SchemaError("fixture line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return backend;
}

std::shared_ptr<MockChatBackend> MockChatBackend::from_file(const std::filesystem::path& path) {
    return from_jsonl(read_file(path));
}

void MockChatBackend::add(const std::string& digest, FixtureEntry entry) {
    fixtures_[digest] = std::move(entry);
}

CompletionResponse MockChatBackend::complete(const CompletionRequest& request, const std::string&) {
    ++calls_;
    auto digest = request.matcher_digest();
    auto it = fixtures_.find(digest);
    if (it == fixtures_.end()) {
        throw FixtureMissError("no fixture for request digest " + digest);
    }
    if (it->second.latency.count() > 0) {
        std::this_thread::sleep_for(it->second.latency);
    }
    return CompletionResponse{it->second.completion, it->second.input_tokens, it->second.output_tokens};
}

json fixture_line(const CompletionRequest& request, const FixtureEntry& entry) {
    json j;
    j["matcher_digest"] = request.matcher_digest();
    j["completion"] = entry.completion;
    j["input_tokens"] = entry.input_tokens ? json(*entry.input_tokens) : json(nullptr);
    j["output_tokens"] = entry.output_tokens ? json(*entry.output_tokens) : json(nullptr);
    if (entry.latency.count() > 0) {
        j["latency_ms"] = entry.latency.count();
    }
    return j;
}

std::shared_ptr<ChatBackend> make_backend(const ModelEndpoint& endpoint) {
    static constexpr std::string_view kMockScheme = "mock://";
    if (endpoint.base_url.rfind(kMockScheme, 0) == 0) {
        auto path = endpoint.base_url.substr(kMockScheme.size());
        return MockChatBackend::from_file(path);
    }
    return std::make_shared<HttpChatBackend>(endpoint.base_url);
}

std::chrono::milliseconds RetryPolicy::delay_before(int attempt) const {
    // attempt is the 1-based number of the attempt that just failed.
    double ms = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, attempt - 1);
    ms = std::min(ms, static_cast<double>(max_backoff.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

json GenerationRecord::to_json(bool include_timing) const {
    json j;
    j["sample_id"] = sample_id;
    j["model"] = model;
    j["prompt_digest"] = prompt_digest;
    j["config"] = config.to_json();
    j["ok"] = ok;
    j["raw_output"] = raw_output;
    j["input_tokens"] = input_tokens;
    j["output_tokens"] = output_tokens;
    j["tokens_estimated"] = tokens_estimated;
    j["attempts"] = attempts;
    if (!ok) {
        j["error_code"] = error_code;
        j["error_message"] = error_message;
    }
    if (include_timing) {
        j["latency_ms"] = latency.count();
    }
    return j;
}

GenerationRecord GenerationRecord::from_json(const json& j) {
    GenerationRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.prompt_digest = j.at("prompt_digest").get<std::string>();
    r.config = GenerationConfig::from_json(j.at("config"));
    r.ok = j.value("ok", true);
    r.raw_output = j.at("raw_output").get<std::string>();
    r.input_tokens = j.value("input_tokens", 0);
    r.output_tokens = j.value("output_tokens", 0);
    r.tokens_estimated = j.value("tokens_estimated", false);
    r.attempts = j.value("attempts", 0);
    r.error_code = j.value("error_code", std::string{});
    r.error_message = j.value("error_message", std::string{});
    r.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
    return r;
}

LlmGateway::LlmGateway(ModelEndpoint endpoint, std::shared_ptr<ChatBackend> backend, RetryPolicy retry,
                       Sleeper sleeper)
    : endpoint_(std::move(endpoint)), backend_(std::move(backend)), retry_(retry), sleeper_(std::move(sleeper)) {
    if (!backend_) {
        throw ConfigError("gateway requires a backend");
    }
    if (retry_.max_attempts < 1) {
        throw ConfigError("retry max_attempts must be >= 1");
    }
    if (!sleeper_) {
        sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

std::string LlmGateway::resolve_credential() const {
    if (endpoint_.api_key_env.empty()) {
        return {};
    }
    const char* value = std::getenv(endpoint_.api_key_env.c_str());
    if (value == nullptr) {
        throw ConfigError("environment variable " + endpoint_.api_key_env + " is not set");
    }
    return value;
}

GenerationRecord LlmGateway::generate(const PromptInstance& prompt, const GenerationConfig& config,
                                      const std::string& sample_id) const {
    int attempts = 0;
    return generate_counted(prompt, config, sample_id, attempts);
}

GenerationRecord LlmGateway::generate_counted(const PromptInstance& prompt, const GenerationConfig& config,
                                              const std::string& sample_id, int& attempts) const {
    config.validate();
    CompletionRequest request{endpoint_.model, prompt.messages, config};
    bool mock = endpoint_.base_url.rfind("mock://", 0) == 0;
    auto api_key = mock ? std::string{} : resolve_credential();

    std::exception_ptr last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        attempts = attempt;
        try {
            auto started = std::chrono::steady_clock::now();
            auto response = backend_->complete(request, api_key);
            auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - started);
            if (response.text.empty()) {
                throw EmptyCompletionError("empty completion for sample '" + sample_id + "'");
            }
            GenerationRecord record;
            record.sample_id = sample_id;
            record.model = endpoint_.model;
            record.prompt_digest = prompt.digest();
            record.config = config;
            record.raw_output = response.text;
            record.latency = elapsed;
            record.attempts = attempt;
            if (response.input_tokens && response.output_tokens) {
                record.input_tokens = *response.input_tokens;
                record.output_tokens = *response.output_tokens;
            } else {
                std::int64_t estimated_in = 0;
                for (const auto& m : prompt.messages) {
                    estimated_in += estimate_tokens(m.content);
                }
                record.input_tokens = response.input_tokens.value_or(estimated_in);
                record.output_tokens = response.output_tokens.value_or(estimate_tokens(response.text));
                record.tokens_estimated = true;
            }
            return record;
        } catch (const ProviderStatusError& e) {
            if (!e.retryable()) {
                throw;
            }
            last_error = std::current_exception();
            log_event(LogLevel::warn, "generation_retry",
                      {{"sample_id", sample_id}, {"attempt", attempt}, {"status", e.status()}});
        } catch (const TransportError& e) {
            last_error = std::current_exception();
            log_event(LogLevel::warn, "generation_retry",
                      {{"sample_id", sample_id}, {"attempt", attempt}, {"error", e.what()}});
        }
        if (attempt < retry_.max_attempts) {
            sleeper_(retry_.delay_before(attempt));
        }
    }
    std::rethrow_exception(last_error);
}

std::vector<GenerationRecord> LlmGateway::generate_batch(std::span<const BatchItem> items,
                                                         const GenerationConfig& config, int parallelism) const {
    if (parallelism < 1) {
        throw ConfigError("parallelism must be >= 1");
    }
    config.validate();
    std::vector<GenerationRecord> results(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            const auto& item = items[i];
            int attempts = 0;
            try {
                results[i] = generate_counted(item.prompt, config, item.sample_id, attempts);
            } catch (const std::exception& e) {
                GenerationRecord failed;
                failed.sample_id = item.sample_id;
                failed.model = endpoint_.model;
                failed.prompt_digest = item.prompt.digest();
                failed.config = config;
                failed.ok = false;
                failed.attempts = attempts;
                const auto* err = dynamic_cast<const Error*>(&e);
                failed.error_code = err != nullptr ? err->code() : "Exception";
                failed.error_message = e.what();
                log_event(LogLevel::warn, "generation_failed",
                          {{"sample_id", item.sample_id}, {"error_code", failed.error_code}});
                results[i] = std::move(failed);
            }
        }
    };
    auto workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism), items.size());
    if (workers <= 1) {
        worker();
        return results;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back(worker);
    }
    for (auto& t : threads) {
        t.join();
    }
    return results;
}

}  // namespace distill
