#pragma once

#include "distill/cost_model.hpp"
#include "distill/errors.hpp"
#include "distill/json.hpp"
#include "distill/prompt_library.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distill {

inline constexpr int kMaxNewTokensCap = 1024;

struct GenerationConfig {
    double temperature = 0.0;
    double top_p = 1.0;
    std::optional<int> top_k;
    int max_new_tokens = 256;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
    std::vector<std::string> stop;

    // ConfigError on any out-of-range field.
    void validate() const;
    json to_json() const;
    static GenerationConfig from_json(const json& j);

    bool operator==(const GenerationConfig&) const = default;
};

struct ModelEndpoint {
    std::string model;
    // http(s)://host[:port][/prefix], or mock://<fixture path> for the fixture backend.
    std::string base_url;
    // Name of the environment variable holding the API key; never the key itself.
    std::string api_key_env;
    Money price_in_per_1k;
    Money price_out_per_1k;

    json to_json() const;
    static ModelEndpoint from_json(const json& j);
};

struct CompletionRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    GenerationConfig config;

    // OpenAI-compatible /chat/completions body.
    json to_wire() const;
    // Fixture key: hash of rendered messages plus generation config.
    std::string matcher_digest() const;
};

struct CompletionResponse {
    std::string text;
    std::optional<std::int64_t> input_tokens;
    std::optional<std::int64_t> output_tokens;
};

// Non-2xx reply. Retryable when the status is 429 or 5xx.
class ProviderStatusError : public ProviderError {
public:
    ProviderStatusError(int status, std::string body)
        : ProviderError("provider returned HTTP " + std::to_string(status) + ": " + body),
          status_(status), body_(std::move(body)) {}

    int status() const noexcept { return status_; }
    const std::string& body() const noexcept { return body_; }
    bool retryable() const noexcept { return status_ == 429 || status_ >= 500; }

private:
    int status_;
    std::string body_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    // api_key is empty when the endpoint has no credential.
    virtual CompletionResponse complete(const CompletionRequest& request, const std::string& api_key) = 0;
};

// Talks to an OpenAI-compatible server.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(std::string base_url, std::chrono::milliseconds timeout = std::chrono::seconds(120));
    CompletionResponse complete(const CompletionRequest& request, const std::string& api_key) override;

private:
    std::string base_url_;
    std::chrono::milliseconds timeout_;
};

struct FixtureEntry {
    std::string completion;
    std::optional<std::int64_t> input_tokens;
    std::optional<std::int64_t> output_tokens;
    std::chrono::milliseconds latency{0};
};

// Serves canned completions keyed by matcher digest. Unmatched requests fail
// with FixtureMissError.
class MockChatBackend : public ChatBackend {
public:
    MockChatBackend() = default;
    explicit MockChatBackend(std::map<std::string, FixtureEntry> fixtures);

    // JSON Lines of {matcher_digest, completion, input_tokens, output_tokens[, latency_ms]}.
    static std::shared_ptr<MockChatBackend> from_jsonl(std::string_view text);
    static std::shared_ptr<MockChatBackend> from_file(const std::filesystem::path& path);

    void add(const std::string& digest, FixtureEntry entry);
    CompletionResponse complete(const CompletionRequest& request, const std::string& api_key) override;

    std::size_t calls() const { return calls_.load(); }

private:
    std::map<std::string, FixtureEntry> fixtures_;
    std::atomic<std::size_t> calls_{0};
};

json fixture_line(const CompletionRequest& request, const FixtureEntry& entry);

std::shared_ptr<ChatBackend> make_backend(const ModelEndpoint& endpoint);

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{30'000};

    std::chrono::milliseconds delay_before(int attempt) const;
};

struct GenerationRecord {
    std::string sample_id;
    std::string model;
    std::string prompt_digest;
    GenerationConfig config;
    std::string raw_output;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    bool tokens_estimated = false;
    std::chrono::milliseconds latency{0};
    int attempts = 0;
    bool ok = true;
    std::string error_code;
    std::string error_message;

    // Latency is excluded unless asked for, so artifacts stay reproducible.
    json to_json(bool include_timing = false) const;
    static GenerationRecord from_json(const json& j);
};

struct BatchItem {
    std::string sample_id;
    PromptInstance prompt;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class LlmGateway {
public:
    LlmGateway(ModelEndpoint endpoint, std::shared_ptr<ChatBackend> backend, RetryPolicy retry = {},
               Sleeper sleeper = {});

    // Raises TransportError / ProviderError / EmptyCompletionError after retries.
    GenerationRecord generate(const PromptInstance& prompt, const GenerationConfig& config,
                              const std::string& sample_id = {}) const;

    // Output order equals input order; per-item failures come back as records
    // with ok == false.
    std::vector<GenerationRecord> generate_batch(std::span<const BatchItem> items, const GenerationConfig& config,
                                                 int parallelism) const;

    const ModelEndpoint& endpoint() const { return endpoint_; }

private:
    std::string resolve_credential() const;
    GenerationRecord generate_counted(const PromptInstance& prompt, const GenerationConfig& config,
                                      const std::string& sample_id, int& attempts) const;

    ModelEndpoint endpoint_;
    std::shared_ptr<ChatBackend> backend_;
    RetryPolicy retry_;
    Sleeper sleeper_;
};

}  // namespace distill
