#pragma once

#include "distill/http_client.hpp"
#include "distill/json.hpp"
#include "distill/llm_gateway.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace distill {

struct FinetuneConfig {
    std::string base_model;
    double batch_size_multiplier = 1.0;
    int epochs = 5;
    double learning_rate = 2e-5;

    void validate() const;
    json to_json() const;
    static FinetuneConfig from_json(const json& j);
};

enum class JobStatus { pending, running, succeeded, failed };

std::string_view to_string(JobStatus s);
JobStatus parse_job_status(std::string_view text);
bool is_terminal(JobStatus s);

struct FinetuneJob {
    std::string id;
    FinetuneConfig config;
    std::string dataset_digest;
    JobStatus status = JobStatus::pending;
    std::optional<std::string> result_endpoint;
    std::optional<std::string> provider_message;

    json to_json() const;
    static FinetuneJob from_json(const json& j);
};

// Every line must be {"messages":[system, user, assistant]} with string
// contents. Throws SchemaError naming the first bad line.
void validate_finetune_file(std::string_view content);

struct ProviderJobState {
    JobStatus status = JobStatus::pending;
    std::optional<std::string> endpoint;
    std::optional<std::string> message;
};

class FinetuneProvider {
public:
    virtual ~FinetuneProvider() = default;
    // Returns the provider's job id. Throws ProviderError on rejection.
    virtual std::string create_job(std::string_view training_data, const std::string& digest,
                                   const FinetuneConfig& config) = 0;
    virtual ProviderJobState status(const std::string& job_id) = 0;
};

// Schedule file:
//   {"default": {"timeline": ["pending", "running", "succeeded"], "endpoint": "...", "message": "..."},
//    "models": {"<base model>": {...same keys..., "reject": "<error body>"}}}
// Each status() call advances one step; the last entry repeats.
class MockFinetuneProvider : public FinetuneProvider {
public:
    explicit MockFinetuneProvider(json schedule);
    static std::shared_ptr<MockFinetuneProvider> from_file(const std::filesystem::path& path);

    std::string create_job(std::string_view training_data, const std::string& digest,
                           const FinetuneConfig& config) override;
    ProviderJobState status(const std::string& job_id) override;

    // What the provider received, for inspection.
    const std::string& uploaded(const std::string& job_id) const;

private:
    struct MockJob {
        json plan;
        std::string data;
        std::size_t polls = 0;
    };
    json schedule_;
    std::map<std::string, MockJob> jobs_;
    mutable std::mutex mu_;
};

// Generic hosted job API:
//   POST {files_path}        {"purpose":"fine-tune","filename","content"}   -> {"id"}
//   POST {jobs_path}         {"model","training_file","hyperparameters"}   -> {"id"}
//   GET  {jobs_path}/{id}                                                   -> {"status","fine_tuned_model","error"}
struct HttpFinetuneSettings {
    std::string base_url;
    std::string api_key_env;
    std::string files_path = "/files";
    std::string jobs_path = "/fine_tuning/jobs";
};

class HttpFinetuneProvider : public FinetuneProvider {
public:
    explicit HttpFinetuneProvider(HttpFinetuneSettings settings);

    std::string create_job(std::string_view training_data, const std::string& digest,
                           const FinetuneConfig& config) override;
    ProviderJobState status(const std::string& job_id) override;

private:
    std::map<std::string, std::string> headers() const;
    HttpFinetuneSettings settings_;
    HttpJsonClient client_;
};

// Maps provider status vocabularies onto the four-state machine.
JobStatus map_provider_status(std::string_view text);

// Validates the file, then creates the job. The file is only read.
FinetuneJob submit(FinetuneProvider& provider, const std::filesystem::path& dataset_file, const FinetuneConfig& cfg);

// Refreshes status. A status that moves backwards is a ProviderError.
FinetuneJob poll(FinetuneProvider& provider, const FinetuneJob& job);

FinetuneJob await_completion(FinetuneProvider& provider, const FinetuneJob& job, std::chrono::milliseconds interval,
                             std::chrono::milliseconds deadline, const Sleeper& sleeper = {});

}  // namespace distill
