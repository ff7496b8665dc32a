#include "distill/finetune_client.hpp"

#include "distill/core_model.hpp"
#include "distill/digest.hpp"
#include "distill/errors.hpp"
#include "distill/logging.hpp"

#include <cstdlib>
#include <thread>

namespace distill {

namespace {

int rank(JobStatus s) {
    return s == JobStatus::pending ? 0 : s == JobStatus::running ? 1 : 2;
}

json parse_body(const HttpResponse& r, std::string_view what) {
    if (r.status < 200 || r.status >= 300) {
        throw ProviderStatusError(r.status, r.body);
    }
    try {
        return json::parse(r.body);
    } catch (const json::exception& e) {
        throw ProviderError(std::string(what) + ": unparseable provider response: " + e.what());
    }
}

}  // namespace

void FinetuneConfig::validate() const {
    if (base_model.empty()) {
        throw ConfigError("fine-tune base_model is required");
    }
    if (!(batch_size_multiplier > 0)) {
        throw ConfigError("batch_size_multiplier must be positive");
    }
    if (epochs <= 0) {
        throw ConfigError("epochs must be a positive integer");
    }
    if (!(learning_rate > 0)) {
        throw ConfigError("learning_rate must be positive");
    }
}

json FinetuneConfig::to_json() const {
    return {{"base_model", base_model},
            {"batch_size_multiplier", batch_size_multiplier},
            {"epochs", epochs},
            {"learning_rate", learning_rate}};
}

FinetuneConfig FinetuneConfig::from_json(const json& j) {
    FinetuneConfig c;
    try {
        c.base_model = j.at("base_model").get<std::string>();
        c.batch_size_multiplier = j.value("batch_size_multiplier", c.batch_size_multiplier);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("fine-tune config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string_view to_string(JobStatus s) {
    switch (s) {
        case JobStatus::pending: return "pending";
        case JobStatus::running: return "running";
        case JobStatus::succeeded: return "succeeded";
        case JobStatus::failed: return "failed";
    }
    return "?";
}

JobStatus parse_job_status(std::string_view text) {
    for (auto s : {JobStatus::pending, JobStatus::running, JobStatus::succeeded, JobStatus::failed}) {
        if (to_string(s) == text) {
            return s;
        }
    }
    throw SchemaError("unknown job status '" + std::string(text) + "'");
}

bool is_terminal(JobStatus s) {
    return s == JobStatus::succeeded || s == JobStatus::failed;
}

json FinetuneJob::to_json() const {
    json j{{"id", id}, {"config", config.to_json()}, {"dataset_digest", dataset_digest},
           {"status", to_string(status)}};
    if (result_endpoint) {
        j["result_endpoint"] = *result_endpoint;
    }
    if (provider_message) {
        j["provider_message"] = *provider_message;
    }
    return j;
}

FinetuneJob FinetuneJob::from_json(const json& j) {
    FinetuneJob job;
    try {
        job.id = j.at("id").get<std::string>();
        job.config = FinetuneConfig::from_json(j.at("config"));
        job.dataset_digest = j.at("dataset_digest").get<std::string>();
        job.status = parse_job_status(j.at("status").get<std::string>());
        if (j.contains("result_endpoint")) {
            job.result_endpoint = j.at("result_endpoint").get<std::string>();
        }
        if (j.contains("provider_message")) {
            job.provider_message = j.at("provider_message").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("fine-tune job: ") + e.what());
    }
    return job;
}

void validate_finetune_file(std::string_view content) {
    static const char* const kRoles[] = {"system", "user", "assistant"};
    std::size_t line_no = 0;
    std::size_t records = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) {
            end = content.size();
        }
        auto line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto where = "fine-tune line " + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError(where + "invalid JSON: " + e.what());
        }
        if (!j.is_object() || j.size() != 1 || !j.contains("messages") || !j["messages"].is_array()) {
            throw SchemaError(where + "expected exactly {\"messages\": [...]}");
        }
        const auto& messages = j["messages"];
        if (messages.size() != 3) {
            throw SchemaError(where + "expected 3 messages, got " + std::to_string(messages.size()));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& m = messages[i];
            if (!m.is_object() || m.size() != 2 || !m.contains("role") || !m.contains("content") ||
                !m["role"].is_string() || !m["content"].is_string()) {
                throw SchemaError(where + "message " + std::to_string(i) + " must be {role, content} strings");
            }
            if (m["role"].get<std::string>() != kRoles[i]) {
                throw SchemaError(where + "message " + std::to_string(i) + " must have role " + kRoles[i]);
            }
        }
        if (messages[2]["content"].get<std::string>().empty()) {
            throw SchemaError(where + "assistant content is empty");
        }
        ++records;
    }
    if (records == 0) {
        throw SchemaError("fine-tune file has no records");
    }
}

// ---- mock provider ----

MockFinetuneProvider::MockFinetuneProvider(json schedule) : schedule_(std::move(schedule)) {
    if (!schedule_.is_object()) {
        throw ConfigError("fine-tune schedule must be a JSON object");
    }
}

std::shared_ptr<MockFinetuneProvider> MockFinetuneProvider::from_file(const std::filesystem::path& path) {
    try {
        return std::make_shared<MockFinetuneProvider>(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ConfigError("fine-tune schedule " + path.string() + ": " + e.what());
    }
}

std::string MockFinetuneProvider::create_job(std::string_view training_data, const std::string& digest,
                                             const FinetuneConfig& config) {
    json plan;
    if (schedule_.contains("models") && schedule_["models"].contains(config.base_model)) {
        plan = schedule_["models"][config.base_model];
    } else if (schedule_.contains("default")) {
        plan = schedule_["default"];
    } else {
        throw ProviderStatusError(400, json{{"error", {{"message", "unknown model " + config.base_model}}}}.dump());
    }
    if (plan.contains("reject")) {
        throw ProviderStatusError(400, plan["reject"].is_string() ? plan["reject"].get<std::string>()
                                                                  : plan["reject"].dump());
    }
    if (!plan.contains("timeline") || !plan["timeline"].is_array() || plan["timeline"].empty()) {
        throw ConfigError("fine-tune schedule entry needs a nonempty timeline");
    }
    std::lock_guard lock(mu_);
    auto id = "ftjob-" + digest.substr(0, 12) + "-" + std::to_string(jobs_.size());
    jobs_[id] = MockJob{plan, std::string(training_data), 0};
    return id;
}

ProviderJobState MockFinetuneProvider::status(const std::string& job_id) {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
        throw ProviderStatusError(404, json{{"error", {{"message", "no such job"}}}}.dump());
    }
    auto& job = it->second;
    const auto& timeline = job.plan["timeline"];
    auto step = std::min(job.polls, timeline.size() - 1);
    ++job.polls;
    ProviderJobState state;
    state.status = parse_job_status(timeline[step].get<std::string>());
    if (state.status == JobStatus::succeeded) {
        if (!job.plan.contains("endpoint")) {
            state.endpoint = "mock://ft/" + job_id;
        } else if (job.plan["endpoint"].is_string()) {
            state.endpoint = job.plan["endpoint"].get<std::string>();
        }
    }
    if (state.status == JobStatus::failed) {
        state.message = job.plan.value("message", std::string("job failed"));
    }
    return state;
}

const std::string& MockFinetuneProvider::uploaded(const std::string& job_id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
        throw ProviderError("no such job " + job_id);
    }
    return it->second.data;
}

// ---- hosted provider ----

JobStatus map_provider_status(std::string_view text) {
    if (text == "pending" || text == "queued" || text == "validating_files" || text == "notRunning" ||
        text == "created") {
        return JobStatus::pending;
    }
    if (text == "running" || text == "in_progress") {
        return JobStatus::running;
    }
    if (text == "succeeded" || text == "completed") {
        return JobStatus::succeeded;
    }
    if (text == "failed" || text == "cancelled" || text == "canceled") {
        return JobStatus::failed;
    }
    throw ProviderError("unrecognized job status '" + std::string(text) + "'");
}

HttpFinetuneProvider::HttpFinetuneProvider(HttpFinetuneSettings settings)
    : settings_(std::move(settings)), client_(settings_.base_url) {}

std::map<std::string, std::string> HttpFinetuneProvider::headers() const {
    std::map<std::string, std::string> h;
    if (!settings_.api_key_env.empty()) {
        const char* key = std::getenv(settings_.api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw ConfigError("credential variable " + settings_.api_key_env + " is not set");
        }
        h["Authorization"] = std::string("Bearer ") + key;
    }
    return h;
}

std::string HttpFinetuneProvider::create_job(std::string_view training_data, const std::string& digest,
                                             const FinetuneConfig& config) {
    auto h = headers();
    json upload{{"purpose", "fine-tune"}, {"filename", digest + ".jsonl"}, {"content", training_data}};
    auto file = parse_body(client_.post(settings_.files_path, upload.dump(), h), "file upload");
    json body{{"model", config.base_model},
              {"training_file", file.at("id")},
              {"hyperparameters",
               {{"batch_size_multiplier", config.batch_size_multiplier},
                {"n_epochs", config.epochs},
                {"learning_rate", config.learning_rate}}}};
    auto job = parse_body(client_.post(settings_.jobs_path, body.dump(), h), "job creation");
    if (!job.contains("id") || !job["id"].is_string()) {
        throw ProviderError("job creation response has no id");
    }
    return job["id"].get<std::string>();
}

ProviderJobState HttpFinetuneProvider::status(const std::string& job_id) {
    auto j = parse_body(client_.get(settings_.jobs_path + "/" + job_id, headers()), "job status");
    ProviderJobState state;
    state.status = map_provider_status(j.value("status", std::string()));
    if (j.contains("fine_tuned_model") && j["fine_tuned_model"].is_string()) {
        state.endpoint = j["fine_tuned_model"].get<std::string>();
    }
    if (j.contains("error") && !j["error"].is_null()) {
        const auto& e = j["error"];
        state.message = e.is_object() && e.contains("message") ? e["message"].get<std::string>() : e.dump();
    }
    return state;
}

// ---- job lifecycle ----

FinetuneJob submit(FinetuneProvider& provider, const std::filesystem::path& dataset_file, const FinetuneConfig& cfg) {
    cfg.validate();
    auto content = read_file(dataset_file);
    validate_finetune_file(content);
    FinetuneJob job;
    job.config = cfg;
    job.dataset_digest = sha256_hex(content);
    job.id = provider.create_job(content, job.dataset_digest, cfg);
    job.status = JobStatus::pending;
    log_event(LogLevel::info, "finetune_submitted", {{"job_id", job.id}, {"dataset_digest", job.dataset_digest}});
    return job;
}

FinetuneJob poll(FinetuneProvider& provider, const FinetuneJob& job) {
    auto state = provider.status(job.id);
    if (rank(state.status) < rank(job.status) || (is_terminal(job.status) && state.status != job.status)) {
        throw ProviderError("job " + job.id + " moved from " + std::string(to_string(job.status)) + " to " +
                            std::string(to_string(state.status)));
    }
    FinetuneJob next = job;
    next.status = state.status;
    if (state.status == JobStatus::succeeded) {
        if (!state.endpoint) {
            throw ProviderError("job " + job.id + " succeeded without a model endpoint");
        }
        next.result_endpoint = state.endpoint;
    }
    if (state.status == JobStatus::failed) {
        next.provider_message = state.message.value_or("job failed");
    }
    return next;
}

FinetuneJob await_completion(FinetuneProvider& provider, const FinetuneJob& job, std::chrono::milliseconds interval,
                             std::chrono::milliseconds deadline, const Sleeper& sleeper) {
    auto sleep = sleeper ? sleeper : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); });
    auto start = std::chrono::steady_clock::now();
    std::chrono::milliseconds slept{0};
    FinetuneJob current = job;
    while (true) {
        current = poll(provider, current);
        if (is_terminal(current.status)) {
            return current;
        }
        // An injected sleeper may not pass real time, so count both.
        auto elapsed = std::max(slept, std::chrono::duration_cast<std::chrono::milliseconds>(
                                           std::chrono::steady_clock::now() - start));
        if (elapsed + interval > deadline) {
            throw DeadlineExceeded("job " + current.id + " still " + std::string(to_string(current.status)) +
                                   " after " + std::to_string(elapsed.count()) + "ms");
        }
        sleep(interval);
        slept += interval;
    }
}

}  // namespace distill
