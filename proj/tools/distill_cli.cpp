// distill: command-line driver for the distillation pipeline.
//
// Every subcommand that works on a run reads one JSON config and writes into a
// run directory (manifest.json, datasets/, scores/, finetune/, reports/).
// Results go to stdout as JSON; failures go to stderr as {"error": {...}} with
// exit status 2 (config), 3 (data) or 4 (provider).

#include "distill/core_model.hpp"
#include "distill/cost_model.hpp"
#include "distill/digest.hpp"
#include "distill/errors.hpp"
#include "distill/evaluation.hpp"
#include "distill/finetune_client.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/logging.hpp"
#include "distill/output_parsers.hpp"
#include "distill/prompt_library.hpp"
#include "distill/rating_service.hpp"
#include "distill/run_manifest.hpp"
#include "distill/synth_pipeline.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <unistd.h>

namespace fs = std::filesystem;
using distill::json;

namespace {

struct Config {
    fs::path base_dir;
    json raw;
    std::string digest;

    distill::TaskKind task = distill::TaskKind::nli;
    std::string dataset_name;
    fs::path dataset_dir;
    std::optional<std::size_t> truncate_article_words;

    std::map<std::string, distill::ModelEndpoint> models;
    distill::PromptLibrary library;
    std::vector<std::string> elaborate_ids;
    std::string vanilla_id;
    std::string judge_id = "judge.hhh_mt";
    std::string complexity_judge_id = "judge.complexity";

    distill::GenerationConfig generation;
    std::vector<distill::GenerationConfig> grid;
    distill::MetricId metric = distill::MetricId::accuracy;
    distill::SynthesisOptions synthesis;
    distill::RetryPolicy retry;
    json extractor = {{"kind", "heuristic"}};
    json finetune = json::object();
};

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string require_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw distill::ConfigError(where + " needs string '" + key + "'");
    }
    return j[key].get<std::string>();
}

distill::MetricId default_metric(distill::TaskKind task) {
    switch (task) {
        case distill::TaskKind::summarization: return distill::MetricId::entity_density;
        case distill::TaskKind::conversation: return distill::MetricId::hhh_mt_mean;
        default: return distill::MetricId::accuracy;
    }
}

Config load_config(const fs::path& path) {
    Config c;
    c.base_dir = fs::absolute(path).parent_path();
    try {
        c.raw = json::parse(distill::read_file(path));
    } catch (const json::parse_error& e) {
        throw distill::ConfigError(path.string() + ": " + e.what());
    } catch (const distill::IoError& e) {
        throw distill::ConfigError(e.what());
    }
    if (!c.raw.is_object()) {
        throw distill::ConfigError("config must be a JSON object");
    }
    // Key order must not matter for the digest.
    c.digest = distill::sha256_hex(nlohmann::json::parse(c.raw.dump()).dump());

    const auto& r = c.raw;
    try {
        c.task = distill::parse_task_kind(require_string(r, "task", "config"));
        const auto& ds = r.at("dataset");
        c.dataset_name = require_string(ds, "name", "dataset");
        c.dataset_dir = resolve(c.base_dir, ds.value("dir", std::string(".")));
        if (ds.contains("truncate_article_words")) {
            c.truncate_article_words = ds["truncate_article_words"].get<std::size_t>();
        }

        const json models_json = r.value("models", json::object());
        for (const auto& [name, ej] : models_json.items()) {
            auto e = distill::ModelEndpoint::from_json(ej);
            static constexpr std::string_view kMock = "mock://";
            if (e.base_url.rfind(kMock, 0) == 0) {
                e.base_url = std::string(kMock) + resolve(c.base_dir, e.base_url.substr(kMock.size())).string();
            }
            c.models.emplace(name, std::move(e));
        }

        c.library = distill::builtin_library();
        const auto& tj = r.value("templates", json::object());
        if (tj.contains("manifest")) {
            distill::load_manifest_file(c.library, resolve(c.base_dir, tj["manifest"].get<std::string>()));
        }
        if (tj.contains("elaborate")) {
            c.elaborate_ids = tj["elaborate"].get<std::vector<std::string>>();
        } else {
            for (const auto& t : c.library.variants(c.task)) {
                c.elaborate_ids.push_back(t.id);
            }
        }
        c.vanilla_id = tj.value("vanilla", c.library.lookup(c.task, distill::PromptStyle::vanilla).id);
        if (c.elaborate_ids.empty()) {
            // Tasks without an elaborate prompt (conversation) are labeled with the vanilla one.
            c.elaborate_ids.push_back(c.vanilla_id);
        }
        c.judge_id = tj.value("judge", c.judge_id);
        c.complexity_judge_id = tj.value("complexity_judge", c.complexity_judge_id);
        for (const auto& id : c.elaborate_ids) {
            const auto& t = c.library.get(id);
            if (t.task != c.task || t.is_judge()) {
                throw distill::ConfigError("template '" + id + "' is not a " +
                                           std::string(distill::to_string(c.task)) + " generation template");
            }
        }

        c.generation = distill::GenerationConfig::from_json(r.value("generation", json::object()));
        if (r.contains("grid")) {
            for (const auto& g : r["grid"]) {
                auto merged = c.generation.to_json();
                merged.update(g);
                c.grid.push_back(distill::GenerationConfig::from_json(merged));
            }
        } else {
            c.grid.push_back(c.generation);
        }
        c.metric = r.contains("metric") ? distill::parse_metric_id(r["metric"].get<std::string>())
                                        : default_metric(c.task);
        c.synthesis.parallelism = r.value("parallelism", c.synthesis.parallelism);
        c.synthesis.parse_retries = r.value("parse_retries", c.synthesis.parse_retries);
        c.synthesis.cod_step = r.value("cod_step", c.synthesis.cod_step);
        c.synthesis.max_unparseable_fraction =
            r.value("max_unparseable_fraction", c.synthesis.max_unparseable_fraction);
        if (c.synthesis.parallelism < 1 || c.synthesis.parse_retries < 0) {
            throw distill::ConfigError("parallelism must be >= 1 and parse_retries >= 0");
        }
        if (r.contains("retry")) {
            const auto& rj = r["retry"];
            c.retry.max_attempts = rj.value("max_attempts", c.retry.max_attempts);
            c.retry.initial_backoff = std::chrono::milliseconds(
                rj.value("initial_backoff_ms", static_cast<std::int64_t>(c.retry.initial_backoff.count())));
            c.retry.multiplier = rj.value("multiplier", c.retry.multiplier);
        }
        if (r.contains("evaluation")) {
            c.extractor = r["evaluation"].value("entity_extractor", c.extractor);
        }
        c.finetune = r.value("finetune", json::object());
    } catch (const json::exception& e) {
        throw distill::ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

const distill::ModelEndpoint& model(const Config& c, const std::string& name) {
    auto it = c.models.find(name);
    if (it == c.models.end()) {
        throw distill::ConfigError("config has no model '" + name + "'");
    }
    return it->second;
}

distill::LlmGateway gateway(const Config& c, const std::string& name) {
    const auto& e = model(c, name);
    return distill::LlmGateway(e, distill::make_backend(e), c.retry);
}

// Fixture content is an input of mock runs.
std::string endpoint_digest(const distill::ModelEndpoint& e) {
    static constexpr std::string_view kMock = "mock://";
    json j = e.to_json();
    if (e.base_url.rfind(kMock, 0) == 0) {
        j["fixture_digest"] = distill::sha256_file(e.base_url.substr(kMock.size()));
    }
    return distill::sha256_hex(j.dump());
}

std::string digest_of(std::initializer_list<std::string> parts) {
    std::string joined;
    for (const auto& p : parts) {
        joined += p;
        joined.push_back('\n');
    }
    return distill::sha256_hex(joined);
}

void print(const json& j) {
    std::cout << j.dump(2) << std::endl;
}

json up_to_date(const std::string& stage) {
    return {{"stage", stage}, {"status", "up to date"}};
}

struct Run {
    fs::path dir;
    distill::RunManifest manifest;
};

Run open_run(const Config& c, const std::string& dir_flag) {
    Run run;
    if (!dir_flag.empty()) {
        run.dir = dir_flag;
    } else if (c.raw.contains("run_dir")) {
        run.dir = resolve(c.base_dir, c.raw["run_dir"].get<std::string>());
    } else {
        throw distill::ConfigError("no run directory: pass --run-dir or set run_dir in the config");
    }
    for (const char* sub : {"datasets", "scores", "finetune", "reports"}) {
        fs::create_directories(run.dir / sub);
    }
    run.manifest = distill::RunManifest::load_or_new(run.dir);
    if (!run.manifest.config_digest.empty() && run.manifest.config_digest != c.digest) {
        distill::log_event(distill::LogLevel::info, "config_changed",
                           {{"previous", run.manifest.config_digest}, {"current", c.digest}});
    }
    run.manifest.run_id = c.digest.substr(0, 12);
    run.manifest.config_digest = c.digest;
    run.manifest.generation_config = c.generation.to_json();
    json templates = json::array();
    auto note = [&](const std::string& id) {
        const auto& t = c.library.get(id);
        templates.push_back({{"id", t.id}, {"version", t.version}});
    };
    for (const auto& id : c.elaborate_ids) {
        note(id);
    }
    note(c.vanilla_id);
    run.manifest.templates = templates;
    return run;
}

distill::ArtifactRef write_artifact(const Run& run, const std::string& rel, const std::string& content) {
    distill::write_file_atomic(run.dir / rel, content);
    return {rel, distill::sha256_hex(content)};
}

void finish_stage(Run& run, const std::string& stage, distill::StageRecord record) {
    record.status = "done";
    run.manifest.stages[stage] = std::move(record);
    run.manifest.save(run.dir);
    distill::record_timestamp(run.dir, stage);
}

distill::Dataset ingested(const Config& c, const Run& run) {
    auto it = run.manifest.stages.find("ingest");
    if (it == run.manifest.stages.end()) {
        throw distill::ConfigError("dataset not ingested; run `distill ingest` first");
    }
    auto d = distill::load_dataset(run.dir / "datasets", c.dataset_name, c.task);
    if (distill::dataset_digest(d) != run.manifest.dataset_digests.at(c.dataset_name)) {
        throw distill::ConfigError("ingested dataset changed on disk; re-run `distill ingest`");
    }
    return d;
}

// ---- check ----

int cmd_check(const Config& c) {
    json models = json::object();
    for (const auto& [name, e] : c.models) {
        // Endpoint JSON names the credential variable, never its value.
        models[name] = e.to_json();
        models[name]["credential_set"] =
            e.api_key_env.empty() || std::getenv(e.api_key_env.c_str()) != nullptr;
    }
    json grid = json::array();
    for (const auto& g : c.grid) {
        grid.push_back(g.to_json());
    }
    print({{"config_digest", c.digest},
           {"task", distill::to_string(c.task)},
           {"dataset", c.dataset_name},
           {"models", models},
           {"elaborate_templates", c.elaborate_ids},
           {"vanilla_template", c.vanilla_id},
           {"metric", distill::to_string(c.metric)},
           {"grid", grid}});
    return 0;
}

// ---- ingest ----

int cmd_ingest(const Config& c, const std::string& run_dir) {
    auto run = open_run(c, run_dir);
    distill::RunLock lock(run.dir);
    auto d = distill::load_dataset(c.dataset_dir, c.dataset_name, c.task);
    if (c.truncate_article_words) {
        for (auto& [split, samples] : d.splits) {
            for (auto& s : samples) {
                auto it = s.input_fields.find("article");
                if (it != s.input_fields.end() && std::holds_alternative<std::string>(it->second)) {
                    it->second = distill::truncate_words(std::get<std::string>(it->second), *c.truncate_article_words);
                }
            }
        }
    }
    auto violations = distill::validate_dataset(d);
    json report = json::array();
    for (const auto& v : violations) {
        report.push_back({{"split", v.split}, {"sample_id", v.sample_id}, {"rule", v.rule}});
    }
    distill::write_file_atomic(run.dir / "reports" / "validation.json", report.dump(2) + "\n");
    if (!violations.empty()) {
        throw distill::SchemaError(std::to_string(violations.size()) +
                                   " dataset violations; see reports/validation.json");
    }
    distill::save_dataset(run.dir / "datasets", d);
    auto digest = distill::dataset_digest(d);
    run.manifest.dataset_digests[c.dataset_name] = digest;
    distill::StageRecord st;
    st.inputs_digest = digest_of({c.digest, digest});
    json counts = json::object();
    for (auto split : distill::kAllSplits) {
        counts[std::string(distill::to_string(split))] = d.split(split).size();
        auto rel = fs::path("datasets") / distill::split_path("", c.dataset_name, split);
        if (fs::exists(run.dir / rel)) {
            st.artifacts[std::string(distill::to_string(split))] = {rel.string(),
                                                                   distill::sha256_file(run.dir / rel)};
        }
    }
    st.details = {{"dataset", c.dataset_name}, {"digest", digest}, {"counts", counts}};
    finish_stage(run, "ingest", st);
    print({{"stage", "ingest"}, {"status", "done"}, {"dataset_digest", digest}, {"counts", counts}});
    return 0;
}

// ---- select ----

struct Scoring {
    std::unique_ptr<distill::EntityExtractor> extractor;
    std::optional<distill::LlmGateway> judge;
    const distill::PromptTemplate* judge_template = nullptr;
    distill::ScoringContext ctx;
};

std::unique_ptr<distill::EntityExtractor> make_extractor(const Config& c, std::optional<distill::LlmGateway>& holder) {
    auto kind = c.extractor.value("kind", std::string("heuristic"));
    if (kind == "heuristic") {
        return std::make_unique<distill::HeuristicEntityExtractor>();
    }
    if (kind == "llm") {
        holder.emplace(gateway(c, require_string(c.extractor, "model", "entity_extractor")));
        // Extraction prompts take a {text} field, which no task declares, so
        // they live outside the template library.
        distill::PromptTemplate t;
        t.id = "entity_extraction";
        t.user_text = distill::read_file(resolve(c.base_dir, require_string(c.extractor, "prompt_file", "entity_extractor")));
        return std::make_unique<distill::LlmEntityExtractor>(*holder, t);
    }
    throw distill::ConfigError("unknown entity extractor kind '" + kind + "'");
}

void prepare_scoring(const Config& c, distill::MetricId metric, Scoring& s,
                     std::optional<distill::LlmGateway>& extractor_gateway) {
    s.ctx.parallelism = c.synthesis.parallelism;
    if (metric == distill::MetricId::entity_density) {
        s.extractor = make_extractor(c, extractor_gateway);
        s.ctx.extractor = s.extractor.get();
    }
    if (metric == distill::MetricId::hhh_mt_mean) {
        s.judge.emplace(gateway(c, "judge"));
        s.judge_template = &c.library.get(c.judge_id);
        s.ctx.judge = &*s.judge;
        s.ctx.judge_template = s.judge_template;
    }
}

int cmd_select(const Config& c, const std::string& run_dir) {
    auto run = open_run(c, run_dir);
    distill::RunLock lock(run.dir);
    auto d = ingested(c, run);
    const auto& teacher_endpoint = model(c, "teacher");
    std::string inputs = digest_of({c.digest, run.manifest.dataset_digests.at(c.dataset_name),
                                    endpoint_digest(teacher_endpoint),
                                    c.models.count("judge") ? endpoint_digest(model(c, "judge")) : ""});
    if (run.manifest.up_to_date(run.dir, "select", inputs)) {
        print(up_to_date("select"));
        return 0;
    }
    const auto& d_eval = d.split(distill::Split::eval);
    auto teacher = gateway(c, "teacher");
    Scoring scoring;
    std::optional<distill::LlmGateway> extractor_gateway;
    prepare_scoring(c, c.metric, scoring, extractor_gateway);
    distill::MetricSpec metric{c.metric};

    std::vector<distill::PromptTemplate> variants;
    for (const auto& id : c.elaborate_ids) {
        variants.push_back(c.library.get(id));
    }
    // Prompt variant first under the base config, then the grid under the chosen prompt.
    auto [chosen_template, template_table] =
        distill::select_template(teacher, variants, c.generation, d_eval, metric, scoring.ctx, c.synthesis);
    auto [chosen_config, config_table] =
        distill::select_hyperparams(teacher, chosen_template, c.grid, d_eval, metric, scoring.ctx, c.synthesis);

    json out{{"metric", distill::to_string(c.metric)},
             {"template", chosen_template.id},
             {"generation_config", chosen_config.to_json()},
             {"template_selection", template_table.to_json()},
             {"hyperparameter_selection", config_table.to_json()}};
    distill::StageRecord st;
    st.inputs_digest = inputs;
    st.artifacts["selection"] = write_artifact(run, "scores/selection.json", out.dump(2) + "\n");
    st.details = {{"template", chosen_template.id}, {"generation_config", chosen_config.to_json()}};
    finish_stage(run, "select", st);
    print({{"stage", "select"}, {"status", "done"}, {"template", chosen_template.id},
           {"generation_config", chosen_config.to_json()}});
    return 0;
}

// ---- synthesize ----

std::pair<distill::PromptTemplate, distill::GenerationConfig> chosen(const Config& c, const Run& run) {
    auto it = run.manifest.stages.find("select");
    if (it != run.manifest.stages.end() && it->second.status == "done") {
        return {c.library.get(it->second.details.at("template").get<std::string>()),
                distill::GenerationConfig::from_json(it->second.details.at("generation_config"))};
    }
    return {c.library.get(c.elaborate_ids.front()), c.generation};
}

int cmd_synthesize(const Config& c, const std::string& run_dir, bool dry_run) {
    auto run = open_run(c, run_dir);
    distill::RunLock lock(run.dir);
    auto d = ingested(c, run);
    auto [t, config] = chosen(c, run);
    const auto& vanilla = c.library.get(c.vanilla_id);
    const auto& train = d.split(distill::Split::train);
    const auto& teacher_endpoint = model(c, "teacher");

    if (dry_run) {
        auto eff = distill::effective_config(config, t);
        std::int64_t in_tokens = 0;
        for (const auto& s : train) {
            for (const auto& m : distill::render(t, s, c.synthesis.render).messages) {
                in_tokens += distill::estimate_tokens(m.content);
            }
            (void)distill::render(vanilla, s, c.synthesis.render);
        }
        std::int64_t out_tokens = static_cast<std::int64_t>(train.size()) * eff.max_new_tokens;
        distill::CostScenario sc{"teacher", in_tokens, 0, out_tokens, teacher_endpoint.price_in_per_1k,
                                 teacher_endpoint.price_out_per_1k, 1000};
        // cost_per_1k treats token counts as per-sample; these are totals.
        auto total = distill::cost_per_1k(sc);
        print({{"stage", "synthesize"},
               {"dry_run", true},
               {"template", t.id},
               {"samples", train.size()},
               {"estimated_input_tokens", in_tokens},
               {"max_output_tokens", out_tokens},
               {"tokens_estimated", true},
               {"max_cost_usd", std::stod(distill::Money::from_units(total.units() / 1000).format(6))}});
        return 0;
    }

    std::string inputs = digest_of({c.digest, run.manifest.dataset_digests.at(c.dataset_name), t.id,
                                    config.to_json().dump(), endpoint_digest(teacher_endpoint)});
    if (run.manifest.up_to_date(run.dir, "synthesize", inputs)) {
        print(up_to_date("synthesize"));
        return 0;
    }
    auto teacher = gateway(c, "teacher");
    auto results = distill::generate_synthetic(teacher, t, config, train, c.task, c.synthesis);
    auto training = distill::build_dtrain_prime(d, results, c.synthesis.parse_retries);
    const auto& kept = training.dataset.split(distill::Split::train);
    auto file = distill::emit_finetune_dataset(kept, vanilla, c.synthesis.render);

    std::string generations;
    for (const auto& r : results) {
        generations += r.to_json().dump();
        generations.push_back('\n');
    }
    distill::StageRecord st;
    st.inputs_digest = inputs;
    st.artifacts["generations"] = write_artifact(run, "scores/generations.jsonl", generations);
    st.artifacts["dtrain_prime"] =
        write_artifact(run, "datasets/" + c.dataset_name + ".synthetic.train.jsonl", distill::to_jsonl(kept));
    st.artifacts["exclusions"] =
        write_artifact(run, "reports/exclusions.json", training.exclusion_report().dump(2) + "\n");
    st.artifacts["finetune_file"] = write_artifact(run, "finetune/train.jsonl", file.content);
    st.details = {{"template", t.id},
                  {"generation_config", config.to_json()},
                  {"vanilla_template", vanilla.id},
                  {"lines", file.lines},
                  {"excluded", training.exclusions.size()},
                  {"finetune_digest", file.digest}};
    finish_stage(run, "synthesize", st);
    print({{"stage", "synthesize"},
           {"status", "done"},
           {"lines", file.lines},
           {"excluded", training.exclusions.size()},
           {"finetune_file", (run.dir / "finetune/train.jsonl").string()},
           {"finetune_digest", file.digest}});
    return 0;
}

// ---- finetune ----

std::shared_ptr<distill::FinetuneProvider> make_provider(const Config& c) {
    const auto& pj = c.finetune.value("provider", json::object());
    auto kind = pj.value("kind", std::string("mock"));
    if (kind == "mock") {
        return distill::MockFinetuneProvider::from_file(resolve(c.base_dir, require_string(pj, "schedule", "provider")));
    }
    if (kind == "http") {
        distill::HttpFinetuneSettings s;
        s.base_url = require_string(pj, "base_url", "provider");
        s.api_key_env = pj.value("api_key_env", std::string());
        s.files_path = pj.value("files_path", s.files_path);
        s.jobs_path = pj.value("jobs_path", s.jobs_path);
        return std::make_shared<distill::HttpFinetuneProvider>(s);
    }
    throw distill::ConfigError("unknown fine-tune provider kind '" + kind + "'");
}

int cmd_finetune(const Config& c, const std::string& run_dir, bool dry_run, bool no_wait) {
    auto run = open_run(c, run_dir);
    distill::RunLock lock(run.dir);
    auto cfg = distill::FinetuneConfig::from_json(c.finetune);
    auto file = run.dir / "finetune" / "train.jsonl";
    if (!fs::exists(file)) {
        throw distill::ConfigError("no fine-tune file; run `distill synthesize` first");
    }
    auto content = distill::read_file(file);
    distill::validate_finetune_file(content);
    auto digest = distill::sha256_hex(content);
    auto syn = run.manifest.stages.find("synthesize");
    if (syn != run.manifest.stages.end() && syn->second.details.value("finetune_digest", "") != digest) {
        throw distill::SchemaError("finetune/train.jsonl differs from the file synthesize emitted");
    }
    if (dry_run) {
        print({{"stage", "finetune"}, {"dry_run", true}, {"config", cfg.to_json()}, {"dataset_digest", digest}});
        return 0;
    }
    std::string inputs = digest_of({c.digest, digest, cfg.to_json().dump()});
    if (run.manifest.up_to_date(run.dir, "finetune", inputs)) {
        print(up_to_date("finetune"));
        return 0;
    }
    auto provider = make_provider(c);
    auto job = distill::submit(*provider, file, cfg);
    run.manifest.stages["finetune"] = {"submitted", inputs, {}, job.to_json()};
    run.manifest.save(run.dir);
    if (!no_wait) {
        auto interval = std::chrono::milliseconds(c.finetune.value("poll_interval_ms", 30'000));
        auto deadline = std::chrono::milliseconds(c.finetune.value("deadline_ms", 86'400'000));
        job = distill::await_completion(*provider, job, interval, deadline);
    }
    distill::StageRecord st;
    st.inputs_digest = inputs;
    st.artifacts["job"] = write_artifact(run, "finetune/job.json", job.to_json().dump(2) + "\n");
    st.details = job.to_json();
    if (job.status == distill::JobStatus::failed) {
        st.status = "failed";
        run.manifest.stages["finetune"] = st;
        run.manifest.save(run.dir);
        throw distill::ProviderError("fine-tune job " + job.id + " failed: " + job.provider_message.value_or(""));
    }
    if (distill::is_terminal(job.status)) {
        finish_stage(run, "finetune", st);
    } else {
        st.status = "submitted";
        run.manifest.stages["finetune"] = st;
        run.manifest.save(run.dir);
    }
    print({{"stage", "finetune"}, {"status", distill::to_string(job.status)}, {"job", job.to_json()}});
    return 0;
}

// ---- evaluate ----

struct Output {
    std::string id;
    std::optional<std::string> text;
};

std::vector<Output> read_predictions(const fs::path& path) {
    std::vector<Output> out;
    auto text = distill::read_file(path);
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) {
            end = text.size();
        }
        auto line = distill::trim(std::string_view(text).substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            Output o{j.at("id").get<std::string>(), std::nullopt};
            if (j.contains("output") && j["output"].is_string()) {
                o.text = j["output"].get<std::string>();
            }
            out.push_back(std::move(o));
        } catch (const json::exception& e) {
            throw distill::SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

struct EvalArgs {
    std::string metric;
    std::string split = "test";
    std::string predictions;
    std::string model_name;
    std::string template_id;
    std::string subject;
};

std::string string_field(const distill::Sample& s, const char* name) {
    const auto* f = s.field(name);
    if (f == nullptr || !std::holds_alternative<std::string>(*f)) {
        throw distill::MissingFieldError(name, s.id);
    }
    return std::get<std::string>(*f);
}

int cmd_evaluate(const Config& c, const std::string& run_dir, const EvalArgs& a) {
    auto run = open_run(c, run_dir);
    distill::RunLock lock(run.dir);
    auto d = ingested(c, run);
    auto split = distill::parse_split(a.split);
    const auto& samples = d.split(split);
    if (a.predictions.empty() == a.model_name.empty() && a.metric != "complexity") {
        throw distill::ConfigError("pass exactly one of --predictions or --model");
    }
    std::string subject = a.subject;
    if (subject.empty()) {
        subject = !a.model_name.empty()       ? a.model_name
                  : !a.predictions.empty() ? fs::path(a.predictions).stem().string()
                                           : "gold";
    }
    const distill::PromptTemplate* gen_template = nullptr;
    if (!a.model_name.empty()) {
        gen_template = &c.library.get(a.template_id.empty() ? c.vanilla_id : a.template_id);
    }
    std::vector<std::string> input_digests{c.digest, run.manifest.dataset_digests.at(c.dataset_name), a.metric,
                                           a.split, subject};
    if (!a.predictions.empty()) {
        input_digests.push_back(distill::sha256_file(a.predictions));
    }
    if (gen_template != nullptr) {
        input_digests.push_back(gen_template->id);
        input_digests.push_back(endpoint_digest(model(c, a.model_name)));
    }
    if (a.metric == "hhh-mt" || a.metric == "complexity") {
        input_digests.push_back(endpoint_digest(model(c, "judge")));
    }
    std::string joined;
    for (const auto& p : input_digests) {
        joined += p + "\n";
    }
    auto inputs = distill::sha256_hex(joined);
    auto stage = "evaluate:" + a.metric + ":" + subject + ":" + a.split;
    if (run.manifest.up_to_date(run.dir, stage, inputs)) {
        print(up_to_date(stage));
        return 0;
    }

    // Outputs keyed by sample id, in split order.
    std::map<std::string, std::optional<std::string>> outputs;
    if (!a.predictions.empty()) {
        for (auto& o : read_predictions(a.predictions)) {
            if (!outputs.emplace(o.id, std::move(o.text)).second) {
                throw distill::SchemaError("predictions repeat id '" + o.id + "'");
            }
        }
    } else if (gen_template != nullptr) {
        auto g = gateway(c, a.model_name);
        std::vector<distill::BatchItem> items;
        for (const auto& s : samples) {
            items.push_back({s.id, distill::render(*gen_template, s, c.synthesis.render)});
        }
        auto records = g.generate_batch(items, distill::effective_config(c.generation, *gen_template),
                                        c.synthesis.parallelism);
        for (const auto& r : records) {
            std::optional<std::string> text;
            if (r.ok) {
                try {
                    text = distill::extract_label(*gen_template, r.raw_output, c.synthesis.cod_step).text();
                } catch (const distill::Error&) {
                    if (gen_template->expected_output == distill::ExpectedOutput::plain_text &&
                        gen_template->label_kind == distill::LabelKind::free_text) {
                        text = r.raw_output;
                    }
                }
            }
            outputs[r.sample_id] = text;
        }
    }
    auto output_for = [&](const distill::Sample& s) -> std::optional<std::string> {
        auto it = outputs.find(s.id);
        return it == outputs.end() ? std::nullopt : it->second;
    };

    distill::EvalReport report;
    if (a.metric == "accuracy") {
        std::vector<distill::Prediction> preds;
        std::map<std::string, distill::Label> gold;
        for (const auto& s : samples) {
            if (!s.gold_label) {
                throw distill::MissingGoldError("sample '" + s.id + "' has no gold label");
            }
            gold[s.id] = *s.gold_label;
            preds.push_back({s.id, output_for(s)});
        }
        report = distill::accuracy(preds, gold);
    } else if (a.metric == "density") {
        std::optional<distill::LlmGateway> holder;
        auto extractor = make_extractor(c, holder);
        std::vector<distill::DensityPair> pairs;
        std::vector<distill::EvalFailure> missing;
        for (const auto& s : samples) {
            auto o = output_for(s);
            if (!o) {
                missing.push_back({s.id, "MissingOutput", "no summary for sample"});
                continue;
            }
            pairs.push_back({s.id, *o, string_field(s, "article")});
        }
        report = distill::entity_density(pairs, *extractor);
        report.failures.insert(report.failures.end(), missing.begin(), missing.end());
    } else if (a.metric == "hhh-mt") {
        auto judge = gateway(c, "judge");
        std::vector<distill::JudgeTurn> turns;
        std::vector<distill::EvalFailure> missing;
        for (const auto& s : samples) {
            auto o = output_for(s);
            if (!o) {
                missing.push_back({s.id, "MissingOutput", "no response for sample"});
                continue;
            }
            distill::JudgeTurn turn{s.id, {}, string_field(s, "query"), *o};
            if (const auto* h = s.field("chat_history")) {
                if (const auto* list = std::get_if<std::vector<std::string>>(h)) {
                    turn.chat_history = *list;
                }
            }
            turns.push_back(std::move(turn));
        }
        distill::JudgeOptions opts;
        opts.parallelism = c.synthesis.parallelism;
        report = distill::hhh_mt(judge, c.library.get(c.judge_id), turns, opts);
        report.failures.insert(report.failures.end(), missing.begin(), missing.end());
    } else if (a.metric == "complexity") {
        auto judge = gateway(c, "judge");
        std::vector<distill::QuestionAnswer> items;
        for (const auto& s : samples) {
            std::optional<std::string> answer;
            if (!outputs.empty()) {
                answer = output_for(s);
            } else if (s.gold_label) {
                answer = s.gold_label->text();
            }
            if (!answer) {
                throw distill::MissingGoldError("sample '" + s.id + "' has no answer to rate");
            }
            items.push_back({s.id, string_field(s, "question"), *answer});
        }
        report = distill::complexity(judge, c.library.get(c.complexity_judge_id), items, c.synthesis.parallelism);
    } else {
        throw distill::ConfigError("unknown metric '" + a.metric + "'");
    }
    report.dataset = c.dataset_name + ":" + a.split;
    report.subject = subject;
    report.digests["dataset"] = run.manifest.dataset_digests.at(c.dataset_name);
    report.digests["config"] = c.digest;

    auto rel = "scores/" + a.metric + "." + subject + "." + a.split + ".json";
    distill::StageRecord st;
    st.inputs_digest = inputs;
    st.artifacts["report"] = write_artifact(run, rel, report.to_json().dump(2) + "\n");
    st.details = {{"mean", report.mean}, {"count", report.count()}, {"failures", report.failures.size()}};
    finish_stage(run, stage, st);
    json summary{{"stage", stage}, {"status", "done"}, {"metric", report.metric}, {"subject", subject},
                 {"mean", report.mean}, {"count", report.count()}, {"failures", report.failures.size()},
                 {"report", (run.dir / rel).string()}};
    if (report.median) {
        summary["median"] = *report.median;
    }
    print(summary);
    return 0;
}

// ---- cost ----

int cmd_cost(const std::string& scenarios_path, bool as_json, double onetime_dollars) {
    json j;
    try {
        j = json::parse(distill::read_file(scenarios_path));
    } catch (const json::parse_error& e) {
        throw distill::ConfigError(scenarios_path + ": " + e.what());
    }
    auto scenarios = distill::scenarios_from_json(j);
    if (!as_json) {
        std::cout << distill::render_cost_table(scenarios);
    } else {
        json rows = json::array();
        for (const auto& s : scenarios) {
            json row{{"name", s.name},
                     {"cost_per_1k", std::stod(distill::cost_per_1k(s).format(6))},
                     {"reduction_vs_first", distill::reduction_factor(scenarios.front(), s)}};
            if (onetime_dollars > 0 && &s != &scenarios.front()) {
                try {
                    row["breakeven_samples"] =
                        distill::breakeven(scenarios.front(), s, distill::Money::from_dollars(onetime_dollars));
                } catch (const distill::NoBreakevenError&) {
                    row["breakeven_samples"] = nullptr;
                }
            }
            rows.push_back(std::move(row));
        }
        print(rows);
    }
    return 0;
}

// ---- rate ----

std::vector<distill::RatingPool> load_pools(const std::vector<std::string>& paths) {
    std::vector<distill::RatingPool> pools;
    for (const auto& p : paths) {
        pools.push_back(distill::RatingPool::from_file(p));
    }
    return pools;
}

distill::RatingServer* g_server = nullptr;

int cmd_rate_serve(const std::vector<std::string>& pools, const std::string& storage, const std::string& host,
                   int port, const std::string& static_dir) {
    distill::RatingService service(storage, load_pools(pools));
    std::optional<fs::path> ui;
    if (!static_dir.empty()) {
        ui = static_dir;
    }
    distill::RatingServer server(service, ui);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server != nullptr) {
            g_server->stop();
        }
    });
    std::signal(SIGTERM, [](int) {
        if (g_server != nullptr) {
            g_server->stop();
        }
    });
    if (port == 0) {
        int bound = server.start(host, 0);
        std::cout << json{{"host", host}, {"port", bound}}.dump() << std::endl;
        pause();
        server.stop();
    } else {
        server.run(host, port);
    }
    g_server = nullptr;
    return 0;
}

int cmd_rate_export(const std::vector<std::string>& pools, const std::string& storage, bool partial,
                    const std::string& rater, const std::string& out) {
    distill::RatingService service(storage, load_pools(pools));
    json sessions = json::array();
    for (const auto& s : service.export_sessions(partial, rater)) {
        sessions.push_back(distill::to_json(s));
    }
    json j{{"sessions", sessions}};
    if (!out.empty()) {
        distill::write_file_atomic(out, j.dump(2) + "\n");
    }
    print(j);
    return 0;
}

int cmd_rate_aggregate(const std::string& sessions_path) {
    json j;
    try {
        j = json::parse(distill::read_file(sessions_path));
    } catch (const json::parse_error& e) {
        throw distill::SchemaError(sessions_path + ": " + e.what());
    }
    std::vector<distill::RatedSession> sessions;
    for (const auto& s : j.at("sessions")) {
        sessions.push_back(distill::rated_session_from_json(s));
    }
    print(distill::aggregate_human_ratings(sessions).to_json());
    return 0;
}

// ---- report ----

int cmd_report(std::vector<std::string> inputs, const std::string& run_dir, const std::string& out) {
    if (!run_dir.empty()) {
        std::vector<std::string> found;
        if (fs::exists(fs::path(run_dir) / "scores")) {
            for (const auto& e : fs::directory_iterator(fs::path(run_dir) / "scores")) {
                auto name = e.path().filename().string();
                if (e.path().extension() == ".json" && name != "selection.json") {
                    found.push_back(e.path().string());
                }
            }
        }
        std::sort(found.begin(), found.end());
        inputs.insert(inputs.end(), found.begin(), found.end());
    }
    if (inputs.empty()) {
        throw distill::ConfigError("no evaluation reports to merge");
    }
    std::vector<distill::EvalReport> reports;
    for (const auto& p : inputs) {
        try {
            reports.push_back(distill::EvalReport::from_json(json::parse(distill::read_file(p))));
        } catch (const json::exception& e) {
            throw distill::SchemaError(p + ": " + e.what());
        }
    }
    auto table = distill::render_report_table(reports);
    auto target = out;
    if (target.empty() && !run_dir.empty()) {
        target = (fs::path(run_dir) / "reports" / "comparison.md").string();
    }
    if (!target.empty()) {
        distill::write_file_atomic(target, table);
    }
    std::cout << table;
    return 0;
}

int exit_code(distill::ErrorCategory c) {
    switch (c) {
        case distill::ErrorCategory::config: return 2;
        case distill::ErrorCategory::data: return 3;
        case distill::ErrorCategory::provider: return 4;
    }
    return 1;
}

void report_error(const std::string& code, const std::string& category, const std::string& message) {
    std::cerr << json{{"error", {{"code", code}, {"category", category}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-distillation pipeline: select, synthesize, fine-tune, evaluate"};
    app.require_subcommand(1);

    std::string config_path;
    std::string run_dir;
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "debug|info|warn|error (JSON lines on stderr)")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    auto add_run_options = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--run-dir", run_dir, "run directory (overrides run_dir in the config)");
    };

    auto* check = app.add_subcommand("check", "load and validate a run config without touching any endpoint");
    check->add_option("-c,--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);

    auto* ingest = app.add_subcommand("ingest", "validate the dataset and register it in the run");
    add_run_options(ingest);

    auto* select = app.add_subcommand("select", "pick the prompt variant and generation config on the eval split");
    add_run_options(select);

    bool dry_run = false;
    auto* synthesize = app.add_subcommand("synthesize", "label the train split with the teacher; emit fine-tune data");
    add_run_options(synthesize);
    synthesize->add_flag("--dry-run", dry_run, "validate and estimate cost without calling the teacher");

    bool no_wait = false;
    auto* finetune = app.add_subcommand("finetune", "submit the fine-tune file and wait for the job");
    add_run_options(finetune);
    finetune->add_flag("--dry-run", dry_run, "validate without contacting the provider");
    finetune->add_flag("--no-wait", no_wait, "return after submission");

    EvalArgs eval_args;
    auto* evaluate = app.add_subcommand("evaluate", "score predictions or a model on a split");
    add_run_options(evaluate);
    evaluate->add_option("--metric", eval_args.metric)
        ->required()
        ->check(CLI::IsMember({"density", "accuracy", "hhh-mt", "complexity"}));
    evaluate->add_option("--split", eval_args.split)->check(CLI::IsMember({"train", "eval", "test"}));
    evaluate->add_option("--predictions", eval_args.predictions, "JSONL of {id, output}")
        ->check(CLI::ExistingFile);
    evaluate->add_option("--model", eval_args.model_name, "model name from the config to generate outputs");
    evaluate->add_option("--template", eval_args.template_id, "template for --model (default: vanilla)");
    evaluate->add_option("--subject", eval_args.subject, "label for the evaluated system");

    std::string scenarios;
    bool cost_json = false;
    double onetime = 0;
    auto* cost = app.add_subcommand("cost", "inference cost per 1k samples for each scenario");
    cost->add_option("--scenarios", scenarios)->required()->check(CLI::ExistingFile);
    cost->add_flag("--json", cost_json);
    cost->add_option("--onetime", onetime, "one-time distillation cost in dollars, for break-even");

    auto* rate = app.add_subcommand("rate", "blind human rating sessions");
    rate->require_subcommand(1);
    std::vector<std::string> pools;
    std::string storage;
    auto* serve = rate->add_subcommand("serve", "run the rating HTTP service");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    serve->add_option("--pool", pools)->required()->check(CLI::ExistingFile);
    serve->add_option("--storage", storage)->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port, "0 picks a free port and prints it");
    serve->add_option("--static", static_dir, "rating UI bundle served under /ui");
    auto* rexport = rate->add_subcommand("export", "export sessions with model names restored");
    bool partial = false;
    std::string rater;
    std::string export_out;
    rexport->add_option("--pool", pools)->required()->check(CLI::ExistingFile);
    rexport->add_option("--storage", storage)->required();
    rexport->add_flag("--partial", partial, "include open sessions");
    rexport->add_option("--rater", rater);
    rexport->add_option("--out", export_out);
    auto* aggregate = rate->add_subcommand("aggregate", "per-rater and overall means from exported sessions");
    std::string sessions_path;
    aggregate->add_option("--sessions", sessions_path)->required()->check(CLI::ExistingFile);

    std::vector<std::string> report_inputs;
    std::string report_run;
    std::string report_out;
    auto* report = app.add_subcommand("report", "merge evaluation reports into comparison tables");
    report->add_option("inputs", report_inputs, "EvalReport JSON files")->check(CLI::ExistingFile);
    report->add_option("--run-dir", report_run, "also include every report under <run-dir>/scores");
    report->add_option("--out", report_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("UsageError", "config", e.what());
        return 2;
    }

    distill::set_min_log_level(log_level == "debug" ? distill::LogLevel::debug
                               : log_level == "info" ? distill::LogLevel::info
                               : log_level == "error" ? distill::LogLevel::error
                                                      : distill::LogLevel::warn);
    try {
        if (*cost) {
            return cmd_cost(scenarios, cost_json, onetime);
        }
        if (*rate) {
            if (*serve) {
                return cmd_rate_serve(pools, storage, host, port, static_dir);
            }
            if (*rexport) {
                return cmd_rate_export(pools, storage, partial, rater, export_out);
            }
            return cmd_rate_aggregate(sessions_path);
        }
        if (*report) {
            return cmd_report(report_inputs, report_run, report_out);
        }
        auto config = load_config(config_path);
        if (*check) {
            return cmd_check(config);
        }
        if (*ingest) {
            return cmd_ingest(config, run_dir);
        }
        if (*select) {
            return cmd_select(config, run_dir);
        }
        if (*synthesize) {
            return cmd_synthesize(config, run_dir, dry_run);
        }
        if (*finetune) {
            return cmd_finetune(config, run_dir, dry_run, no_wait);
        }
        return cmd_evaluate(config, run_dir, eval_args);
    } catch (const distill::Error& e) {
        static const char* kNames[] = {"config", "data", "provider"};
        report_error(e.code(), kNames[static_cast<int>(e.category())], e.what());
        return exit_code(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
        report_error("IoError", "data", e.what());
        return 3;
    } catch (const std::exception& e) {
        report_error("InternalError", "internal", e.what());
        return 1;
    }
}
