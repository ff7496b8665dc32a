#pragma once

#include "distill/core_model.hpp"
#include "distill/evaluation.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/prompt_library.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distill {

enum class MetricId { entity_density, accuracy, hhh_mt_mean };

std::string_view to_string(MetricId id);
MetricId parse_metric_id(std::string_view text);

// Every supported metric is maximized.
struct MetricSpec {
    MetricId id = MetricId::accuracy;
};

// What a metric needs beyond the generations themselves.
struct ScoringContext {
    const EntityExtractor* extractor = nullptr;
    const LlmGateway* judge = nullptr;
    const PromptTemplate* judge_template = nullptr;
    int parallelism = 4;
};

struct SynthesisOptions {
    int parallelism = 4;
    // Re-generation attempts for samples whose output did not parse.
    int parse_retries = 1;
    // Which chain-of-density step (1-4) becomes the summarization label.
    int cod_step = 4;
    // Candidates whose unparseable fraction exceeds this are disqualified.
    double max_unparseable_fraction = 0.5;
    RenderOptions render;
};

// The template's token budget governs generation length.
GenerationConfig effective_config(const GenerationConfig& config, const PromptTemplate& t);

// Turns a completion into a normalized label according to t.expected_output.
// Throws ParseError or NormalizationError.
Label extract_label(const PromptTemplate& t, std::string_view raw, int cod_step = 4);

struct SynthFailure {
    std::string code;
    std::string message;
    std::string excerpt;
};

struct SynthResult {
    Sample sample;
    GenerationRecord record;
    std::optional<Label> label;
    std::optional<SynthFailure> failure;
    int generation_rounds = 1;

    bool parsed() const { return label.has_value(); }
    json to_json() const;
};

// One result per sample, in input order. Per-sample failures are carried in
// place; unparsed samples are re-generated up to options.parse_retries times.
std::vector<SynthResult> generate_synthetic(const LlmGateway& teacher, const PromptTemplate& t,
                                            const GenerationConfig& config, std::span<const Sample> split,
                                            TaskKind task, const SynthesisOptions& options = {});

EvalReport score_results(const MetricSpec& metric, std::span<const SynthResult> results, const ScoringContext& ctx);

struct CandidateScore {
    std::size_t index = 0;
    std::string name;
    double score = 0.0;
    std::size_t unparseable = 0;
    std::size_t total = 0;
    bool disqualified = false;
};

struct SelectionTable {
    std::size_t chosen = 0;
    std::vector<CandidateScore> rows;

    json to_json() const;
};

// argmax over the grid; ties go to the earliest candidate.
std::pair<GenerationConfig, SelectionTable> select_hyperparams(const LlmGateway& teacher, const PromptTemplate& t,
                                                               std::span<const GenerationConfig> grid,
                                                               std::span<const Sample> d_eval,
                                                               const MetricSpec& metric, const ScoringContext& ctx,
                                                               const SynthesisOptions& options = {});

std::pair<PromptTemplate, SelectionTable> select_template(const LlmGateway& teacher,
                                                          std::span<const PromptTemplate> variants,
                                                          const GenerationConfig& config,
                                                          std::span<const Sample> d_eval, const MetricSpec& metric,
                                                          const ScoringContext& ctx,
                                                          const SynthesisOptions& options = {});

struct Exclusion {
    std::string sample_id;
    std::string code;
    std::string message;
};

struct TrainingSet {
    Dataset dataset;  // train split only, synthetic labels filled in
    std::vector<Exclusion> exclusions;
    int retry_budget = 0;

    json exclusion_report() const;
};

// Sets synthetic_label from the parsed outputs; gold labels are left alone.
// Samples still unparsed are excluded. AlignmentError when ids disagree.
TrainingSet build_dtrain_prime(const Dataset& source, std::span<const SynthResult> synth, int retry_budget);

struct FinetuneFile {
    std::string content;
    std::string digest;
    std::size_t lines = 0;
};

// One {"messages":[system, user, assistant]} line per sample; the assistant
// turn is the label text only.
FinetuneFile emit_finetune_dataset(std::span<const Sample> samples, const PromptTemplate& vanilla,
                                   const RenderOptions& render = {});

}  // namespace distill
