#pragma once

#include "distill/core_model.hpp"
#include "distill/json.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/prompt_library.hpp"

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace distill {

struct EvalFailure {
    std::string id;
    std::string code;
    std::string message;
};

struct SampleScore {
    std::string id;
    double value = 0.0;
};

// Per-sample scores plus aggregates. mean (and median, when reported) are
// always recomputable from `scores`; failures are listed separately and are
// not part of `count` unless the metric scores them (accuracy scores a
// failure as 0).
struct EvalReport {
    std::string metric;
    std::string dataset;
    std::string subject;
    std::vector<SampleScore> scores;
    std::vector<EvalFailure> failures;
    double mean = 0.0;
    std::optional<double> median;
    std::string median_rule;
    bool percentage = false;
    bool tokens_estimated = false;
    json digests = json::object();

    std::size_t count() const { return scores.size(); }
    json to_json() const;
    static EvalReport from_json(const json& j);
};

double mean_of(std::span<const double> values);

// Lower median: for even counts, the smaller of the two middle values, so the
// result is always one of the observed scores.
double lower_median(std::vector<double> values);

// ---- entity density ----

const std::set<std::string>& default_stopwords();

// Whitespace tokens, edge punctuation stripped; an entity is a maximal run of
// tokens that start with an uppercase letter or are all digits. Leading and
// trailing stopwords are trimmed from a run (a run of only stopwords is
// dropped). Entities are lowercased.
std::set<std::string> extract_entities_heuristic(std::string_view text, const std::set<std::string>& stopwords);

class EntityExtractor {
public:
    virtual ~EntityExtractor() = default;
    virtual std::set<std::string> extract(std::string_view text) const = 0;
    // Identifies the extractor configuration; reports carry it so scores from
    // different extractors are never compared.
    virtual json spec() const = 0;
};

class HeuristicEntityExtractor : public EntityExtractor {
public:
    explicit HeuristicEntityExtractor(std::set<std::string> stopwords = default_stopwords());
    std::set<std::string> extract(std::string_view text) const override;
    json spec() const override;

private:
    std::set<std::string> stopwords_;
};

// Asks a model to list entities. The template must have a {text} placeholder;
// the completion is read as a JSON array of strings, or one entity per line.
class LlmEntityExtractor : public EntityExtractor {
public:
    LlmEntityExtractor(const LlmGateway& gateway, PromptTemplate extraction_template,
                       GenerationConfig config = {});
    std::set<std::string> extract(std::string_view text) const override;
    json spec() const override;

private:
    const LlmGateway& gateway_;
    PromptTemplate template_;
    GenerationConfig config_;
};

struct DensityPair {
    std::string id;
    std::string summary;
    std::string document;
};

// Per sample: |E_summary ∩ E_document| / whitespace tokens in the summary.
// Empty summaries are failures and excluded from the mean.
EvalReport entity_density(std::span<const DensityPair> pairs, const EntityExtractor& extractor);
EvalReport entity_density(const std::vector<std::string>& summaries, const std::vector<std::string>& documents,
                          const EntityExtractor& extractor);

// ---- accuracy ----

struct Prediction {
    std::string id;
    // nullopt when the model output could not be parsed upstream.
    std::optional<std::string> raw_label;
};

// Predictions are normalized to the gold label's kind. Unparseable
// predictions score 0 and are listed as failures. Mean is a percentage.
EvalReport accuracy(std::span<const Prediction> predictions, const std::map<std::string, Label>& gold);

// ---- judge metrics ----

struct JudgeTurn {
    std::string id;
    std::vector<std::string> chat_history;
    std::string query;
    std::string response;
};

// Drops the chat-history block from the judge prompt, for single-turn data.
PromptTemplate without_chat_history(const PromptTemplate& judge_template);

struct JudgeOptions {
    int parallelism = 4;
    // Omit the chat-history block. Unset: omit when no turn has any history.
    std::optional<bool> single_turn;
    RenderOptions render;
};

// Mean rating over every turn; unparseable judge outputs become failures.
EvalReport hhh_mt(const LlmGateway& judge, const PromptTemplate& judge_template, std::span<const JudgeTurn> turns,
                  const JudgeOptions& options = {});

struct QuestionAnswer {
    std::string id;
    std::string question;
    std::string answer;
};

// Difficulty 1..5 per item; reports mean and lower median.
EvalReport complexity(const LlmGateway& judge, const PromptTemplate& judge_template,
                      std::span<const QuestionAnswer> items, int parallelism = 4);

// ---- human ratings ----

inline constexpr int kHumanRatingMin = 1;
inline constexpr int kHumanRatingMax = 5;

struct HumanRating {
    std::string sample_id;
    std::string model;
    int value = 0;
};

struct RatedSession {
    std::string session_id;
    std::string rater_id;
    std::vector<HumanRating> ratings;
};

struct HumanRatingSummary {
    // model -> rater -> mean rating
    std::map<std::string, std::map<std::string, double>> per_rater;
    // model -> mean of that model's per-rater means
    std::map<std::string, double> overall;

    json to_json() const;
};

HumanRatingSummary aggregate_human_ratings(std::span<const RatedSession> sessions);

// Markdown table: one row per dataset, one column per subject, cell = mean
// (plus median where the metric reports one).
std::string render_report_table(std::span<const EvalReport> reports);

}  // namespace distill
