#include "distill/synth_pipeline.hpp"

#include "distill/digest.hpp"
#include "distill/errors.hpp"
#include "distill/logging.hpp"
#include "distill/output_parsers.hpp"

#include <algorithm>
#include <map>

namespace distill {

namespace {

SynthFailure failure_from(const Error& e, std::string_view raw) {
    SynthFailure f{e.code(), e.what(), {}};
    if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
        f.excerpt = pe->excerpt();
    } else {
        f.excerpt = std::string(raw.substr(0, 120));
    }
    return f;
}

void parse_into(SynthResult& result, const PromptTemplate& t, int cod_step) {
    result.label.reset();
    result.failure.reset();
    if (!result.record.ok) {
        result.failure = SynthFailure{result.record.error_code, result.record.error_message, {}};
        return;
    }
    try {
        result.label = extract_label(t, result.record.raw_output, cod_step);
    } catch (const ParseError& e) {
        result.failure = failure_from(e, result.record.raw_output);
    } catch (const NormalizationError& e) {
        result.failure = failure_from(e, result.record.raw_output);
    }
}

CandidateScore score_candidate(const LlmGateway& teacher, const PromptTemplate& t, const GenerationConfig& config,
                               std::span<const Sample> d_eval, const MetricSpec& metric, const ScoringContext& ctx,
                               const SynthesisOptions& options) {
    auto task = t.task;
    auto results = generate_synthetic(teacher, t, config, d_eval, task, options);
    CandidateScore row;
    row.total = results.size();
    row.unparseable = static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const SynthResult& r) { return !r.parsed(); }));
    if (row.total == 0 ||
        static_cast<double>(row.unparseable) / static_cast<double>(row.total) > options.max_unparseable_fraction) {
        row.disqualified = true;
        return row;
    }
    row.score = score_results(metric, results, ctx).mean;
    return row;
}

std::size_t pick_best(const std::vector<CandidateScore>& rows) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].disqualified) {
            continue;
        }
        if (!best || rows[i].score > rows[*best].score) {
            best = i;
        }
    }
    if (!best) {
        throw NoViableCandidateError("every candidate was disqualified");
    }
    return *best;
}

}  // namespace

std::string_view to_string(MetricId id) {
    switch (id) {
        case MetricId::entity_density: return "entity_density";
        case MetricId::accuracy: return "accuracy";
        case MetricId::hhh_mt_mean: return "hhh_mt_mean";
    }
    return "?";
}

MetricId parse_metric_id(std::string_view text) {
    for (auto id : {MetricId::entity_density, MetricId::accuracy, MetricId::hhh_mt_mean}) {
        if (to_string(id) == text) {
            return id;
        }
    }
    throw ConfigError("unknown metric '" + std::string(text) + "'");
}

GenerationConfig effective_config(const GenerationConfig& config, const PromptTemplate& t) {
    GenerationConfig c = config;
    c.max_new_tokens = std::min(t.max_new_tokens, kMaxNewTokensCap);
    return c;
}

Label extract_label(const PromptTemplate& t, std::string_view raw, int cod_step) {
    switch (t.expected_output) {
        case ExpectedOutput::plain_text:
            return normalize_label(raw, t.label_kind);
        case ExpectedOutput::cod_json: {
            if (cod_step < 1 || cod_step > static_cast<int>(kCodSteps)) {
                throw ConfigError("cod_step must be in [1, 4]");
            }
            auto chain = parse_cod(raw);
            return normalize_label(chain.steps[static_cast<std::size_t>(cod_step - 1)].denser_summary,
                                   LabelKind::free_text);
        }
        case ExpectedOutput::cot_json_choice:
            return normalize_label(parse_cot(raw, "answer_choice").label_raw, t.label_kind);
        case ExpectedOutput::cot_json_numeric:
            return normalize_label(parse_cot(raw, "answer").label_raw, t.label_kind);
        case ExpectedOutput::rating_lines:
        case ExpectedOutput::difficulty_score:
            break;
    }
    throw ConfigError("template '" + t.id + "' is a judge prompt and yields no label");
}

json SynthResult::to_json() const {
    json j;
    j["sample_id"] = sample.id;
    j["record"] = record.to_json();
    j["label"] = label ? distill::to_json(*label) : json(nullptr);
    if (failure) {
        j["failure"] = {{"code", failure->code}, {"message", failure->message}, {"excerpt", failure->excerpt}};
    }
    j["generation_rounds"] = generation_rounds;
    return j;
}

std::vector<SynthResult> generate_synthetic(const LlmGateway& teacher, const PromptTemplate& t,
                                            const GenerationConfig& config, std::span<const Sample> split,
                                            TaskKind task, const SynthesisOptions& options) {
    if (t.task != task) {
        throw ConfigError("template '" + t.id + "' targets task " + std::string(to_string(t.task)) + ", not " +
                          std::string(to_string(task)));
    }
    if (t.is_judge()) {
        throw ConfigError("template '" + t.id + "' is a judge prompt");
    }
    auto cfg = effective_config(config, t);

    std::vector<SynthResult> results(split.size());
    std::vector<BatchItem> items;
    items.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        results[i].sample = split[i];
        items.push_back({split[i].id, render(t, split[i], options.render)});
    }

    std::vector<std::size_t> pending(split.size());
    for (std::size_t i = 0; i < pending.size(); ++i) {
        pending[i] = i;
    }
    for (int round = 0; round <= options.parse_retries && !pending.empty(); ++round) {
        std::vector<BatchItem> batch;
        batch.reserve(pending.size());
        for (auto i : pending) {
            batch.push_back(items[i]);
        }
        auto records = teacher.generate_batch(batch, cfg, options.parallelism);
        std::vector<std::size_t> still_pending;
        for (std::size_t k = 0; k < pending.size(); ++k) {
            auto& result = results[pending[k]];
            result.record = std::move(records[k]);
            result.generation_rounds = round + 1;
            parse_into(result, t, options.cod_step);
            if (!result.parsed()) {
                still_pending.push_back(pending[k]);
            }
        }
        pending = std::move(still_pending);
    }
    for (auto i : pending) {
        log_event(LogLevel::warn, "synthesis_unparsed",
                  {{"sample_id", results[i].sample.id}, {"code", results[i].failure->code}});
    }
    return results;
}

EvalReport score_results(const MetricSpec& metric, std::span<const SynthResult> results, const ScoringContext& ctx) {
    switch (metric.id) {
        case MetricId::accuracy: {
            std::vector<Prediction> predictions;
            std::map<std::string, Label> gold;
            for (const auto& r : results) {
                if (!r.sample.gold_label) {
                    throw MissingGoldError("sample '" + r.sample.id + "' has no gold label");
                }
                gold[r.sample.id] = *r.sample.gold_label;
                predictions.push_back({r.sample.id, r.label ? std::optional(r.label->text()) : std::nullopt});
            }
            return accuracy(predictions, gold);
        }
        case MetricId::entity_density: {
            if (ctx.extractor == nullptr) {
                throw ConfigError("entity_density scoring needs an entity extractor");
            }
            std::vector<DensityPair> pairs;
            std::vector<EvalFailure> unparsed;
            for (const auto& r : results) {
                const auto* article = r.sample.field("article");
                if (article == nullptr || !std::holds_alternative<std::string>(*article)) {
                    throw MissingFieldError("article", r.sample.id);
                }
                if (!r.label) {
                    unparsed.push_back({r.sample.id, r.failure ? r.failure->code : "ParseError", "no summary"});
                    continue;
                }
                pairs.push_back({r.sample.id, r.label->text(), std::get<std::string>(*article)});
            }
            auto report = entity_density(pairs, *ctx.extractor);
            report.failures.insert(report.failures.end(), unparsed.begin(), unparsed.end());
            return report;
        }
        case MetricId::hhh_mt_mean: {
            if (ctx.judge == nullptr || ctx.judge_template == nullptr) {
                throw ConfigError("hhh_mt_mean scoring needs a judge endpoint and template");
            }
            std::vector<JudgeTurn> turns;
            std::vector<EvalFailure> unparsed;
            for (const auto& r : results) {
                if (!r.label) {
                    unparsed.push_back({r.sample.id, r.failure ? r.failure->code : "ParseError", "no response"});
                    continue;
                }
                JudgeTurn turn;
                turn.id = r.sample.id;
                if (const auto* h = r.sample.field("chat_history")) {
                    if (const auto* list = std::get_if<std::vector<std::string>>(h)) {
                        turn.chat_history = *list;
                    }
                }
                if (const auto* q = r.sample.field("query"); q && std::holds_alternative<std::string>(*q)) {
                    turn.query = std::get<std::string>(*q);
                }
                turn.response = r.label->text();
                turns.push_back(std::move(turn));
            }
            JudgeOptions opts;
            opts.parallelism = ctx.parallelism;
            auto report = hhh_mt(*ctx.judge, *ctx.judge_template, turns, opts);
            report.failures.insert(report.failures.end(), unparsed.begin(), unparsed.end());
            return report;
        }
    }
    throw ConfigError("unsupported metric");
}

json SelectionTable::to_json() const {
    json j;
    j["chosen"] = chosen;
    json rows_json = json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"index", r.index},
                             {"name", r.name},
                             {"score", r.score},
                             {"unparseable", r.unparseable},
                             {"total", r.total},
                             {"disqualified", r.disqualified}});
    }
    j["rows"] = std::move(rows_json);
    return j;
}

std::pair<GenerationConfig, SelectionTable> select_hyperparams(const LlmGateway& teacher, const PromptTemplate& t,
                                                               std::span<const GenerationConfig> grid,
                                                               std::span<const Sample> d_eval,
                                                               const MetricSpec& metric, const ScoringContext& ctx,
                                                               const SynthesisOptions& options) {
    if (grid.empty()) {
        throw EmptyGridError("hyperparameter grid is empty");
    }
    if (d_eval.empty()) {
        throw ConfigError("evaluation split is empty");
    }
    SelectionTable table;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto row = score_candidate(teacher, t, grid[i], d_eval, metric, ctx, options);
        row.index = i;
        row.name = grid[i].to_json().dump();
        table.rows.push_back(std::move(row));
    }
    table.chosen = pick_best(table.rows);
    return {grid[table.chosen], std::move(table)};
}

std::pair<PromptTemplate, SelectionTable> select_template(const LlmGateway& teacher,
                                                          std::span<const PromptTemplate> variants,
                                                          const GenerationConfig& config,
                                                          std::span<const Sample> d_eval, const MetricSpec& metric,
                                                          const ScoringContext& ctx,
                                                          const SynthesisOptions& options) {
    if (variants.empty()) {
        throw EmptyGridError("no template variants to select from");
    }
    if (d_eval.empty()) {
        throw ConfigError("evaluation split is empty");
    }
    SelectionTable table;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        auto row = score_candidate(teacher, variants[i], config, d_eval, metric, ctx, options);
        row.index = i;
        row.name = variants[i].id;
        table.rows.push_back(std::move(row));
    }
    table.chosen = pick_best(table.rows);
    return {variants[table.chosen], std::move(table)};
}

json TrainingSet::exclusion_report() const {
    json j;
    j["dataset"] = dataset.name;
    j["kept"] = dataset.split(Split::train).size();
    j["excluded"] = exclusions.size();
    j["retry_budget"] = retry_budget;
    json items = json::array();
    for (const auto& e : exclusions) {
        items.push_back({{"sample_id", e.sample_id}, {"code", e.code}, {"message", e.message}});
    }
    j["exclusions"] = std::move(items);
    return j;
}

TrainingSet build_dtrain_prime(const Dataset& source, std::span<const SynthResult> synth, int retry_budget) {
    const auto& train = source.split(Split::train);
    std::map<std::string, const SynthResult*> by_id;
    for (const auto& r : synth) {
        if (!by_id.emplace(r.sample.id, &r).second) {
            throw AlignmentError("synthetic output repeats sample '" + r.sample.id + "'");
        }
    }
    if (by_id.size() != train.size()) {
        throw AlignmentError("synthetic output has " + std::to_string(by_id.size()) + " samples, train split has " +
                             std::to_string(train.size()));
    }
    TrainingSet out;
    out.retry_budget = retry_budget;
    out.dataset.name = source.name;
    out.dataset.task = source.task;
    auto& kept = out.dataset.splits[Split::train];
    for (const auto& s : train) {
        auto it = by_id.find(s.id);
        if (it == by_id.end()) {
            throw AlignmentError("no synthetic output for sample '" + s.id + "'");
        }
        const auto& r = *it->second;
        if (!r.label) {
            out.exclusions.push_back({s.id, r.failure ? r.failure->code : "ParseError",
                                      r.failure ? r.failure->message : "unparsed"});
            continue;
        }
        Sample labeled = s;
        labeled.synthetic_label = r.label;
        kept.push_back(std::move(labeled));
    }
    return out;
}

FinetuneFile emit_finetune_dataset(std::span<const Sample> samples, const PromptTemplate& vanilla,
                                   const RenderOptions& render_options) {
    if (vanilla.style != PromptStyle::vanilla) {
        throw ConfigError("fine-tune data must use a vanilla template, got '" + vanilla.id + "'");
    }
    if (vanilla.system_text.empty()) {
        throw ConfigError("vanilla template '" + vanilla.id + "' has no system text");
    }
    FinetuneFile file;
    for (const auto& s : samples) {
        if (!s.synthetic_label) {
            throw MissingLabelError("sample '" + s.id + "' has no synthetic label");
        }
        auto prompt = render(vanilla, s, render_options);
        json messages = prompt.messages_json();
        messages.push_back({{"role", "assistant"}, {"content", s.synthetic_label->text()}});
        json line;
        line["messages"] = std::move(messages);
        file.content += line.dump();
        file.content.push_back('\n');
        ++file.lines;
    }
    file.digest = sha256_hex(file.content);
    return file;
}

}  // namespace distill
