#include "distill/evaluation.hpp"

#include "distill/digest.hpp"
#include "distill/errors.hpp"
#include "distill/output_parsers.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <tuple>

namespace distill {

namespace {

bool is_ascii_punct(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

std::string_view strip_punct(std::string_view token) {
    while (!token.empty() && is_ascii_punct(token.front())) {
        token.remove_prefix(1);
    }
    while (!token.empty() && is_ascii_punct(token.back())) {
        token.remove_suffix(1);
    }
    return token;
}

bool entity_token(std::string_view token) {
    if (token.empty()) {
        return false;
    }
    if (std::isupper(static_cast<unsigned char>(token.front())) != 0) {
        return true;
    }
    return std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void finish_run(const std::vector<std::string_view>& run, const std::set<std::string>& stopwords,
                std::set<std::string>& out) {
    std::size_t begin = 0;
    std::size_t end = run.size();
    while (begin < end && stopwords.count(lowercase(run[begin])) > 0) {
        ++begin;
    }
    while (end > begin && stopwords.count(lowercase(run[end - 1])) > 0) {
        --end;
    }
    if (begin == end) {
        return;
    }
    std::string entity;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) {
            entity.push_back(' ');
        }
        entity += lowercase(run[i]);
    }
    out.insert(std::move(entity));
}

void finalize(EvalReport& report) {
    std::vector<double> values;
    values.reserve(report.scores.size());
    for (const auto& s : report.scores) {
        values.push_back(s.value);
    }
    report.mean = mean_of(values);
    if (report.percentage) {
        report.mean *= 100.0;
    }
}

json template_digest(const PromptTemplate& t) {
    return json{{"id", t.id}, {"version", t.version}, {"sha256", sha256_hex(t.system_text + "\n\x1f\n" + t.user_text)}};
}

GenerationConfig judge_config(const PromptTemplate& t) {
    GenerationConfig c;
    c.max_new_tokens = std::min(t.max_new_tokens, kMaxNewTokensCap);
    return c;
}

std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

}  // namespace

double mean_of(std::span<const double> values) {
    if (values.empty()) {
        return 0.0;
    }
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double lower_median(std::vector<double> values) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

json EvalReport::to_json() const {
    json j;
    j["metric"] = metric;
    j["dataset"] = dataset;
    j["subject"] = subject;
    j["digests"] = digests;
    json agg;
    agg["mean"] = mean;
    agg["median"] = median ? json(*median) : json(nullptr);
    if (!median_rule.empty()) {
        agg["median_rule"] = median_rule;
    }
    agg["count"] = count();
    agg["failures"] = failures.size();
    agg["percentage"] = percentage;
    agg["tokens_estimated"] = tokens_estimated;
    j["aggregate"] = std::move(agg);
    json per = json::object();
    for (const auto& s : scores) {
        per[s.id] = s.value;
    }
    j["per_sample"] = std::move(per);
    json fails = json::array();
    for (const auto& f : failures) {
        fails.push_back({{"id", f.id}, {"code", f.code}, {"message", f.message}});
    }
    j["failures"] = std::move(fails);
    return j;
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        r.metric = j.at("metric").get<std::string>();
        r.dataset = j.value("dataset", std::string{});
        r.subject = j.value("subject", std::string{});
        r.digests = j.value("digests", json::object());
        const auto& agg = j.at("aggregate");
        r.mean = agg.at("mean").get<double>();
        if (agg.contains("median") && !agg.at("median").is_null()) {
            r.median = agg.at("median").get<double>();
        }
        r.median_rule = agg.value("median_rule", std::string{});
        r.percentage = agg.value("percentage", false);
        r.tokens_estimated = agg.value("tokens_estimated", false);
        for (const auto& [id, v] : j.at("per_sample").items()) {
            r.scores.push_back({id, v.get<double>()});
        }
        for (const auto& f : j.value("failures", json::array())) {
            r.failures.push_back({f.at("id").get<std::string>(), f.value("code", std::string{}),
                                  f.value("message", std::string{})});
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("bad eval report: ") + e.what());
    }
    return r;
}

const std::set<std::string>& default_stopwords() {
    static const std::set<std::string> kStopwords = {
        "a",     "about", "after", "also",  "an",    "and",   "are",   "as",    "at",     "be",
        "because", "before", "but", "by",   "during", "for",  "from",  "he",    "her",    "here",
        "his",   "how",   "however", "i",   "if",    "in",    "is",    "it",    "its",    "my",
        "no",    "not",   "of",    "on",    "or",    "our",   "she",   "so",    "that",   "the",
        "their", "then",  "there", "these", "they",  "this",  "those", "to",    "was",    "we",
        "were",  "what",  "when",  "where", "which", "while", "who",   "why",   "with",   "yes",
        "you",   "your",
    };
    return kStopwords;
}

std::set<std::string> extract_entities_heuristic(std::string_view text, const std::set<std::string>& stopwords) {
    std::set<std::string> out;
    std::vector<std::string_view> run;
    for (auto raw : split_whitespace(text)) {
        auto token = strip_punct(raw);
        if (entity_token(token)) {
            run.push_back(token);
            continue;
        }
        finish_run(run, stopwords, out);
        run.clear();
    }
    finish_run(run, stopwords, out);
    return out;
}

HeuristicEntityExtractor::HeuristicEntityExtractor(std::set<std::string> stopwords)
    : stopwords_(std::move(stopwords)) {}

std::set<std::string> HeuristicEntityExtractor::extract(std::string_view text) const {
    return extract_entities_heuristic(text, stopwords_);
}

json HeuristicEntityExtractor::spec() const {
    std::string joined;
    for (const auto& w : stopwords_) {
        joined += w;
        joined.push_back('\n');
    }
    return json{{"kind", "heuristic"}, {"stopwords_sha256", sha256_hex(joined)}};
}

LlmEntityExtractor::LlmEntityExtractor(const LlmGateway& gateway, PromptTemplate extraction_template,
                                       GenerationConfig config)
    : gateway_(gateway), template_(std::move(extraction_template)), config_(std::move(config)) {
    auto names = template_.placeholders();
    if (names.size() != 1 || names.front() != "text") {
        throw ConfigError("entity extraction template must have exactly one {text} placeholder");
    }
}

std::set<std::string> LlmEntityExtractor::extract(std::string_view text) const {
    Sample s;
    s.id = "entity-extraction";
    s.input_fields["text"] = std::string(text);
    auto record = gateway_.generate(render(template_, s), config_, s.id);
    std::set<std::string> out;
    auto add = [&](std::string_view e) {
        auto t = trim(e);
        while (!t.empty() && (t.front() == '-' || t.front() == '*')) {
            t = trim(t.substr(1));
        }
        if (!t.empty()) {
            out.insert(lowercase(t));
        }
    };
    try {
        auto doc = json::parse(repair_json(record.raw_output));
        if (doc.is_array()) {
            for (const auto& e : doc) {
                if (e.is_string()) {
                    add(e.get<std::string>());
                }
            }
            return out;
        }
    } catch (const json::exception&) {
    }
    std::istringstream lines(record.raw_output);
    for (std::string line; std::getline(lines, line);) {
        add(line);
    }
    return out;
}

json LlmEntityExtractor::spec() const {
    return json{{"kind", "llm"}, {"model", gateway_.endpoint().model}, {"template", template_digest(template_)},
                {"config", config_.to_json()}};
}

EvalReport entity_density(std::span<const DensityPair> pairs, const EntityExtractor& extractor) {
    EvalReport report;
    report.metric = "entity_density";
    report.digests["extractor"] = extractor.spec();
    for (const auto& p : pairs) {
        auto tokens = split_whitespace(p.summary).size();
        if (tokens == 0) {
            report.failures.push_back({p.id, "EmptySummaryError", "summary has no tokens"});
            continue;
        }
        auto summary_entities = extractor.extract(p.summary);
        auto document_entities = extractor.extract(p.document);
        std::vector<std::string> shared;
        std::set_intersection(summary_entities.begin(), summary_entities.end(), document_entities.begin(),
                              document_entities.end(), std::back_inserter(shared));
        report.scores.push_back({p.id, static_cast<double>(shared.size()) / static_cast<double>(tokens)});
    }
    finalize(report);
    return report;
}

EvalReport entity_density(const std::vector<std::string>& summaries, const std::vector<std::string>& documents,
                          const EntityExtractor& extractor) {
    if (summaries.size() != documents.size()) {
        throw AlignmentError("summaries and documents differ in length");
    }
    std::vector<DensityPair> pairs;
    pairs.reserve(summaries.size());
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        pairs.push_back({std::to_string(i), summaries[i], documents[i]});
    }
    return entity_density(pairs, extractor);
}

EvalReport accuracy(std::span<const Prediction> predictions, const std::map<std::string, Label>& gold) {
    EvalReport report;
    report.metric = "accuracy";
    report.percentage = true;
    for (const auto& p : predictions) {
        auto it = gold.find(p.id);
        if (it == gold.end()) {
            throw MissingGoldError("no gold label for '" + p.id + "'");
        }
        double score = 0.0;
        if (!p.raw_label) {
            report.failures.push_back({p.id, "ParseError", "prediction could not be parsed"});
        } else {
            try {
                score = normalize_label(*p.raw_label, it->second.kind) == it->second ? 1.0 : 0.0;
            } catch (const NormalizationError& e) {
                report.failures.push_back({p.id, e.code(), e.what()});
            }
        }
        report.scores.push_back({p.id, score});
    }
    finalize(report);
    return report;
}

PromptTemplate without_chat_history(const PromptTemplate& judge_template) {
    static constexpr std::string_view kBlock = "[Chat History]\n{chat_history}\n***\n";
    PromptTemplate t = judge_template;
    auto at = t.user_text.find(kBlock);
    if (at != std::string::npos) {
        t.user_text.erase(at, kBlock.size());
    }
    return t;
}

EvalReport hhh_mt(const LlmGateway& judge, const PromptTemplate& judge_template, std::span<const JudgeTurn> turns,
                  const JudgeOptions& options) {
    bool single_turn = options.single_turn.value_or(
        std::all_of(turns.begin(), turns.end(), [](const JudgeTurn& t) { return t.chat_history.empty(); }));
    auto tmpl = single_turn ? without_chat_history(judge_template) : judge_template;

    std::vector<BatchItem> items;
    items.reserve(turns.size());
    for (const auto& turn : turns) {
        Sample s;
        s.id = turn.id;
        s.input_fields["chat_history"] = turn.chat_history;
        s.input_fields["query"] = turn.query;
        s.input_fields["response"] = turn.response;
        items.push_back({turn.id, render(tmpl, s, options.render)});
    }
    auto records = judge.generate_batch(items, judge_config(tmpl), options.parallelism);

    EvalReport report;
    report.metric = "hhh_mt";
    report.digests["judge_template"] = template_digest(tmpl);
    report.digests["judge_model"] = judge.endpoint().model;
    report.digests["single_turn"] = single_turn;
    for (const auto& r : records) {
        report.tokens_estimated = report.tokens_estimated || r.tokens_estimated;
        if (!r.ok) {
            report.failures.push_back({r.sample_id, r.error_code, r.error_message});
            continue;
        }
        try {
            report.scores.push_back({r.sample_id, static_cast<double>(parse_rating(r.raw_output, 0, 6))});
        } catch (const RatingParseError& e) {
            report.failures.push_back({r.sample_id, e.code(), e.what()});
        }
    }
    finalize(report);
    return report;
}

EvalReport complexity(const LlmGateway& judge, const PromptTemplate& judge_template,
                      std::span<const QuestionAnswer> qa_items, int parallelism) {
    std::vector<BatchItem> items;
    items.reserve(qa_items.size());
    for (const auto& qa : qa_items) {
        Sample s;
        s.id = qa.id;
        s.input_fields["question"] = qa.question;
        s.input_fields["answer"] = qa.answer;
        items.push_back({qa.id, render(judge_template, s)});
    }
    auto records = judge.generate_batch(items, judge_config(judge_template), parallelism);

    EvalReport report;
    report.metric = "complexity";
    report.median_rule = "lower";
    report.digests["judge_template"] = template_digest(judge_template);
    report.digests["judge_model"] = judge.endpoint().model;
    std::vector<double> values;
    for (const auto& r : records) {
        report.tokens_estimated = report.tokens_estimated || r.tokens_estimated;
        if (!r.ok) {
            report.failures.push_back({r.sample_id, r.error_code, r.error_message});
            continue;
        }
        try {
            auto score = static_cast<double>(parse_difficulty(r.raw_output));
            report.scores.push_back({r.sample_id, score});
            values.push_back(score);
        } catch (const RatingParseError& e) {
            report.failures.push_back({r.sample_id, e.code(), e.what()});
        }
    }
    finalize(report);
    report.median = lower_median(values);
    return report;
}

json HumanRatingSummary::to_json() const {
    json j;
    json per = json::object();
    for (const auto& [model, raters] : per_rater) {
        json m = json::object();
        for (const auto& [rater, value] : raters) {
            m[rater] = value;
        }
        per[model] = std::move(m);
    }
    j["per_rater"] = std::move(per);
    json all = json::object();
    for (const auto& [model, value] : overall) {
        all[model] = value;
    }
    j["overall"] = std::move(all);
    return j;
}

HumanRatingSummary aggregate_human_ratings(std::span<const RatedSession> sessions) {
    struct Tally {
        long long sum = 0;
        long long count = 0;
    };
    std::map<std::string, std::map<std::string, Tally>> tallies;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& session : sessions) {
        for (const auto& r : session.ratings) {
            if (r.value < kHumanRatingMin || r.value > kHumanRatingMax) {
                throw RangeError("rating " + std::to_string(r.value) + " outside [1,5]");
            }
            if (!seen.emplace(session.rater_id, r.sample_id, r.model).second) {
                throw DuplicateRatingError("rater '" + session.rater_id + "' rated sample '" + r.sample_id +
                                           "' of model '" + r.model + "' twice");
            }
            auto& t = tallies[r.model][session.rater_id];
            t.sum += r.value;
            t.count += 1;
        }
    }
    HumanRatingSummary summary;
    for (const auto& [model, raters] : tallies) {
        std::vector<double> means;
        for (const auto& [rater, t] : raters) {
            double m = static_cast<double>(t.sum) / static_cast<double>(t.count);
            summary.per_rater[model][rater] = m;
            means.push_back(m);
        }
        // Summation order must not depend on rater ids.
        std::sort(means.begin(), means.end());
        summary.overall[model] = mean_of(means);
    }
    return summary;
}

std::string render_report_table(std::span<const EvalReport> reports) {
    std::vector<std::string> metrics;
    for (const auto& r : reports) {
        if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) {
            metrics.push_back(r.metric);
        }
    }
    std::ostringstream out;
    for (const auto& metric : metrics) {
        std::vector<std::string> datasets;
        std::vector<std::string> subjects;
        std::map<std::pair<std::string, std::string>, const EvalReport*> cells;
        for (const auto& r : reports) {
            if (r.metric != metric) {
                continue;
            }
            if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
                datasets.push_back(r.dataset);
            }
            if (std::find(subjects.begin(), subjects.end(), r.subject) == subjects.end()) {
                subjects.push_back(r.subject);
            }
            cells[{r.dataset, r.subject}] = &r;
        }
        int decimals = metric == "entity_density" ? 4 : 2;
        out << "### " << metric << "\n\n| Dataset |";
        for (const auto& s : subjects) {
            out << ' ' << s << " |";
        }
        out << "\n|---|";
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            out << "---|";
        }
        out << '\n';
        for (const auto& d : datasets) {
            out << "| " << d << " |";
            for (const auto& s : subjects) {
                auto it = cells.find({d, s});
                if (it == cells.end()) {
                    out << " - |";
                    continue;
                }
                const auto& r = *it->second;
                out << ' ' << format_fixed(r.mean, decimals);
                if (r.median) {
                    out << " (median " << format_fixed(*r.median, 1) << ')';
                }
                if (!r.failures.empty()) {
                    out << " [" << r.failures.size() << " failed]";
                }
                out << " |";
            }
            out << '\n';
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace distill
