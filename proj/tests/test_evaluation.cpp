#include "distill/errors.hpp"
#include "distill/evaluation.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace distill;

namespace {

// Answers each request with a function of the last user message.
class FnBackend : public ChatBackend {
public:
    explicit FnBackend(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
    CompletionResponse complete(const CompletionRequest& request, const std::string&) override {
        return {fn_(request.messages.back().content), 100, 10};
    }

private:
    std::function<std::string(const std::string&)> fn_;
};

LlmGateway judge_with(std::function<std::string(const std::string&)> fn) {
    return LlmGateway(ModelEndpoint{"judge", "mock://inline", "", Money{}, Money{}}, std::make_shared<FnBackend>(fn));
}

const PromptTemplate& tmpl(const PromptLibrary& lib, const std::string& id) {
    const auto* t = lib.find(id);
    REQUIRE(t != nullptr);
    return *t;
}

std::set<std::string> S(std::initializer_list<const char*> xs) {
    std::set<std::string> out;
    for (auto x : xs) {
        out.insert(x);
    }
    return out;
}

// Extractor with a fixed answer per text, for exact density arithmetic.
class TableExtractor : public EntityExtractor {
public:
    std::map<std::string, std::set<std::string>> table;
    std::set<std::string> extract(std::string_view text) const override {
        auto it = table.find(std::string(text));
        return it == table.end() ? std::set<std::string>{} : it->second;
    }
    json spec() const override { return json{{"kind", "table"}}; }
};

}  // namespace

TEST_CASE("heuristic entity extraction examples") {
    const auto& sw = default_stopwords();
    CHECK(extract_entities_heuristic("Tim Cook visited Paris in 2024.", sw) == S({"tim cook", "paris", "2024"}));
    CHECK(extract_entities_heuristic("the quick brown fox", sw).empty());
    CHECK(extract_entities_heuristic("The President spoke.", {"the"}) == S({"president"}));
    CHECK(extract_entities_heuristic("", sw).empty());
    CHECK(extract_entities_heuristic("The And Of", sw).empty());
    CHECK(extract_entities_heuristic("(Reuters) \"Bank of England\"", sw) == S({"reuters bank", "england"}));
    CHECK(extract_entities_heuristic("Bank Of England", sw) == S({"bank of england"}));
}

TEST_CASE("heuristic extraction matches the brute-force oracle") {
    std::mt19937 rng(20240501);
    const auto& sw = default_stopwords();
    for (int i = 0; i < 500; ++i) {
        auto text = oracle::random_text(rng, 30);
        INFO(text);
        CHECK(extract_entities_heuristic(text, sw) == oracle::entities(text, sw));
    }
}

TEST_CASE("entity density") {
    TableExtractor ex;
    std::string summary = "one two three four five six seven eight nine ten";
    ex.table[summary] = S({"a", "b", "d"});
    ex.table["doc"] = S({"a", "b", "c"});
    ex.table["eight token summary without any entities at all"] = {};
    std::vector<DensityPair> pairs{{"s1", summary, "doc"},
                                   {"s2", "eight token summary without any entities at all", "doc"},
                                   {"s3", "   ", "doc"}};
    auto r = entity_density(pairs, ex);
    REQUIRE(r.count() == 2);
    CHECK(r.scores[0].value == doctest::Approx(0.2));
    CHECK(r.scores[1].value == doctest::Approx(0.0));
    CHECK(r.mean == doctest::Approx(0.1));
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].id == "s3");
    CHECK(r.failures[0].code == "EmptySummaryError");
    CHECK(r.digests["extractor"]["kind"] == "table");

    CHECK_THROWS_AS(entity_density(std::vector<std::string>{"a"}, std::vector<std::string>{}, ex), AlignmentError);
}

TEST_CASE("entity density matches the oracle on random corpora") {
    std::mt19937 rng(7);
    HeuristicEntityExtractor ex;
    for (int corpus = 0; corpus < 10; ++corpus) {
        std::vector<std::string> summaries;
        std::vector<std::string> documents;
        int docs = 1 + corpus * 2;
        for (int i = 0; i < docs; ++i) {
            documents.push_back(oracle::random_text(rng, 50));
            summaries.push_back(oracle::random_text(rng, 20));
        }
        auto r = entity_density(summaries, documents, ex);
        REQUIRE(r.count() == summaries.size());
        double sum = 0;
        for (std::size_t i = 0; i < summaries.size(); ++i) {
            double expected = oracle::density(summaries[i], documents[i], default_stopwords());
            CHECK(r.scores[i].value == doctest::Approx(expected).epsilon(1e-12));
            sum += expected;
        }
        CHECK(r.mean == doctest::Approx(sum / static_cast<double>(summaries.size())));
    }
}

TEST_CASE("density is scale-free in document length") {
    HeuristicEntityExtractor ex;
    std::string summary = "Tim Cook met officials in Paris during 2024 talks";
    std::string doc = "Tim Cook flew to Paris. The talks in 2024 went well.";
    auto base = entity_density(std::vector<std::string>{summary}, std::vector<std::string>{doc}, ex).mean;
    auto longer_doc = entity_density(std::vector<std::string>{summary},
                                     std::vector<std::string>{doc + " and then it rained for a while"}, ex)
                          .mean;
    auto longer_summary = entity_density(std::vector<std::string>{summary + " and so on"},
                                         std::vector<std::string>{doc}, ex)
                              .mean;
    CHECK(base == doctest::Approx(3.0 / 9.0));
    CHECK(longer_doc == base);
    CHECK(longer_summary < base);
}

TEST_CASE("accuracy") {
    std::map<std::string, Label> gold{{"1", Label{LabelKind::choice_letter, std::string("A")}},
                                      {"2", Label{LabelKind::choice_letter, std::string("B")}},
                                      {"3", Label{LabelKind::choice_letter, std::string("C")}},
                                      {"4", Label{LabelKind::choice_letter, std::string("D")}}};
    std::vector<Prediction> p{{"1", "(a)"}, {"2", "B"}, {"3", "c."}, {"4", "A"}};
    auto r = accuracy(p, gold);
    CHECK(r.mean == doctest::Approx(75.0));
    CHECK(r.percentage);
    CHECK(r.failures.empty());

    std::reverse(p.begin(), p.end());
    CHECK(accuracy(p, gold).mean == doctest::Approx(75.0));

    std::vector<Prediction> with_failure{{"1", "A"}, {"2", std::nullopt}, {"3", "Z"}};
    auto f = accuracy(with_failure, gold);
    CHECK(f.count() == 3);
    CHECK(f.mean == doctest::Approx(100.0 / 3));
    CHECK(f.failures.size() == 2);

    std::vector<Prediction> unknown{{"9", "A"}};
    CHECK_THROWS_AS(accuracy(unknown, gold), MissingGoldError);

    std::map<std::string, Label> nli{{"x", Label{LabelKind::nli_class, std::string("neutral")}}};
    std::vector<Prediction> np{{"x", " Neutral "}};
    CHECK(accuracy(np, nli).mean == doctest::Approx(100.0));
}

TEST_CASE("hhh-mt judge aggregation") {
    auto lib = builtin_library();
    const auto& t = tmpl(lib, "judge.hhh_mt");
    std::vector<JudgeTurn> turns;
    for (int i = 0; i < 10; ++i) {
        turns.push_back({"turn-" + std::to_string(i), {"hi", "hello"}, "question " + std::to_string(i),
                         "RESPONSE-" + std::to_string(i)});
    }
    auto judge = judge_with([](const std::string& user) {
        auto pos = user.find("RESPONSE-");
        int i = std::stoi(user.substr(pos + 9));
        if (i == 9) {
            return std::string("I cannot decide.");
        }
        int rating = i % 3 + 4;  // 4, 5, 6
        return "The answer is detailed.\n" + std::to_string(rating) + "\n" + std::to_string(rating);
    });
    auto r = hhh_mt(judge, t, turns);
    CHECK(r.count() == 9);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].id == "turn-9");
    CHECK(r.failures[0].code == "RatingParseError");
    CHECK(r.mean == doctest::Approx(5.0));
    CHECK(r.digests["single_turn"] == false);

    // Deterministic across runs and parallelism.
    JudgeOptions serial;
    serial.parallelism = 1;
    CHECK(hhh_mt(judge, t, turns, serial).to_json() == r.to_json());

    // Single-turn data drops the chat-history block from the prompt.
    std::vector<std::string> seen;
    auto spy = judge_with([&seen](const std::string& user) {
        seen.push_back(user);
        return std::string("5");
    });
    std::vector<JudgeTurn> single{{"a", {}, "q", "r"}};
    JudgeOptions one;
    one.parallelism = 1;
    auto s = hhh_mt(spy, t, single, one);
    CHECK(s.mean == doctest::Approx(5.0));
    CHECK(s.digests["single_turn"] == true);
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].find("[Chat History]") == std::string::npos);
    hhh_mt(spy, t, turns, one);
    CHECK(seen[1].find("[Chat History]") != std::string::npos);
}

TEST_CASE("complexity mean and lower median") {
    auto lib = builtin_library();
    const auto& t = tmpl(lib, "judge.complexity");
    auto run = [&](std::vector<int> scores) {
        std::vector<QuestionAnswer> items;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            items.push_back({"q" + std::to_string(i), "QUESTION-" + std::to_string(i) + "?", "answer"});
        }
        auto judge = judge_with([scores](const std::string& user) {
            auto pos = user.find("QUESTION-");
            auto i = std::stoul(user.substr(pos + 9));
            return "Reasoning...\nOverall Difficulty Score: " + std::to_string(scores[i]);
        });
        return complexity(judge, t, items);
    };
    auto a = run({1, 2, 3});
    CHECK(a.mean == doctest::Approx(2.0));
    CHECK(a.median == doctest::Approx(2.0));
    auto b = run({1, 1, 5, 5});
    CHECK(b.mean == doctest::Approx(3.0));
    CHECK(b.median == doctest::Approx(1.0));
    CHECK(b.median_rule == "lower");
    CHECK(lower_median({4, 1, 3, 2}) == 2.0);
    CHECK(lower_median({7}) == 7.0);
}

TEST_CASE("human rating aggregation") {
    // Rater means per model, built from 100 integer ratings each.
    const std::vector<std::string> models{"405B", "8B", "8B-distilled", "70B", "70B-distilled"};
    const double means[3][5] = {{3.95, 3.83, 3.90, 4.01, 3.98},
                                {3.27, 3.66, 3.74, 3.82, 3.63},
                                {3.90, 3.86, 3.98, 4.01, 3.98}};
    std::vector<RatedSession> sessions;
    for (int r = 0; r < 3; ++r) {
        RatedSession s{"sess-" + std::to_string(r), "rater-" + std::to_string(r), {}};
        for (std::size_t m = 0; m < models.size(); ++m) {
            int total = static_cast<int>(std::lround(means[r][m] * 100));
            // Start every rating at 1, then raise ratings one at a time to reach the total.
            std::vector<int> values(100, 1);
            int sum = 100;
            for (std::size_t i = 0; sum < total; i = (i + 1) % values.size()) {
                if (values[i] < 5) {
                    ++values[i];
                    ++sum;
                }
            }
            for (int k = 0; k < 100; ++k) {
                s.ratings.push_back({"s" + std::to_string(k), models[m], values[static_cast<std::size_t>(k)]});
            }
            REQUIRE(sum == total);
        }
        sessions.push_back(s);
    }
    auto summary = aggregate_human_ratings(sessions);
    const double published[5] = {3.71, 3.78, 3.87, 3.95, 3.86};
    for (std::size_t m = 0; m < models.size(); ++m) {
        double oracle = (means[0][m] + means[1][m] + means[2][m]) / 3.0;
        CHECK(summary.overall.at(models[m]) == doctest::Approx(oracle).epsilon(1e-12));
        CHECK(std::fabs(summary.overall.at(models[m]) - published[m]) <= 0.005);
        CHECK(summary.per_rater.at(models[m]).at("rater-1") == doctest::Approx(means[1][m]));
    }

    // Relabeling raters changes nothing.
    auto relabeled = sessions;
    std::swap(relabeled[0].rater_id, relabeled[2].rater_id);
    relabeled[1].rater_id = "zz";
    auto again = aggregate_human_ratings(relabeled);
    for (const auto& m : models) {
        CHECK(again.overall.at(m) == summary.overall.at(m));
    }

    std::vector<RatedSession> single{{"s", "r", {{"a", "m", 5}, {"b", "m", 5}}}};
    auto one = aggregate_human_ratings(single);
    CHECK(one.per_rater.at("m").at("r") == 5.0);
    CHECK(one.overall.at("m") == 5.0);
    std::vector<RatedSession> zero{{"s", "r", {{"a", "m", 0}}}};
    CHECK_THROWS_AS(aggregate_human_ratings(zero), RangeError);
    std::vector<RatedSession> twice{{"s", "r", {{"a", "m", 3}}}, {"s2", "r", {{"a", "m", 4}}}};
    CHECK_THROWS_AS(aggregate_human_ratings(twice), DuplicateRatingError);
    CHECK(summary.to_json().contains("overall"));
}

TEST_CASE("report round trip and table") {
    EvalReport r;
    r.metric = "accuracy";
    r.dataset = "anli";
    r.subject = "student-8b";
    r.percentage = true;
    r.scores = {{"a", 1}, {"b", 0}};
    r.mean = 50.0;
    r.failures = {{"c", "ParseError", "x"}};
    auto back = EvalReport::from_json(r.to_json());
    CHECK(back.mean == doctest::Approx(50.0));
    CHECK(back.count() == 2);
    CHECK(back.failures.size() == 1);
    CHECK(back.subject == "student-8b");
    std::vector<EvalReport> rs{r};
    auto table = render_report_table(rs);
    CHECK(table.find("anli") != std::string::npos);
    CHECK(table.find("student-8b") != std::string::npos);
    CHECK(table.find("50.00") != std::string::npos);
    CHECK_THROWS_AS(EvalReport::from_json(json{{"metric", 1}}), SchemaError);
}
