#include "distill/core_model.hpp"
#include "distill/errors.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace distill;

namespace {

struct IntegerCase {
    const char* raw;
    std::optional<std::int64_t> expected;  // nullopt: must be rejected
};

// Enumerated by hand from the normalization rules, not from the implementation.
const IntegerCase kIntegerTable[] = {
    {"-42.", -42},
    {"42", 42},
    {" 7 ", 7},
    {"+15", 15},
    {"1,000", 1000},
    {"12,345,678", 12345678},
    {"0", 0},
    {"-0", 0},
    {"007", 7},
    {"3.", 3},
    {"\t-1,024.\n", -1024},
    {"9223372036854775807", INT64_MAX},
    {"3.5", std::nullopt},
    {"abc", std::nullopt},
    {"12a", std::nullopt},
    {"1,00", std::nullopt},
    {"--5", std::nullopt},
    {"", std::nullopt},
    {".", std::nullopt},
    {"$5", std::nullopt},
};

Sample make(const std::string& id, std::map<std::string, FieldValue> fields, std::optional<Label> gold = {}) {
    Sample s;
    s.id = id;
    s.input_fields = std::move(fields);
    s.gold_label = std::move(gold);
    return s;
}

}  // namespace

TEST_CASE("integer normalization table") {
    static_assert(std::size(kIntegerTable) == 20);
    for (const auto& c : kIntegerTable) {
        CAPTURE(c.raw);
        if (c.expected) {
            auto label = normalize_label(c.raw, LabelKind::integer);
            CHECK(label.kind == LabelKind::integer);
            CHECK(std::get<std::int64_t>(label.value) == *c.expected);
        } else {
            CHECK_THROWS_AS(normalize_label(c.raw, LabelKind::integer), NormalizationError);
        }
    }
}

TEST_CASE("choice and nli normalization") {
    CHECK(normalize_label("(A)", LabelKind::choice_letter).text() == "A");
    CHECK(normalize_label(" 'c'. ", LabelKind::choice_letter).text() == "C");
    CHECK(normalize_label("\"e\"", LabelKind::choice_letter).text() == "E");
    CHECK_THROWS_AS(normalize_label("F", LabelKind::choice_letter), NormalizationError);
    CHECK_THROWS_AS(normalize_label("AB", LabelKind::choice_letter), NormalizationError);

    CHECK(normalize_label(" Entailment ", LabelKind::nli_class).text() == "entailment");
    CHECK(normalize_label("NEUTRAL", LabelKind::nli_class).text() == "neutral");
    CHECK_THROWS_AS(normalize_label("maybe", LabelKind::nli_class), NormalizationError);
    CHECK_THROWS_AS(normalize_label("   ", LabelKind::nli_class), NormalizationError);

    CHECK(normalize_label("  a summary. ", LabelKind::free_text).text() == "a summary.");
    CHECK_THROWS_AS(normalize_label(" \n", LabelKind::free_text), NormalizationError);
}

TEST_CASE("validate_dataset") {
    Dataset d;
    d.name = "x";
    d.task = TaskKind::nli;
    d.splits[Split::train] = testing::nli_samples(3);
    CHECK(validate_dataset(d).empty());

    SUBCASE("missing hypothesis is reported once, naming the sample") {
        d.splits[Split::train][1].input_fields.erase("hypothesis");
        auto v = validate_dataset(d);
        REQUIRE(v.size() == 1);
        CHECK(v[0].sample_id == "nli-1");
        CHECK(v[0].rule.find("hypothesis") != std::string::npos);
    }
    SUBCASE("duplicate ids across splits") {
        Dataset q;
        q.name = "q";
        q.task = TaskKind::qa;
        std::map<std::string, FieldValue> f{{"question", std::string("Why?")},
                                            {"answer_choices", std::vector<std::string>{"a", "b"}}};
        q.splits[Split::train] = {make("q7", f, Label{LabelKind::choice_letter, std::string("A")})};
        q.splits[Split::test] = {make("q7", f, Label{LabelKind::choice_letter, std::string("B")})};
        auto v = validate_dataset(q);
        REQUIRE_FALSE(v.empty());
        CHECK(std::any_of(v.begin(), v.end(), [](const Violation& x) {
            return x.sample_id == "q7" && x.rule.find("duplicate") != std::string::npos;
        }));
    }
    SUBCASE("label kind must fit the task and be normalized") {
        d.splits[Split::train][0].gold_label = Label{LabelKind::choice_letter, std::string("A")};
        d.splits[Split::train][2].gold_label = Label{LabelKind::nli_class, std::string("Neutral")};
        auto v = validate_dataset(d);
        CHECK(v.size() == 2);
    }
    SUBCASE("conversation history must be a list") {
        Dataset c;
        c.name = "c";
        c.task = TaskKind::conversation;
        c.splits[Split::test] = {make("c1", {{"query", std::string("hi")}, {"chat_history", std::string("x")}})};
        CHECK(validate_dataset(c).size() == 1);
    }
}

TEST_CASE("sample JSON round trip and strict keys") {
    auto s = testing::nli_sample(4);
    s.synthetic_label = Label{LabelKind::nli_class, std::string("neutral")};
    auto back = sample_from_json(to_json(s));
    CHECK(back == s);

    auto j = to_json(s);
    j["extra"] = 1;
    CHECK_THROWS_AS(sample_from_json(j), SchemaError);

    Sample m = make("m1", {{"question", std::string("2+2?")}}, Label{LabelKind::integer, std::int64_t{4}});
    auto mj = to_json(m);
    CHECK(mj["gold_label"]["value"].is_number_integer());
    CHECK(sample_from_json(mj) == m);
}

TEST_CASE("dataset files round trip with a stable digest") {
    testing::TempDir dir;
    auto d = testing::nli_dataset(4, 2, 2);
    save_dataset(dir.path(), d);
    CHECK(std::filesystem::exists(split_path(dir.path(), "toy_nli", Split::eval)));
    auto back = load_dataset(dir.path(), "toy_nli", TaskKind::nli);
    CHECK(back == d);
    CHECK(dataset_digest(back) == dataset_digest(d));

    auto changed = d;
    changed.splits[Split::test][0].id = "other";
    CHECK(dataset_digest(changed) != dataset_digest(d));
}

TEST_CASE("malformed JSONL names the line") {
    try {
        samples_from_jsonl("{\"id\":\"a\",\"input_fields\":{}}\nnot json\n", "f.jsonl");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("f.jsonl:2") != std::string::npos);
    }
}

TEST_CASE("truncate_words") {
    CHECK(truncate_words("a b  c\nd", 2) == "a b");
    CHECK(truncate_words("short text", 10) == "short text");
    CHECK(truncate_words("", 3).empty());
}
