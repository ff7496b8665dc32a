#include "distill/errors.hpp"
#include "distill/evaluation.hpp"
#include "distill/prompt_library.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace distill;

namespace {

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

Sample choice_sample() {
    Sample s;
    s.id = "q1";
    s.input_fields["question"] = std::string(
        "John's RV needs electricity so that he can cook lunch.  Where would he go to plug in?");
    s.input_fields["answer_choices"] =
        std::vector<std::string>{"toy store", "basement", "school", "rest area", "building"};
    return s;
}

}  // namespace

TEST_CASE("builtin library holds every task's templates") {
    auto lib = builtin_library();
    for (const char* id : {"summarization.cod", "summarization.vanilla", "conversation.vanilla", "nli.cot",
                           "nli.vanilla", "math.cot", "math.vanilla", "aquarat.cot", "aquarat.vanilla", "qa.cot",
                           "qa.vanilla", "judge.hhh_mt", "judge.complexity"}) {
        CAPTURE(id);
        CHECK(lib.find(id) != nullptr);
    }
    CHECK(lib.get("summarization.cod").max_new_tokens == 1024);
    CHECK(lib.get("summarization.vanilla").max_new_tokens == 256);
    CHECK(lib.get("aquarat.vanilla").label_kind == LabelKind::choice_letter);
    CHECK(lib.get("math.vanilla").label_kind == LabelKind::integer);
    CHECK(lib.lookup(TaskKind::nli, PromptStyle::vanilla).id == "nli.vanilla");
    CHECK(lib.variants(TaskKind::conversation).empty());
    auto math = lib.variants(TaskKind::math);
    REQUIRE(math.size() == 2);
    CHECK(math[0].id == "math.cot");
    for (const auto& t : lib.templates()) {
        CHECK(t.max_new_tokens <= 1024);
    }
}

TEST_CASE("golden: NLI prompts render to the exact published text") {
    auto lib = builtin_library();
    Sample s;
    s.id = "n1";
    s.input_fields["premise"] = std::string("A man plays guitar.");
    s.input_fields["hypothesis"] = std::string("A person makes music.");

    auto vanilla = render(lib.get("nli.vanilla"), s);
    REQUIRE(vanilla.messages.size() == 2);
    CHECK(vanilla.messages[0].role == "system");
    CHECK(vanilla.messages[0].content ==
          "You are a helpful assistant. Your output should only be one of the three labels: 'entailment', "
          "'contradiction', or 'neutral'.");
    CHECK(vanilla.messages[1].role == "user");
    CHECK(vanilla.messages[1].content ==
          "Given the following two texts, your task is to determine the logical relationship between them. The "
          "first text is the 'premise' and the second text is the 'hypothesis'. The relationship should be "
          "labeled as one of the following: 'entailment' if the premise entails the hypothesis, 'contradiction' "
          "if the premise contradicts the hypothesis,\nor 'neutral' if the premise neither entails nor "
          "contradicts the hypothesis.\n\nPremise: A man plays guitar.\nHypothesis: A person makes music.");

    auto cot = render(lib.get("nli.cot"), s);
    CHECK(cot.messages[0].content ==
          "You are a helpful assistant. Write out in a step by step manner your reasoning about the answer using "
          "no more than 80 words. Based on the reasoning, produce the final answer. Your response should be in "
          "JSON format without using any backticks. The JSON is a dictionary whose keys are 'reason' and "
          "'answer_choice'.");
    CHECK(cot.messages[1].content == vanilla.messages[1].content);
}

TEST_CASE("golden: multiple-choice formatting matches the published example") {
    auto lib = builtin_library();
    auto p = render(lib.get("qa.vanilla"), choice_sample());
    CHECK(p.messages[0].content ==
          "You are a helpful assistant. Your output should only be one of the five choices: 'A', 'B', 'C', 'D', "
          "or 'E'.");
    CHECK(p.messages[1].content ==
          "Answer the following multiple-choice question.\n\nQuestion: John's RV needs electricity so that he can "
          "cook lunch.  Where would he go to plug in?\n\nAnswer Choices:\n(A) toy store\n(B) basement\n(C) "
          "school\n(D) rest area\n(E) building");
}

TEST_CASE("golden: key sentences of the long prompts") {
    auto lib = builtin_library();
    const auto& cod = lib.get("summarization.cod").system_text;
    CHECK(contains(cod, "You will generate increasingly concise, entity-dense summaries of the given article."));
    CHECK(contains(cod, "Repeat the following 2 steps 4 times."));
    CHECK(contains(cod, "\"Missing_Entities\" and \"Denser_Summary\""));
    CHECK(contains(cod, "Please ensure that each dense summary should be no more than 80 words."));
    CHECK(lib.get("summarization.vanilla").system_text ==
          "You will generate concise, entity-dense summary of the given article. Only generate the summary text. "
          "Do not exceed 80 words.");
    CHECK(contains(lib.get("conversation.vanilla").system_text,
                   "The AI assistant will never ask personal information."));
    CHECK(contains(lib.get("math.vanilla").system_text,
                   "If the answer is negative, include the negative sign; otherwise, do not use any sign."));
    CHECK(contains(lib.get("math.cot").system_text, "The JSON is a dictionary whose keys are 'reason' and 'answer'."));

    const auto& judge = lib.get("judge.hhh_mt").user_text;
    CHECK(contains(judge, "[BEGIN DATA]\n***\n[Chat History]\n{chat_history}\n***\n[Query]: {query}"));
    CHECK(contains(judge, "\"6\": \"Highly helpful - "));
    CHECK(contains(judge, "At the end, repeat just the selected choice again by itself on a new line."));

    const auto& cx = lib.get("judge.complexity").user_text;
    CHECK(contains(cx, "assign a difficulty score between 1 (easiest) and 5 (most difficult)"));
    CHECK(cx.size() > 30);
    CHECK(cx.substr(cx.size() - 26) == "\nOverall Difficulty Score:");
    CHECK(contains(cx, "Question: {question}\nAnswer: {answer}"));
}

TEST_CASE("conversation transcript rendering") {
    auto lib = builtin_library();
    Sample s;
    s.id = "c1";
    s.input_fields["chat_history"] = std::vector<std::string>{"Hi there", "Hello! How can I help?"};
    s.input_fields["query"] = std::string("Tell me a joke");
    auto p = render(lib.get("conversation.vanilla"), s);
    CHECK(p.messages[1].content == "[|Human|] Hi there\n[|AI|] Hello! How can I help?\n[|Human|] Tell me a joke\n[|AI|]");

    s.input_fields["chat_history"] = std::vector<std::string>{};
    CHECK(render(lib.get("conversation.vanilla"), s).messages[1].content == "[|Human|] Tell me a joke\n[|AI|]");
}

TEST_CASE("judge prompt without chat history") {
    auto lib = builtin_library();
    auto single = without_chat_history(lib.get("judge.hhh_mt"));
    CHECK_FALSE(contains(single.user_text, "Chat History"));
    CHECK_FALSE(contains(single.user_text, "{chat_history}"));
    CHECK(contains(single.user_text, "[BEGIN DATA]\n***\n[Query]: {query}"));
}

TEST_CASE("render substitutes once and reports missing fields") {
    PromptTemplate t;
    t.id = "t";
    t.task = TaskKind::math;
    t.user_text = "Q: {question} / {question}";
    Sample s;
    s.id = "s9";
    s.input_fields["question"] = std::string("what is {answer_choices}?");
    auto p = render(t, s);
    REQUIRE(p.messages.size() == 1);  // no system message for empty system text
    CHECK(p.messages[0].content == "Q: what is {answer_choices}? / what is {answer_choices}?");

    s.input_fields.clear();
    try {
        render(t, s);
        FAIL("expected MissingFieldError");
    } catch (const MissingFieldError& e) {
        CHECK(e.placeholder() == "question");
        CHECK(e.sample_id() == "s9");
    }
}

TEST_CASE("library validation") {
    auto lib = builtin_library();
    PromptTemplate dup = lib.get("nli.cot");
    CHECK_THROWS_AS(lib.add(dup), DuplicateTemplateError);
    CHECK_THROWS_AS(lib.get("nope"), UnknownTemplateError);

    PromptTemplate bad;
    bad.id = "nli.bad";
    bad.task = TaskKind::nli;
    bad.user_text = "{premise} {article}";
    CHECK_THROWS_AS(lib.add(bad), ConfigError);

    bad.user_text = "{premise}";
    bad.system_text = "sys {premise}";
    CHECK_THROWS_AS(lib.add(bad), ConfigError);

    PromptTemplate summ;
    summ.id = "summ.x";
    summ.task = TaskKind::summarization;
    summ.style = PromptStyle::elaborate;
    summ.user_text = "{article}";
    summ.max_new_tokens = 512;
    CHECK_THROWS_AS(lib.add(summ), ConfigError);
    summ.max_new_tokens = 1024;
    CHECK_NOTHROW(lib.add(summ));
}

TEST_CASE("manifest files on disk") {
    testing::TempDir dir;
    distill::write_file_atomic(dir / "sys.txt", "Be brief.");
    distill::write_file_atomic(dir / "user.txt", "Premise: {premise}\nHypothesis: {hypothesis}");
    distill::write_file_atomic(dir / "manifest.json",
                               R"([{"id": "nli.short", "version": 3, "task": "nli", "style": "elaborate",
                                    "expected_output": "cot_json_choice", "max_new_tokens": 128,
                                    "system_file": "sys.txt", "user_file": "user.txt"}])");
    PromptLibrary lib;
    load_manifest_file(lib, dir / "manifest.json");
    const auto& t = lib.get("nli.short");
    CHECK(t.version == 3);
    CHECK(t.label_kind == LabelKind::nli_class);
    CHECK(t.placeholders() == std::vector<std::string>{"premise", "hypothesis"});
    auto p = render(t, testing::nli_sample(1));
    CHECK(p.template_version == 3);
    CHECK(p.digest() == render(t, testing::nli_sample(1)).digest());
    CHECK(p.digest() != render(t, testing::nli_sample(2)).digest());
}
