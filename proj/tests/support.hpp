#pragma once

#include "distill/core_model.hpp"
#include "distill/digest.hpp"
#include "distill/llm_gateway.hpp"
#include "distill/prompt_library.hpp"
#include "distill/synth_pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "distill-test-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline const char* kNliClasses[] = {"entailment", "neutral", "contradiction"};

inline distill::Sample nli_sample(int i) {
    distill::Sample s;
    s.id = "nli-" + std::to_string(i);
    s.input_fields["premise"] = "Premise number " + std::to_string(i) + " says the Harbor Bridge opened in " +
                                std::to_string(1900 + i) + ".";
    s.input_fields["hypothesis"] = "Hypothesis " + std::to_string(i) + " about the bridge.";
    s.gold_label = distill::Label{distill::LabelKind::nli_class, std::string(kNliClasses[i % 3])};
    return s;
}

inline std::vector<distill::Sample> nli_samples(int n, int offset = 0) {
    std::vector<distill::Sample> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(nli_sample(offset + i));
    }
    return out;
}

inline distill::Dataset nli_dataset(int train, int eval, int test) {
    distill::Dataset d;
    d.name = "toy_nli";
    d.task = distill::TaskKind::nli;
    d.splits[distill::Split::train] = nli_samples(train);
    d.splits[distill::Split::eval] = nli_samples(eval, 1000);
    d.splits[distill::Split::test] = nli_samples(test, 2000);
    return d;
}

// The request the gateway will send for sample s under template t.
inline distill::CompletionRequest request_for(const std::string& model, const distill::PromptTemplate& t,
                                              const distill::Sample& s, const distill::GenerationConfig& config) {
    return distill::CompletionRequest{model, distill::render(t, s).messages, distill::effective_config(config, t)};
}

using CompletionFor = std::function<std::string(const distill::Sample&)>;

// Appends fixture lines answering every sample; returns the JSONL text.
inline std::string fixture_lines(const std::string& model, const distill::PromptTemplate& t,
                                 const std::vector<distill::Sample>& samples, const distill::GenerationConfig& config,
                                 const CompletionFor& completion) {
    std::string out;
    for (const auto& s : samples) {
        distill::FixtureEntry e;
        e.completion = completion(s);
        e.input_tokens = 100;
        e.output_tokens = 20;
        out += distill::fixture_line(request_for(model, t, s, config), e).dump();
        out.push_back('\n');
    }
    return out;
}

inline std::string cot_json(const std::string& reason, const std::string& answer) {
    distill::json j{{"reason", reason}, {"answer_choice", answer}};
    return j.dump();
}

}  // namespace testing
