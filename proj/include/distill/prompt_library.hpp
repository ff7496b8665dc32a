#pragma once

#include "distill/core_model.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace distill {

enum class PromptStyle { vanilla, elaborate };

std::string_view to_string(PromptStyle style);
PromptStyle parse_prompt_style(std::string_view text);

// Selects the parser applied to a completion.
enum class ExpectedOutput {
    plain_text,
    cod_json,
    cot_json_choice,
    cot_json_numeric,
    rating_lines,
    difficulty_score,
};

std::string_view to_string(ExpectedOutput kind);
ExpectedOutput parse_expected_output(std::string_view text);

struct PromptTemplate {
    std::string id;
    int version = 1;
    TaskKind task = TaskKind::nli;
    PromptStyle style = PromptStyle::vanilla;
    std::string system_text;
    std::string user_text;
    ExpectedOutput expected_output = ExpectedOutput::plain_text;
    LabelKind label_kind = LabelKind::free_text;
    int max_new_tokens = 256;

    // Placeholder names in order of first appearance.
    std::vector<std::string> placeholders() const;

    // Judge prompts score other models' outputs and never produce training labels.
    bool is_judge() const {
        return expected_output == ExpectedOutput::rating_lines ||
               expected_output == ExpectedOutput::difficulty_score;
    }
};

struct ChatMessage {
    std::string role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct PromptInstance {
    std::string template_id;
    int template_version = 0;
    std::vector<ChatMessage> messages;

    // Hash of the rendered messages, independent of template identity.
    std::string digest() const;
    json messages_json() const;
};

struct RenderOptions {
    std::string human_prefix = "[|Human|] ";
    std::string ai_prefix = "[|AI|] ";
};

// One "(A) text" line per option, newline separated.
std::string format_answer_choices(const std::vector<std::string>& choices);

// Turns alternate human/assistant starting with the human; every turn ends
// with a newline so an empty history renders as nothing.
std::string format_chat_history(const std::vector<std::string>& turns, const RenderOptions& options = {});

// Placeholders are {name} with name in [a-z_][a-z0-9_]*; other braces are literal.
std::vector<std::string> find_placeholders(std::string_view text);

// Raises MissingFieldError naming the first absent placeholder.
PromptInstance render(const PromptTemplate& t, const Sample& s, const RenderOptions& options = {});

class PromptLibrary {
public:
    // Validates and appends; DuplicateTemplateError when the id is taken.
    const PromptTemplate& add(PromptTemplate t);

    const PromptTemplate* find(std::string_view id) const;
    const PromptTemplate& get(std::string_view id) const;

    // First registered non-judge template for (task, style).
    const PromptTemplate& lookup(TaskKind task, PromptStyle style) const;

    // Elaborate non-judge templates for the task, in registration order.
    std::vector<PromptTemplate> variants(TaskKind task) const;

    const std::vector<PromptTemplate>& templates() const { return templates_; }

private:
    std::vector<PromptTemplate> templates_;
};

// Input fields a task's templates may reference.
const std::vector<std::string>& declared_fields(TaskKind task);

using PromptFileLoader = std::function<std::string(const std::string& name)>;

// Registers every manifest entry, resolving body files through load_file.
void load_manifest(PromptLibrary& library, const json& manifest, const PromptFileLoader& load_file);

// Manifest on disk; body files are resolved relative to its directory.
void load_manifest_file(PromptLibrary& library, const std::filesystem::path& manifest_path);

// The shipped templates, embedded at build time from prompts/.
PromptLibrary builtin_library();

}  // namespace distill
