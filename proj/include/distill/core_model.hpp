#pragma once

#include "distill/json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace distill {

enum class TaskKind { summarization, conversation, nli, math, qa };

std::string_view to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view text);

enum class LabelKind { choice_letter, nli_class, integer, free_text };

std::string_view to_string(LabelKind kind);
LabelKind parse_label_kind(std::string_view text);

// Label kind a task produces when nothing more specific is configured.
// Math defaults to integer answers; multiple-choice math sets choice_letter
// on its templates.
LabelKind default_label_kind(TaskKind task);

struct Label {
    LabelKind kind = LabelKind::free_text;
    std::variant<std::string, std::int64_t> value;

    // Canonical text form; this is what a student is trained to emit.
    std::string text() const;

    bool operator==(const Label&) const = default;
};

// Raises NormalizationError when raw cannot be coerced to the expected kind.
Label normalize_label(std::string_view raw, LabelKind expected_kind);

// A field is either plain text or an ordered list (answer choices, chat turns).
using FieldValue = std::variant<std::string, std::vector<std::string>>;

struct Sample {
    std::string id;
    std::map<std::string, FieldValue> input_fields;
    std::optional<Label> gold_label;
    std::optional<Label> synthetic_label;

    const FieldValue* field(std::string_view name) const;
    bool operator==(const Sample&) const = default;
};

enum class Split { train, eval, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);
inline constexpr Split kAllSplits[] = {Split::train, Split::eval, Split::test};

struct Dataset {
    std::string name;
    TaskKind task = TaskKind::nli;
    std::map<Split, std::vector<Sample>> splits;

    const std::vector<Sample>& split(Split s) const;
    bool operator==(const Dataset&) const = default;
};

struct Violation {
    std::string split;
    std::string sample_id;
    std::string rule;

    bool operator==(const Violation&) const = default;
};

// Empty result iff every sample satisfies the invariants for d.task.
std::vector<Violation> validate_dataset(const Dataset& d);

json to_json(const Label& label);
Label label_from_json(const json& j);
json to_json(const Sample& sample);
Sample sample_from_json(const json& j);

std::string to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_jsonl(std::string_view text, std::string_view source = "<memory>");

std::filesystem::path split_path(const std::filesystem::path& dir, std::string_view name, Split split);

// Reads whichever of <name>.{train,eval,test}.jsonl exist in dir.
Dataset load_dataset(const std::filesystem::path& dir, std::string_view name, TaskKind task);
void save_dataset(const std::filesystem::path& dir, const Dataset& d);

// Content hash over every split in canonical serialized form.
std::string dataset_digest(const Dataset& d);

// Keeps at most max_words whitespace-delimited tokens, joined by single spaces.
// Returns the input unchanged when it is already short enough.
std::string truncate_words(std::string_view text, std::size_t max_words);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split_whitespace(std::string_view s);

}  // namespace distill
