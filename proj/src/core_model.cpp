#include "distill/core_model.hpp"

#include "distill/digest.hpp"
#include "distill/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

namespace distill {

namespace {

bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

bool is_digit(char c) {
    return c >= '0' && c <= '9';
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

Label normalize_choice(std::string_view raw) {
    std::string letters;
    for (char c : raw) {
        if (is_space(c) || c == '(' || c == ')' || c == '.' || c == '\'' || c == '"' || c == '`') {
            continue;
        }
        letters.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (letters.size() != 1 || letters[0] < 'A' || letters[0] > 'E') {
        throw NormalizationError("not a choice letter A-E: '" + std::string(raw) + "'");
    }
    return Label{LabelKind::choice_letter, letters};
}

Label normalize_nli(std::string_view raw) {
    auto value = lower(trim(raw));
    if (value != "entailment" && value != "contradiction" && value != "neutral") {
        throw NormalizationError("not an NLI class: '" + std::string(raw) + "'");
    }
    return Label{LabelKind::nli_class, value};
}

// Accepts digit groups of three separated by commas, e.g. "12,345".
bool valid_grouping(std::string_view digits) {
    auto first = digits.find(',');
    if (first == std::string_view::npos) {
        return true;
    }
    if (first == 0 || first > 3) {
        return false;
    }
    std::size_t pos = first;
    while (pos != std::string_view::npos) {
        auto next = digits.find(',', pos + 1);
        auto group = (next == std::string_view::npos ? digits.size() : next) - pos - 1;
        if (group != 3) {
            return false;
        }
        pos = next;
    }
    return true;
}

Label normalize_integer(std::string_view raw) {
    auto body = trim(raw);
    if (!body.empty() && body.back() == '.') {
        body.remove_suffix(1);
    }
    std::string sign;
    if (!body.empty() && (body.front() == '-' || body.front() == '+')) {
        if (body.front() == '-') {
            sign = "-";
        }
        body.remove_prefix(1);
    }
    if (body.empty() || !valid_grouping(body)) {
        throw NormalizationError("not an integer: '" + std::string(raw) + "'");
    }
    std::string digits = sign;
    for (char c : body) {
        if (c == ',') {
            continue;
        }
        if (!is_digit(c)) {
            throw NormalizationError("not an integer: '" + std::string(raw) + "'");
        }
        digits.push_back(c);
    }
    std::int64_t value = 0;
    auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc() || end != digits.data() + digits.size()) {
        throw NormalizationError("integer out of range: '" + std::string(raw) + "'");
    }
    return Label{LabelKind::integer, value};
}

void require_text_field(const Sample& s, std::string_view name, std::string_view split,
                        std::vector<Violation>& out) {
    const auto* f = s.field(name);
    if (f == nullptr) {
        out.push_back({std::string(split), s.id, "missing field '" + std::string(name) + "'"});
    } else if (!std::holds_alternative<std::string>(*f)) {
        out.push_back({std::string(split), s.id, "field '" + std::string(name) + "' must be text"});
    }
}

void require_list_field(const Sample& s, std::string_view name, std::string_view split,
                        std::vector<Violation>& out) {
    const auto* f = s.field(name);
    if (f == nullptr) {
        out.push_back({std::string(split), s.id, "missing field '" + std::string(name) + "'"});
    } else if (!std::holds_alternative<std::vector<std::string>>(*f)) {
        out.push_back({std::string(split), s.id, "field '" + std::string(name) + "' must be a list"});
    }
}

bool label_kind_allowed(TaskKind task, LabelKind kind) {
    switch (task) {
        case TaskKind::summarization:
        case TaskKind::conversation: return kind == LabelKind::free_text;
        case TaskKind::nli: return kind == LabelKind::nli_class;
        case TaskKind::qa: return kind == LabelKind::choice_letter;
        case TaskKind::math: return kind == LabelKind::integer || kind == LabelKind::choice_letter;
    }
    return false;
}

void check_label(const Sample& s, const std::optional<Label>& label, std::string_view which,
                 TaskKind task, std::string_view split, std::vector<Violation>& out) {
    if (!label) {
        return;
    }
    if (!label_kind_allowed(task, label->kind)) {
        out.push_back({std::string(split), s.id,
                       std::string(which) + " kind '" + std::string(to_string(label->kind)) +
                           "' not valid for task"});
        return;
    }
    try {
        if (normalize_label(label->text(), label->kind) != *label) {
            out.push_back({std::string(split), s.id, std::string(which) + " is not normalized"});
        }
    } catch (const NormalizationError&) {
        out.push_back({std::string(split), s.id, std::string(which) + " value is malformed"});
    }
}

}  // namespace

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) {
            ++i;
        }
        std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) {
            ++i;
        }
        if (i > start) {
            tokens.push_back(s.substr(start, i - start));
        }
    }
    return tokens;
}

std::string truncate_words(std::string_view text, std::size_t max_words) {
    auto tokens = split_whitespace(text);
    if (tokens.size() <= max_words) {
        return std::string(text);
    }
    std::string out;
    for (std::size_t i = 0; i < max_words; ++i) {
        if (i > 0) {
            out.push_back(' ');
        }
        out.append(tokens[i]);
    }
    return out;
}

std::string_view to_string(TaskKind task) {
    switch (task) {
        case TaskKind::summarization: return "summarization";
        case TaskKind::conversation: return "conversation";
        case TaskKind::nli: return "nli";
        case TaskKind::math: return "math";
        case TaskKind::qa: return "qa";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view text) {
    for (auto t : {TaskKind::summarization, TaskKind::conversation, TaskKind::nli, TaskKind::math,
                   TaskKind::qa}) {
        if (to_string(t) == text) {
            return t;
        }
    }
    throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

std::string_view to_string(LabelKind kind) {
    switch (kind) {
        case LabelKind::choice_letter: return "choice_letter";
        case LabelKind::nli_class: return "nli_class";
        case LabelKind::integer: return "integer";
        case LabelKind::free_text: return "free_text";
    }
    return "?";
}

LabelKind parse_label_kind(std::string_view text) {
    for (auto k : {LabelKind::choice_letter, LabelKind::nli_class, LabelKind::integer,
                   LabelKind::free_text}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    throw SchemaError("unknown label kind '" + std::string(text) + "'");
}

LabelKind default_label_kind(TaskKind task) {
    switch (task) {
        case TaskKind::nli: return LabelKind::nli_class;
        case TaskKind::qa: return LabelKind::choice_letter;
        case TaskKind::math: return LabelKind::integer;
        case TaskKind::summarization:
        case TaskKind::conversation: return LabelKind::free_text;
    }
    return LabelKind::free_text;
}

std::string Label::text() const {
    if (const auto* i = std::get_if<std::int64_t>(&value)) {
        return std::to_string(*i);
    }
    return std::get<std::string>(value);
}

Label normalize_label(std::string_view raw, LabelKind expected_kind) {
    if (trim(raw).empty()) {
        throw NormalizationError("empty label text");
    }
    switch (expected_kind) {
        case LabelKind::choice_letter: return normalize_choice(raw);
        case LabelKind::nli_class: return normalize_nli(raw);
        case LabelKind::integer: return normalize_integer(raw);
        case LabelKind::free_text: return Label{LabelKind::free_text, std::string(trim(raw))};
    }
    throw NormalizationError("unsupported label kind");
}

const FieldValue* Sample::field(std::string_view name) const {
    auto it = input_fields.find(std::string(name));
    return it == input_fields.end() ? nullptr : &it->second;
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::eval: return "eval";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view text) {
    for (auto s : kAllSplits) {
        if (to_string(s) == text) {
            return s;
        }
    }
    throw ConfigError("unknown split '" + std::string(text) + "'");
}

const std::vector<Sample>& Dataset::split(Split s) const {
    static const std::vector<Sample> kEmpty;
    auto it = splits.find(s);
    return it == splits.end() ? kEmpty : it->second;
}

std::vector<Violation> validate_dataset(const Dataset& d) {
    std::vector<Violation> out;
    std::set<std::string> seen;
    // Multiple-choice math is recognized by answer_choices on any sample; once
    // present, every sample must carry it.
    bool math_choices = false;
    if (d.task == TaskKind::math) {
        for (const auto& [split, samples] : d.splits) {
            for (const auto& s : samples) {
                math_choices = math_choices || s.field("answer_choices") != nullptr;
            }
        }
    }
    for (const auto& [split, samples] : d.splits) {
        auto split_name = to_string(split);
        for (const auto& s : samples) {
            if (s.id.empty()) {
                out.push_back({std::string(split_name), s.id, "empty id"});
            } else if (!seen.insert(s.id).second) {
                out.push_back({std::string(split_name), s.id, "duplicate id"});
            }
            switch (d.task) {
                case TaskKind::summarization:
                    require_text_field(s, "article", split_name, out);
                    break;
                case TaskKind::nli:
                    require_text_field(s, "premise", split_name, out);
                    require_text_field(s, "hypothesis", split_name, out);
                    break;
                case TaskKind::qa:
                    require_text_field(s, "question", split_name, out);
                    require_list_field(s, "answer_choices", split_name, out);
                    break;
                case TaskKind::math:
                    require_text_field(s, "question", split_name, out);
                    if (math_choices) {
                        require_list_field(s, "answer_choices", split_name, out);
                    }
                    break;
                case TaskKind::conversation:
                    require_list_field(s, "chat_history", split_name, out);
                    require_text_field(s, "query", split_name, out);
                    break;
            }
            check_label(s, s.gold_label, "gold_label", d.task, split_name, out);
            check_label(s, s.synthetic_label, "synthetic_label", d.task, split_name, out);
        }
    }
    return out;
}

json to_json(const Label& label) {
    json j;
    j["kind"] = to_string(label.kind);
    if (const auto* i = std::get_if<std::int64_t>(&label.value)) {
        j["value"] = *i;
    } else {
        j["value"] = std::get<std::string>(label.value);
    }
    return j;
}

Label label_from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind") || !j.contains("value")) {
        throw SchemaError("label must be an object with 'kind' and 'value'");
    }
    Label label;
    label.kind = parse_label_kind(j.at("kind").get<std::string>());
    const auto& v = j.at("value");
    if (label.kind == LabelKind::integer) {
        if (!v.is_number_integer()) {
            throw SchemaError("integer label value must be a JSON integer");
        }
        label.value = v.get<std::int64_t>();
    } else {
        if (!v.is_string()) {
            throw SchemaError("label value must be a string");
        }
        label.value = v.get<std::string>();
    }
    return label;
}

json to_json(const Sample& sample) {
    json j;
    j["id"] = sample.id;
    json fields = json::object();
    for (const auto& [name, value] : sample.input_fields) {
        std::visit([&](const auto& v) { fields[name] = v; }, value);
    }
    j["input_fields"] = std::move(fields);
    if (sample.gold_label) {
        j["gold_label"] = to_json(*sample.gold_label);
    }
    if (sample.synthetic_label) {
        j["synthetic_label"] = to_json(*sample.synthetic_label);
    }
    return j;
}

Sample sample_from_json(const json& j) {
    if (!j.is_object()) {
        throw SchemaError("sample must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "id" && key != "input_fields" && key != "gold_label" && key != "synthetic_label") {
            throw SchemaError("unexpected sample key '" + key + "'");
        }
    }
    if (!j.contains("id") || !j.at("id").is_string()) {
        throw SchemaError("sample id must be a string");
    }
    if (!j.contains("input_fields") || !j.at("input_fields").is_object()) {
        throw SchemaError("sample input_fields must be an object");
    }
    Sample s;
    s.id = j.at("id").get<std::string>();
    for (const auto& [name, value] : j.at("input_fields").items()) {
        if (value.is_string()) {
            s.input_fields[name] = value.get<std::string>();
        } else if (value.is_array() &&
                   std::all_of(value.begin(), value.end(), [](const json& e) { return e.is_string(); })) {
            s.input_fields[name] = value.get<std::vector<std::string>>();
        } else {
            throw SchemaError("field '" + name + "' of sample '" + s.id +
                              "' must be a string or list of strings");
        }
    }
    if (j.contains("gold_label") && !j.at("gold_label").is_null()) {
        s.gold_label = label_from_json(j.at("gold_label"));
    }
    if (j.contains("synthetic_label") && !j.at("synthetic_label").is_null()) {
        s.synthetic_label = label_from_json(j.at("synthetic_label"));
    }
    return s;
}

std::string to_jsonl(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        out += to_json(s).dump();
        out.push_back('\n');
    }
    return out;
}

std::vector<Sample> samples_from_jsonl(std::string_view text, std::string_view source) {
    std::vector<Sample> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(sample_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::filesystem::path split_path(const std::filesystem::path& dir, std::string_view name, Split split) {
    return dir / (std::string(name) + "." + std::string(to_string(split)) + ".jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir, std::string_view name, TaskKind task) {
    Dataset d;
    d.name = std::string(name);
    d.task = task;
    bool any = false;
    for (auto split : kAllSplits) {
        auto path = split_path(dir, name, split);
        if (!std::filesystem::exists(path)) {
            continue;
        }
        any = true;
        d.splits[split] = samples_from_jsonl(read_file(path), path.string());
    }
    if (!any) {
        throw IoError("no split files for dataset '" + std::string(name) + "' in " + dir.string());
    }
    return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
    for (const auto& [split, samples] : d.splits) {
        write_file_atomic(split_path(dir, d.name, split), to_jsonl(samples));
    }
}

std::string dataset_digest(const Dataset& d) {
    std::string canonical = d.name + "\n" + std::string(to_string(d.task)) + "\n";
    for (const auto& [split, samples] : d.splits) {
        canonical += "#" + std::string(to_string(split)) + "\n" + to_jsonl(samples);
    }
    return sha256_hex(canonical);
}

}  // namespace distill
