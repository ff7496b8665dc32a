#include "distill/prompt_library.hpp"

#include "distill/digest.hpp"
#include "distill/errors.hpp"

#include <algorithm>

namespace distill {

namespace detail {
// Defined in the generated embedded_prompts.cpp.
const std::vector<std::pair<std::string_view, std::string_view>>& embedded_prompt_files();
}  // namespace detail

namespace {

bool placeholder_start(char c) {
    return (c >= 'a' && c <= 'z') || c == '_';
}

bool placeholder_char(char c) {
    return placeholder_start(c) || (c >= '0' && c <= '9');
}

// Length of a placeholder token starting at text[pos] == '{', or 0.
std::size_t placeholder_length(std::string_view text, std::size_t pos) {
    if (pos + 2 >= text.size() || !placeholder_start(text[pos + 1])) {
        return 0;
    }
    std::size_t i = pos + 1;
    while (i < text.size() && placeholder_char(text[i])) {
        ++i;
    }
    return i < text.size() && text[i] == '}' ? i - pos + 1 : 0;
}

std::string field_text(const FieldValue& value, std::string_view name, const RenderOptions& options) {
    if (const auto* s = std::get_if<std::string>(&value)) {
        return *s;
    }
    const auto& items = std::get<std::vector<std::string>>(value);
    if (name == "answer_choices") {
        return format_answer_choices(items);
    }
    if (name == "chat_history") {
        return format_chat_history(items, options);
    }
    std::string joined;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) {
            joined.push_back('\n');
        }
        joined += items[i];
    }
    return joined;
}

std::string substitute(std::string_view text, const Sample& s, const RenderOptions& options) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] == '{') {
            if (auto len = placeholder_length(text, pos); len > 0) {
                auto name = text.substr(pos + 1, len - 2);
                const auto* value = s.field(name);
                if (value == nullptr) {
                    throw MissingFieldError(std::string(name), s.id);
                }
                out += field_text(*value, name, options);
                pos += len;
                continue;
            }
        }
        out.push_back(text[pos++]);
    }
    return out;
}

void validate_template(const PromptTemplate& t) {
    if (t.id.empty()) {
        throw ConfigError("template id must be nonempty");
    }
    if (t.max_new_tokens <= 0) {
        throw ConfigError("template '" + t.id + "': max_new_tokens must be positive");
    }
    if (!find_placeholders(t.system_text).empty()) {
        throw ConfigError("template '" + t.id + "': system text must not contain placeholders");
    }
    if (!t.is_judge()) {
        const auto& allowed = declared_fields(t.task);
        for (const auto& p : t.placeholders()) {
            if (std::find(allowed.begin(), allowed.end(), p) == allowed.end()) {
                throw ConfigError("template '" + t.id + "': placeholder {" + p +
                                  "} is not a field of task " + std::string(to_string(t.task)));
            }
        }
    }
    if (t.task == TaskKind::summarization && !t.is_judge()) {
        int expected = t.style == PromptStyle::elaborate ? 1024 : 256;
        if (t.max_new_tokens != expected) {
            throw ConfigError("template '" + t.id + "': summarization " +
                              std::string(to_string(t.style)) + " templates use max_new_tokens " +
                              std::to_string(expected));
        }
    }
}

}  // namespace

std::string_view to_string(PromptStyle style) {
    return style == PromptStyle::vanilla ? "vanilla" : "elaborate";
}

PromptStyle parse_prompt_style(std::string_view text) {
    if (text == "vanilla") {
        return PromptStyle::vanilla;
    }
    if (text == "elaborate") {
        return PromptStyle::elaborate;
    }
    throw ConfigError("unknown prompt style '" + std::string(text) + "'");
}

std::string_view to_string(ExpectedOutput kind) {
    switch (kind) {
        case ExpectedOutput::plain_text: return "plain_text";
        case ExpectedOutput::cod_json: return "cod_json";
        case ExpectedOutput::cot_json_choice: return "cot_json_choice";
        case ExpectedOutput::cot_json_numeric: return "cot_json_numeric";
        case ExpectedOutput::rating_lines: return "rating_lines";
        case ExpectedOutput::difficulty_score: return "difficulty_score";
    }
    return "?";
}

ExpectedOutput parse_expected_output(std::string_view text) {
    for (auto k : {ExpectedOutput::plain_text, ExpectedOutput::cod_json, ExpectedOutput::cot_json_choice,
                   ExpectedOutput::cot_json_numeric, ExpectedOutput::rating_lines,
                   ExpectedOutput::difficulty_score}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    throw ConfigError("unknown expected_output '" + std::string(text) + "'");
}

std::vector<std::string> find_placeholders(std::string_view text) {
    std::vector<std::string> names;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (text[pos] != '{') {
            continue;
        }
        if (auto len = placeholder_length(text, pos); len > 0) {
            std::string name(text.substr(pos + 1, len - 2));
            if (std::find(names.begin(), names.end(), name) == names.end()) {
                names.push_back(std::move(name));
            }
            pos += len - 1;
        }
    }
    return names;
}

std::vector<std::string> PromptTemplate::placeholders() const {
    return find_placeholders(user_text);
}

std::string PromptInstance::digest() const {
    return sha256_hex(messages_json().dump());
}

json PromptInstance::messages_json() const {
    json arr = json::array();
    for (const auto& m : messages) {
        arr.push_back({{"role", m.role}, {"content", m.content}});
    }
    return arr;
}

std::string format_answer_choices(const std::vector<std::string>& choices) {
    std::string out;
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (i > 0) {
            out.push_back('\n');
        }
        out += "(";
        out.push_back(static_cast<char>('A' + i));
        out += ") " + choices[i];
    }
    return out;
}

std::string format_chat_history(const std::vector<std::string>& turns, const RenderOptions& options) {
    std::string out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        out += (i % 2 == 0 ? options.human_prefix : options.ai_prefix) + turns[i] + "\n";
    }
    return out;
}

PromptInstance render(const PromptTemplate& t, const Sample& s, const RenderOptions& options) {
    if (auto* choices = s.field("answer_choices")) {
        if (const auto* list = std::get_if<std::vector<std::string>>(choices); list && list->size() > 26) {
            throw SchemaError("sample '" + s.id + "' has more answer choices than letters");
        }
    }
    PromptInstance p;
    p.template_id = t.id;
    p.template_version = t.version;
    if (!t.system_text.empty()) {
        p.messages.push_back({"system", t.system_text});
    }
    p.messages.push_back({"user", substitute(t.user_text, s, options)});
    return p;
}

const std::vector<std::string>& declared_fields(TaskKind task) {
    static const std::map<TaskKind, std::vector<std::string>> kFields = {
        {TaskKind::summarization, {"article"}},
        {TaskKind::conversation, {"chat_history", "query"}},
        {TaskKind::nli, {"premise", "hypothesis"}},
        {TaskKind::math, {"question", "answer_choices"}},
        {TaskKind::qa, {"question", "answer_choices"}},
    };
    return kFields.at(task);
}

const PromptTemplate& PromptLibrary::add(PromptTemplate t) {
    if (find(t.id) != nullptr) {
        throw DuplicateTemplateError("template '" + t.id + "' is already registered");
    }
    validate_template(t);
    templates_.push_back(std::move(t));
    return templates_.back();
}

const PromptTemplate* PromptLibrary::find(std::string_view id) const {
    auto it = std::find_if(templates_.begin(), templates_.end(), [&](const auto& t) { return t.id == id; });
    return it == templates_.end() ? nullptr : &*it;
}

const PromptTemplate& PromptLibrary::get(std::string_view id) const {
    if (const auto* t = find(id)) {
        return *t;
    }
    throw UnknownTemplateError("no template '" + std::string(id) + "'");
}

const PromptTemplate& PromptLibrary::lookup(TaskKind task, PromptStyle style) const {
    for (const auto& t : templates_) {
        if (t.task == task && t.style == style && !t.is_judge()) {
            return t;
        }
    }
    throw UnknownTemplateError("no " + std::string(to_string(style)) + " template for task " +
                               std::string(to_string(task)));
}

std::vector<PromptTemplate> PromptLibrary::variants(TaskKind task) const {
    std::vector<PromptTemplate> out;
    for (const auto& t : templates_) {
        if (t.task == task && t.style == PromptStyle::elaborate && !t.is_judge()) {
            out.push_back(t);
        }
    }
    return out;
}

void load_manifest(PromptLibrary& library, const json& manifest, const PromptFileLoader& load_file) {
    if (!manifest.is_array()) {
        throw ConfigError("prompt manifest must be a JSON array");
    }
    for (const auto& entry : manifest) {
        try {
            PromptTemplate t;
            t.id = entry.at("id").get<std::string>();
            t.version = entry.value("version", 1);
            t.task = parse_task_kind(entry.at("task").get<std::string>());
            t.style = parse_prompt_style(entry.at("style").get<std::string>());
            t.expected_output = parse_expected_output(entry.at("expected_output").get<std::string>());
            t.max_new_tokens = entry.at("max_new_tokens").get<int>();
            t.label_kind = entry.contains("label_kind")
                               ? parse_label_kind(entry.at("label_kind").get<std::string>())
                               : default_label_kind(t.task);
            const auto& system_file = entry.at("system_file");
            if (!system_file.is_null()) {
                t.system_text = load_file(system_file.get<std::string>());
            }
            t.user_text = load_file(entry.at("user_file").get<std::string>());
            library.add(std::move(t));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad prompt manifest entry: ") + e.what());
        }
    }
}

void load_manifest_file(PromptLibrary& library, const std::filesystem::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw ConfigError(manifest_path.string() + ": " + e.what());
    }
    auto base = manifest_path.parent_path();
    load_manifest(library, manifest, [&](const std::string& name) { return read_file(base / name); });
}

PromptLibrary builtin_library() {
    const auto& files = detail::embedded_prompt_files();
    auto lookup_file = [&](const std::string& name) -> std::string {
        for (const auto& [file, body] : files) {
            if (file == name) {
                return std::string(body);
            }
        }
        throw ConfigError("embedded prompt file '" + name + "' not found");
    };
    PromptLibrary library;
    load_manifest(library, json::parse(lookup_file("manifest.json")), lookup_file);
    return library;
}

}  // namespace distill
