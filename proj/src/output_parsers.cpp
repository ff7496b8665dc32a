#include "distill/output_parsers.hpp"

#include "distill/core_model.hpp"
#include "distill/json.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>

namespace distill {

namespace {

constexpr std::size_t kExcerptChars = 120;

std::string make_excerpt(std::string_view raw) {
    if (raw.size() <= kExcerptChars) {
        return std::string(raw);
    }
    return std::string(raw.substr(0, kExcerptChars)) + "...";
}

std::string_view strip_fence(std::string_view s) {
    if (s.substr(0, 3) != "```") {
        return s;
    }
    auto first_newline = s.find('\n');
    if (first_newline == std::string_view::npos) {
        return s;
    }
    auto inner = s.substr(first_newline + 1);
    inner = trim(inner);
    if (inner.size() >= 3 && inner.substr(inner.size() - 3) == "```") {
        inner.remove_suffix(3);
    }
    return trim(inner);
}

std::optional<long long> exact_integer(std::string_view line) {
    line = trim(line);
    if (line.empty()) {
        return std::nullopt;
    }
    std::string_view digits = line;
    if (digits.front() == '+' || digits.front() == '-') {
        digits.remove_prefix(1);
    }
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return std::nullopt;
    }
    long long value = 0;
    const char* begin = line.data() + (line.front() == '+' ? 1 : 0);
    auto [end, ec] = std::from_chars(begin, line.data() + line.size(), value);
    if (ec != std::errc() || end != line.data() + line.size()) {
        return std::nullopt;
    }
    return value;
}

json parse_strict(std::string_view raw) {
    auto candidate = repair_json(raw);
    try {
        return json::parse(candidate);
    } catch (const json::exception& e) {
        throw ParseError(ParseErrorKind::malformed, e.what(), raw);
    }
}

std::string stringify_scalar(const json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer()) {
        return v.dump();
    }
    if (v.is_number_float()) {
        double d = v.get<double>();
        if (std::isfinite(d) && std::trunc(d) == d && std::fabs(d) < 9.0e15) {
            return std::to_string(static_cast<long long>(d));
        }
        return v.dump();
    }
    return v.dump();
}

}  // namespace

std::string_view to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::malformed: return "malformed";
        case ParseErrorKind::wrong_length: return "wrong_length";
        case ParseErrorKind::missing_key: return "missing_key";
    }
    return "?";
}

ParseError::ParseError(ParseErrorKind kind, const std::string& detail, std::string_view raw)
    : Error("ParseError", ErrorCategory::data, std::string(to_string(kind)) + ": " + detail),
      kind_(kind),
      excerpt_(make_excerpt(raw)) {}

std::string repair_json(std::string_view raw) {
    auto body = strip_fence(trim(raw));
    auto open = body.find_first_of("[{");
    if (open == std::string_view::npos) {
        return std::string(raw);
    }
    char closer = body[open] == '[' ? ']' : '}';
    auto close = body.rfind(closer);
    if (close == std::string_view::npos || close < open) {
        return std::string(body.substr(open));
    }
    return std::string(body.substr(open, close - open + 1));
}

CodChain parse_cod(std::string_view raw) {
    auto doc = parse_strict(raw);
    if (!doc.is_array()) {
        throw ParseError(ParseErrorKind::malformed, "expected a JSON array", raw);
    }
    if (doc.size() != kCodSteps) {
        throw ParseError(ParseErrorKind::wrong_length,
                         "expected 4 steps, got " + std::to_string(doc.size()), raw);
    }
    CodChain chain;
    for (const auto& step : doc) {
        if (!step.is_object()) {
            throw ParseError(ParseErrorKind::malformed, "step is not an object", raw);
        }
        if (!step.contains("Missing_Entities")) {
            throw ParseError(ParseErrorKind::missing_key, "Missing_Entities", raw);
        }
        if (!step.contains("Denser_Summary") || !step.at("Denser_Summary").is_string() ||
            trim(step.at("Denser_Summary").get_ref<const std::string&>()).empty()) {
            throw ParseError(ParseErrorKind::missing_key, "Denser_Summary", raw);
        }
        CodStep parsed;
        const auto& entities = step.at("Missing_Entities");
        if (entities.is_array()) {
            for (const auto& e : entities) {
                if (!parsed.missing_entities.empty()) {
                    parsed.missing_entities += "; ";
                }
                parsed.missing_entities += stringify_scalar(e);
            }
        } else {
            parsed.missing_entities = stringify_scalar(entities);
        }
        parsed.denser_summary = step.at("Denser_Summary").get<std::string>();
        chain.steps.push_back(std::move(parsed));
    }
    return chain;
}

CotAnswer parse_cot(std::string_view raw, std::string_view label_key) {
    auto doc = parse_strict(raw);
    if (!doc.is_object()) {
        throw ParseError(ParseErrorKind::malformed, "expected a JSON object", raw);
    }
    std::string key(label_key);
    if (!doc.contains("reason")) {
        throw ParseError(ParseErrorKind::missing_key, "reason", raw);
    }
    if (!doc.contains(key) || doc.at(key).is_null()) {
        throw ParseError(ParseErrorKind::missing_key, key, raw);
    }
    CotAnswer answer;
    answer.reason = stringify_scalar(doc.at("reason"));
    answer.label_raw = stringify_scalar(doc.at(key));
    if (trim(answer.label_raw).empty()) {
        throw ParseError(ParseErrorKind::missing_key, key + " is empty", raw);
    }
    return answer;
}

int parse_rating(std::string_view raw, int lo, int hi) {
    std::size_t end = raw.size();
    while (true) {
        auto start = end == 0 ? std::string_view::npos : raw.rfind('\n', end - 1);
        auto line_begin = start == std::string_view::npos ? 0 : start + 1;
        auto value = exact_integer(raw.substr(line_begin, end - line_begin));
        if (value && *value >= lo && *value <= hi) {
            return static_cast<int>(*value);
        }
        if (start == std::string_view::npos) {
            break;
        }
        end = start;
    }
    throw RatingParseError("no standalone rating in [" + std::to_string(lo) + "," + std::to_string(hi) +
                           "]: " + make_excerpt(raw));
}

int parse_difficulty(std::string_view raw) {
    static constexpr std::string_view kPhrase = "overall difficulty score";
    std::string folded(raw);
    std::transform(folded.begin(), folded.end(), folded.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    auto at = folded.rfind(kPhrase);
    if (at == std::string::npos) {
        return parse_rating(raw, 1, 5);
    }
    auto rest = std::string_view(raw).substr(at + kPhrase.size());
    auto digit = rest.find_first_of("0123456789");
    if (digit == std::string_view::npos) {
        throw RatingParseError("no score after 'Overall Difficulty Score': " + make_excerpt(raw));
    }
    auto stop = rest.find_first_not_of("0123456789", digit);
    auto number = rest.substr(digit, stop == std::string_view::npos ? std::string_view::npos : stop - digit);
    int value = 0;
    auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
    if (ec != std::errc() || value < 1 || value > 5) {
        throw RatingParseError("difficulty score out of range: " + std::string(number));
    }
    return value;
}

}  // namespace distill
