#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "distill/errors.hpp"

namespace distill {

struct CodStep {
    std::string missing_entities;
    std::string denser_summary;
};

// Exactly four steps, each with a nonempty denser summary.
struct CodChain {
    std::vector<CodStep> steps;
};

struct CotAnswer {
    std::string reason;
    std::string label_raw;
};

enum class ParseErrorKind { malformed, wrong_length, missing_key };

std::string_view to_string(ParseErrorKind kind);

class ParseError : public Error {
public:
    ParseError(ParseErrorKind kind, const std::string& detail, std::string_view raw);

    ParseErrorKind kind() const noexcept { return kind_; }
    const std::string& excerpt() const noexcept { return excerpt_; }

private:
    ParseErrorKind kind_;
    std::string excerpt_;
};

inline constexpr std::size_t kCodSteps = 4;

// Trim, drop one enclosing markdown fence, then slice from the first opening
// bracket to the last matching closer. Characters inside the slice are never
// changed. Input without any bracket is returned untouched.
std::string repair_json(std::string_view raw);

CodChain parse_cod(std::string_view raw);

// label_key is "answer" or "answer_choice".
CotAnswer parse_cot(std::string_view raw, std::string_view label_key);

// Scans lines bottom-up for the first one that is exactly an integer in [lo, hi].
int parse_rating(std::string_view raw, int lo, int hi);

// Integer following the last "Overall Difficulty Score"; falls back to
// parse_rating(raw, 1, 5) when the phrase is absent.
int parse_difficulty(std::string_view raw);

}  // namespace distill
