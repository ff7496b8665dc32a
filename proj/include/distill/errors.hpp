#pragma once

#include <stdexcept>
#include <string>

namespace distill {

// Broad failure classes; the CLI maps them onto exit codes.
enum class ErrorCategory { config, data, provider };

class Error : public std::runtime_error {
public:
    Error(std::string code, ErrorCategory category, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)), category_(category) {}

    const std::string& code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_; }

private:
    std::string code_;
    ErrorCategory category_;
};

#define DISTILL_DEFINE_ERROR(Name, Category)                                  \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& message)                             \
            : Error(#Name, ErrorCategory::Category, message) {}               \
    }

DISTILL_DEFINE_ERROR(ConfigError, config);
DISTILL_DEFINE_ERROR(IoError, data);
DISTILL_DEFINE_ERROR(SchemaError, data);
DISTILL_DEFINE_ERROR(NormalizationError, data);
DISTILL_DEFINE_ERROR(DuplicateTemplateError, config);
DISTILL_DEFINE_ERROR(UnknownTemplateError, config);
DISTILL_DEFINE_ERROR(TransportError, provider);
DISTILL_DEFINE_ERROR(ProviderError, provider);
DISTILL_DEFINE_ERROR(EmptyCompletionError, provider);
DISTILL_DEFINE_ERROR(FixtureMissError, provider);
DISTILL_DEFINE_ERROR(RatingParseError, data);
DISTILL_DEFINE_ERROR(EmptyGridError, config);
DISTILL_DEFINE_ERROR(NoViableCandidateError, data);
DISTILL_DEFINE_ERROR(AlignmentError, data);
DISTILL_DEFINE_ERROR(MissingLabelError, data);
DISTILL_DEFINE_ERROR(DeadlineExceeded, provider);
DISTILL_DEFINE_ERROR(MissingGoldError, data);
DISTILL_DEFINE_ERROR(EmptySummaryError, data);
DISTILL_DEFINE_ERROR(DuplicateRatingError, data);
DISTILL_DEFINE_ERROR(RangeError, data);
DISTILL_DEFINE_ERROR(NoBreakevenError, data);
DISTILL_DEFINE_ERROR(UnbalancedPoolError, data);
DISTILL_DEFINE_ERROR(UnknownItemError, data);
DISTILL_DEFINE_ERROR(UnknownSessionError, data);
DISTILL_DEFINE_ERROR(SessionClosedError, data);

#undef DISTILL_DEFINE_ERROR

class MissingFieldError : public Error {
public:
    MissingFieldError(std::string placeholder, std::string sample_id)
        : Error("MissingFieldError", ErrorCategory::data,
                "sample '" + sample_id + "' has no field '" + placeholder + "'"),
          placeholder_(std::move(placeholder)), sample_id_(std::move(sample_id)) {}

    const std::string& placeholder() const noexcept { return placeholder_; }
    const std::string& sample_id() const noexcept { return sample_id_; }

private:
    std::string placeholder_;
    std::string sample_id_;
};

}  // namespace distill
