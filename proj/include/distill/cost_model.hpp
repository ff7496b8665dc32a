#pragma once

#include "distill/json.hpp"

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace distill {

// Fixed-point currency in nano-dollars. Prices quoted with up to nine
// decimals are represented exactly.
class Money {
public:
    static constexpr std::int64_t kUnitsPerDollar = 1'000'000'000;

    constexpr Money() = default;
    static constexpr Money from_units(std::int64_t units) { return Money(units); }
    static Money from_dollars(double dollars);

    constexpr std::int64_t units() const { return units_; }
    double dollars() const { return static_cast<double>(units_) / kUnitsPerDollar; }

    // Half-away-from-zero rounding to the requested number of decimals.
    std::string format(int decimals = 2) const;

    constexpr Money operator+(Money o) const { return Money(units_ + o.units_); }
    constexpr Money operator-(Money o) const { return Money(units_ - o.units_); }
    constexpr auto operator<=>(const Money&) const = default;

private:
    constexpr explicit Money(std::int64_t units) : units_(units) {}
    std::int64_t units_ = 0;
};

struct CostScenario {
    std::string name;
    std::int64_t input_doc_tokens = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t output_tokens = 0;
    Money price_in_per_1k;
    Money price_out_per_1k;
    std::int64_t samples = 1000;
};

// Inference cost of 1000 samples under the scenario.
Money cost_per_1k(const CostScenario& s);

// Cost of s.samples samples, rounded to the nearest nano-dollar.
Money cost_total(const CostScenario& s);

// Smallest n with n * (teacher - student per-sample cost) >= onetime_cost.
// NoBreakevenError when the student is not cheaper per sample.
std::int64_t breakeven(const CostScenario& teacher, const CostScenario& student, Money onetime_cost);
std::int64_t breakeven_per_1k(Money teacher_per_1k, Money student_per_1k, Money onetime_cost);

// teacher cost / student cost.
double reduction_factor(const CostScenario& teacher, const CostScenario& student);

// ceil(code points / 4); used when a provider omits usage counts.
std::int64_t estimate_tokens(std::string_view text);

CostScenario scenario_from_json(const json& j);
json to_json(const CostScenario& s);

// Scenario file: JSON array of named scenarios.
std::vector<CostScenario> scenarios_from_json(const json& j);

// Plain-text comparison table: one row per scenario with $/1k samples and the
// reduction factor against the first row.
std::string render_cost_table(const std::vector<CostScenario>& scenarios);

}  // namespace distill
