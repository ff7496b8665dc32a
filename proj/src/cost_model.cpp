#include "distill/cost_model.hpp"

#include "distill/errors.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

namespace distill {

namespace {

using Wide = __int128;

std::int64_t require_nonnegative(const json& j, const char* key, std::int64_t fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw RangeError(std::string("scenario field '") + key + "' must be a nonnegative integer");
    }
    return v.get<std::int64_t>();
}

Money require_price(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
        throw SchemaError(std::string("scenario field '") + key + "' must be a number");
    }
    auto m = Money::from_dollars(j.at(key).get<double>());
    if (m < Money{}) {
        throw RangeError(std::string("scenario field '") + key + "' must be nonnegative");
    }
    return m;
}

}  // namespace

Money Money::from_dollars(double dollars) {
    return Money(static_cast<std::int64_t>(std::llround(dollars * static_cast<double>(kUnitsPerDollar))));
}

std::string Money::format(int decimals) const {
    std::int64_t scale = 1;
    for (int i = decimals; i < 9; ++i) {
        scale *= 10;
    }
    std::int64_t magnitude = units_ < 0 ? -units_ : units_;
    std::int64_t rounded = (magnitude + scale / 2) / scale;
    std::int64_t denom = kUnitsPerDollar / scale;
    std::ostringstream out;
    if (units_ < 0 && rounded != 0) {
        out << '-';
    }
    out << rounded / denom;
    if (decimals > 0) {
        out << '.' << std::setw(decimals) << std::setfill('0') << rounded % denom;
    }
    return out.str();
}

Money cost_per_1k(const CostScenario& s) {
    // 1000 * [(in/1000) * price_in + (out/1000) * price_out] simplifies to the
    // token counts times the per-1k prices.
    Wide total = static_cast<Wide>(s.input_doc_tokens + s.prompt_tokens) * s.price_in_per_1k.units() +
                 static_cast<Wide>(s.output_tokens) * s.price_out_per_1k.units();
    return Money::from_units(static_cast<std::int64_t>(total));
}

Money cost_total(const CostScenario& s) {
    Wide scaled = static_cast<Wide>(cost_per_1k(s).units()) * s.samples;
    return Money::from_units(static_cast<std::int64_t>((scaled + 500) / 1000));
}

std::int64_t breakeven_per_1k(Money teacher_per_1k, Money student_per_1k, Money onetime_cost) {
    if (student_per_1k >= teacher_per_1k) {
        throw NoBreakevenError("student per-sample cost is not below the teacher's");
    }
    if (onetime_cost <= Money{}) {
        return 0;
    }
    Wide saving_per_1k = teacher_per_1k.units() - student_per_1k.units();
    Wide needed = static_cast<Wide>(onetime_cost.units()) * 1000;
    return static_cast<std::int64_t>((needed + saving_per_1k - 1) / saving_per_1k);
}

std::int64_t breakeven(const CostScenario& teacher, const CostScenario& student, Money onetime_cost) {
    return breakeven_per_1k(cost_per_1k(teacher), cost_per_1k(student), onetime_cost);
}

double reduction_factor(const CostScenario& teacher, const CostScenario& student) {
    return static_cast<double>(cost_per_1k(teacher).units()) / static_cast<double>(cost_per_1k(student).units());
}

std::int64_t estimate_tokens(std::string_view text) {
    std::int64_t code_points = 0;
    for (unsigned char c : text) {
        if ((c & 0xC0) != 0x80) {
            ++code_points;
        }
    }
    return (code_points + 3) / 4;
}

CostScenario scenario_from_json(const json& j) {
    if (!j.is_object()) {
        throw SchemaError("cost scenario must be an object");
    }
    CostScenario s;
    s.name = j.value("name", std::string{});
    s.input_doc_tokens = require_nonnegative(j, "input_doc_tokens", 0);
    s.prompt_tokens = require_nonnegative(j, "prompt_tokens", 0);
    s.output_tokens = require_nonnegative(j, "output_tokens", 0);
    s.price_in_per_1k = require_price(j, "price_in_per_1k");
    s.price_out_per_1k = require_price(j, "price_out_per_1k");
    s.samples = require_nonnegative(j, "samples", 1000);
    return s;
}

json to_json(const CostScenario& s) {
    return json{{"name", s.name},
                {"input_doc_tokens", s.input_doc_tokens},
                {"prompt_tokens", s.prompt_tokens},
                {"output_tokens", s.output_tokens},
                {"price_in_per_1k", s.price_in_per_1k.dollars()},
                {"price_out_per_1k", s.price_out_per_1k.dollars()},
                {"samples", s.samples}};
}

std::vector<CostScenario> scenarios_from_json(const json& j) {
    if (!j.is_array()) {
        throw SchemaError("scenario file must be a JSON array");
    }
    std::vector<CostScenario> out;
    for (const auto& entry : j) {
        out.push_back(scenario_from_json(entry));
    }
    return out;
}

std::string render_cost_table(const std::vector<CostScenario>& scenarios) {
    std::size_t width = 8;
    for (const auto& s : scenarios) {
        width = std::max(width, s.name.size());
    }
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width)) << "Scenario" << "  "
        << std::right << std::setw(16) << "Cost ($/1k)" << "  " << std::setw(10) << "Reduction" << '\n';
    out << std::string(width + 30, '-') << '\n';
    for (const auto& s : scenarios) {
        out << std::left << std::setw(static_cast<int>(width)) << s.name << "  " << std::right
            << std::setw(16) << cost_per_1k(s).format(2) << "  ";
        if (cost_per_1k(s).units() > 0 && !scenarios.empty()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2fx", reduction_factor(scenarios.front(), s));
            out << std::setw(10) << buf;
        } else {
            out << std::setw(10) << "-";
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace distill
