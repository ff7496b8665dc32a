#pragma once

// Insertion-ordered JSON keeps emitted files stable and human-diffable.
#include <json.hpp>

namespace distill {
using json = nlohmann::ordered_json;
}
