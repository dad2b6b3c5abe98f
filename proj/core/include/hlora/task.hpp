#pragma once

#include <string>

#include "hlora/errors.hpp"

namespace hlora {

// Two-valued task tag: drives visual-granularity selection and plugin routing.
enum class TaskType { comprehension, generation };

inline const char* task_name(TaskType t) {
    return t == TaskType::comprehension ? "comp" : "gen";
}

inline TaskType parse_task(const std::string& s) {
    if (s == "comp" || s == "comprehension") return TaskType::comprehension;
    if (s == "gen" || s == "generation") return TaskType::generation;
    throw ConfigError("unknown task '" + s + "' (expected comp|gen)");
}

}  // namespace hlora
