#pragma once

#include <stdexcept>
#include <string>

namespace hlora {

// Shape or dimension disagreement between operands.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent configuration (unknown keys, missing plugin, invalid stage order).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Token or index outside its declared vocabulary range.
struct VocabularyError : std::runtime_error {
    explicit VocabularyError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format or I/O failure, always carrying the offending path.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hlora
