#pragma once

#include <stdexcept>
#include <string>

namespace lcomp {

// Invalid argument values or violated preconditions.
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatches.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container file (bad magic, version, truncation).
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, size_t offset)
        : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
          offset(offset) {}
    size_t offset;
};

// Structurally well-formed input whose content violates an invariant.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unparseable judge response; carries the raw text for inspection.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::string raw = {})
        : std::runtime_error(msg), raw_text(std::move(raw)) {}
    std::string raw_text;
};

// Judge transport failure (retriable).
struct QueryError : std::runtime_error {
    explicit QueryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lcomp
