#pragma once

#include <stdexcept>
#include <string>

namespace bnnshift {

// Dimension or shape mismatch between arguments.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: non-convergence, loss of positive definiteness, NaN.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value or inconsistent specification.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed file contents (IDX, sidecars, configs on disk).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside a model's admissible domain (e.g. non-positive NALU inputs).
struct DomainError : std::domain_error {
    explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

}  // namespace bnnshift
