#pragma once
#include <stdexcept>
#include <string>

namespace gca {

// Thrown for invalid run/experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for malformed or inconsistent data artifacts (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a numerical self-check fails (CLI exit code 4).
class CheckFailure : public std::runtime_error {
public:
    explicit CheckFailure(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace gca
