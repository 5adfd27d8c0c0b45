#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gtddp {

/// @brief Invalid configuration, shapes or inputs. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// @brief Numerical failure (indefinite curvature, eigensolver stall, divergence).
/// Maps to CLI exit code 2. `stage` is -1 when not attributable to a stage.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, int stage = -1)
        : std::runtime_error(stage >= 0 ? what + " (stage " + std::to_string(stage) + ")" : what),
          stage_(stage) {}

    int stage() const { return stage_; }

private:
    int stage_;
};

/// @brief Malformed input file; carries the byte offset of the failure.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace gtddp
