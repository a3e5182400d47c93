#pragma once

#include <stdexcept>
#include <string>

namespace lcfm {

// Invalid user-supplied configuration (bad weights, zero variance, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated API precondition (shape mismatch, t outside [0,1], ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (singular system, eigensolver breakdown, ...).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged; carries the step at which it happened.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, long step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step(step) {}
    long step;
};

// File / serialization problems.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lcfm
