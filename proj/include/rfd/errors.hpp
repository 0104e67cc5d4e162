#pragma once

#include <stdexcept>
#include <string>

namespace rfd {

// Bad user input: malformed config, inconsistent dimensions, unknown preset.
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// An API contract was violated by the caller (e.g. complex-valued loss,
// operands from different tapes).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// A checkpointed computation replayed to a different value than it produced
// when first recorded.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal numeric fault (NaN amplitude, non-finite gradient). Exit code 3.
class InternalFault : public std::runtime_error {
public:
    explicit InternalFault(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimization aborted (non-finite loss that cannot be recovered). Exit code 4.
class OptimizationAbort : public std::runtime_error {
public:
    explicit OptimizationAbort(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace rfd
