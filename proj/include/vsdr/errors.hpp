#pragma once
#include <stdexcept>
#include <string>

namespace vsdr {

// Thrown on bad config values, malformed files, inconsistent dimensions.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation leaves the valid numeric domain
// (singular operating point, non-finite state, integrator breakdown).
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an iterative solver exhausts its budget.
struct ConvergenceError : std::runtime_error {
    explicit ConvergenceError(const std::string& msg, double residual = 0.0)
        : std::runtime_error(msg), last_residual(residual) {}
    double last_residual;
};

} // namespace vsdr
