#pragma once

#include <stdexcept>
#include <string>

namespace sofr {

// A symmetric system that must be solvable turned out singular (or nearly so).
class SingularSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A per-dataset coefficient variance block could not be inverted even after jitter.
class SingularVarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An iterative solver hit its iteration cap before meeting its tolerance.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& msg, double residual)
        : std::runtime_error(msg), residual(residual) {}
    double residual;
};

// A relative-error metric has a zero denominator.
class DegenerateMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration or malformed input files.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sofr
