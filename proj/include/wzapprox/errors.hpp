#pragma once

#include <stdexcept>
#include <string>

namespace wz {

/// Invalid input or configuration. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A run was stopped because the numerics broke down. The CLI maps this to exit code 2.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state in a solver.
class BlowUp : public NumericalAbort {
public:
    BlowUp(const std::string& what, double time) : NumericalAbort(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

/// A state exceeded the configured L2 bound.
class BoundViolation : public NumericalAbort {
public:
    BoundViolation(const std::string& what, double time) : NumericalAbort(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace wz
