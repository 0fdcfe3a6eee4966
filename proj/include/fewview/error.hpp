#pragma once

#include <stdexcept>
#include <string>

namespace fewview {

/// Base class for all library errors. `exit_code()` maps the error onto the
/// command-line contract (2 config, 3 data, 4 numerical divergence).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Raised by autodiff primitives evaluated outside their domain
/// (log of a non-positive value, division by zero).
class DomainError : public NumericalError {
public:
    DomainError(const std::string& op, double operand)
        : NumericalError(op + ": operand " + std::to_string(operand) + " outside domain"),
          operand_(operand) {}

    double operand() const noexcept { return operand_; }

private:
    double operand_;
};

}  // namespace fewview
