#pragma once

#include <stdexcept>
#include <string>

namespace tpnet {

// Base of everything the library throws. Each subclass maps to one CLI exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

// Bad input: preconditions, shapes, configuration, malformed files.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Malformed file or config. `where` is a "line N" or "byte N" location.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& source, const std::string& where, const std::string& what)
        : ValidationError(source + ": " + where + ": " + what), where_(where) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

// Divergence: non-finite states, objectives or gradients.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

} // namespace tpnet
