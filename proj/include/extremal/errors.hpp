#ifndef EXTREMAL_ERRORS_HPP
#define EXTREMAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace extremal {

// Rejected input or configuration. CLI maps this to exit code 2.
class InvalidInput : public std::runtime_error {
public:
    explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or diverging optimization. CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace extremal

#endif
