#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfbdsde {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input that is not a text-parsing problem (bad shapes, ranges, modes).
class InvalidArgumentError : public Error {
public:
    explicit InvalidArgumentError(const std::string& what) : Error(what) {}
};

/// Text failed to parse; `offset` is the byte position of the first bad token.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (byte " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

/// Expression evaluation hit an undefined value (sqrt of a negative, division by zero).
class EvalDomainError : public Error {
public:
    explicit EvalDomainError(const std::string& what) : Error(what) {}
};

/// Ensemble shape does not admit the requested operation.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Least-squares normal equations are rank deficient even after ridge.
class SingularSystemError : public Error {
public:
    explicit SingularSystemError(const std::string& what) : Error(what) {}
};

/// A simulated path left the representable range (non-finite state).
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
    std::size_t step;
};

/// Fixed-point iteration failed to reach tolerance; `distances` is the full trace.
class IterationLimitError : public Error {
public:
    IterationLimitError(const std::string& what, std::vector<double> distances)
        : Error(what), distances(std::move(distances)) {}
    std::vector<double> distances;
};

} // namespace mfbdsde
