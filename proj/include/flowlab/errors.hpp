#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowlab {

// Argument outside the mathematical domain of an operation (t ∉ [0,1], t = 0
// where a limit requires t > 0, degenerate parameters).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Iterative solver ran out of iterations.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

// Euler step whose multiplicative factor 1 + A·δt is not positive.
class StepSizeError : public std::runtime_error {
public:
    StepSizeError(const std::string& what, std::size_t step)
        : std::runtime_error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

// Non-finite value produced by training (epoch) or transport (grid node).
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t index)
        : std::runtime_error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

// Quantity undefined for the given input (e.g. cosine of a zero vector).
class UndefinedValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad CLI / experiment configuration.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace flowlab
