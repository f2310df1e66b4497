#pragma once

#include <stdexcept>
#include <string>

namespace hbar {

// Invalid input: bad layer parameters, malformed traces, wrong sizes.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A closed form evaluated at a point where it is 0/0 or otherwise undefined.
class DegenerateEvaluation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// An iterative solver or fit failed to reach its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A reflection trace without a detectable resonance dip.
class NoResonanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hbar
