#pragma once

#include <stdexcept>
#include <string>

namespace mitodpm {

// Bad argument, malformed input, or violated precondition.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Timestep or frame index outside its valid range.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Operation called on an object that is not in the required state
// (e.g. an unscored series).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training diverged (NaN/Inf loss).
class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mitodpm
