#pragma once

#include <stdexcept>
#include <string>

namespace imts {

// Invalid shapes, axes, or extents handed to a tensor op or layer.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An operation was called outside its contract (non-scalar backward root,
// softmax over an empty support, loss over zero unmasked queries, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Bad model, training, or generation configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Unreadable, unwritable, or malformed files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dataset generation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace imts
