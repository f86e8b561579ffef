#pragma once

#include <stdexcept>
#include <string>

namespace omnifuse {

/// Base class for all omnifuse failures.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor dimension mismatch; message names the offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An operation's precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Component used before initialization (e.g. encoder without weights).
class StateError : public Error {
public:
    using Error::Error;
};

/// Malformed file on disk (checkpoint, records, config).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Sequence-budget overflow: assembled sequence does not fit max_seq_len.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Image preprocessing failure (resolution mismatch etc.).
class PreprocessError : public Error {
public:
    using Error::Error;
};

} // namespace omnifuse
