#pragma once

#include <stdexcept>
#include <string>

namespace bpi {

// Error taxonomy. Parameter misuse throws std::invalid_argument /
// std::out_of_range directly; everything that maps to a CLI exit code
// gets a named type here.

// Record does not conform to the registered schema.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

// Duplicate feature name / keyword registration.
class RegistrationError : public std::runtime_error {
public:
    explicit RegistrationError(const std::string& what) : std::runtime_error(what) {}
};

// Query references a feature id that was never registered.
class LookupError : public std::runtime_error {
public:
    explicit LookupError(const std::string& what) : std::runtime_error(what) {}
};

// Operation invoked in a state that does not admit it (e.g. compressing
// a tree that is not full).
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// Resume token does not belong to the queried feature set, or is malformed.
class TokenError : public std::runtime_error {
public:
    explicit TokenError(const std::string& what) : std::runtime_error(what) {}
};

// I/O failure while flushing index state.
class PersistenceError : public std::runtime_error {
public:
    explicit PersistenceError(const std::string& what) : std::runtime_error(what) {}
};

// Committed on-disk state fails validation (truncated file, bad checksum).
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bpi
