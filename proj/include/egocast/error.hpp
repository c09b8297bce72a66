#pragma once

#include <stdexcept>
#include <string>

namespace egocast {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input layer missing, unreadable, or violating its schema.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Argument or data outside an operation's precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Upstream artifact changed since the consuming stage's producer ran.
class StaleArtifactError : public Error {
public:
    using Error::Error;
};

}  // namespace egocast
