#pragma once

#include <stdexcept>
#include <string>

namespace sdlg {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// q has no mass where p has mass, so CE/KL are infinite.
class SupportMismatch : public Error {
public:
    using Error::Error;
};

/// Enumeration or generation ran past its configured budget.
class BudgetExceeded : public Error {
public:
    using Error::Error;
};

/// A sequence is longer than the configured maximum length.
class LengthOverflow : public Error {
public:
    using Error::Error;
};

/// A model backend failed to answer (transport, missing table entry, ...).
class BackendError : public Error {
public:
    using Error::Error;
};

/// A backend answered with a malformed or inconsistent payload.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// AUROC requested with only one label class present.
class DegenerateLabels : public Error {
public:
    using Error::Error;
};

}  // namespace sdlg
