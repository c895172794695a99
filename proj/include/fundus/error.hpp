#pragma once

#include <stdexcept>
#include <string>

namespace fundus {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Encoded payload could not be parsed as PNG or JPEG.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// A precondition on arguments was violated.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// No circular information field could be located.
class FieldDetectionError : public Error {
public:
    using Error::Error;
};

/// No viable optic disc candidate survived selection.
class DiscMissingError : public Error {
public:
    using Error::Error;
};

/// Weighted kappa is undefined because the expected disagreement is zero.
class DegenerateAgreement : public Error {
public:
    using Error::Error;
};

/// Unknown job or case identifier.
class NotFound : public Error {
public:
    using Error::Error;
};

/// Request is well-formed but the resource is not in a state that allows it.
class Conflict : public Error {
public:
    using Error::Error;
};

/// Upload exceeds the configured size limit.
class PayloadTooLarge : public Error {
public:
    using Error::Error;
};

/// Persistent store read/write failure.
class StorageError : public Error {
public:
    using Error::Error;
};

} // namespace fundus
