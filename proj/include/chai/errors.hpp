#ifndef CHAI_ERRORS_HPP
#define CHAI_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace chai {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes, sizes or arguments that violate an operation's preconditions.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericDomainError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. replaying a consumed tape.
class UsageError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Unknown magic bytes or an unsupported file layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Truncated payloads and inconsistent headers.
class CorruptFile : public Error {
public:
    using Error::Error;
};

class DuplicateIdError : public Error {
public:
    using Error::Error;
};

/// The labels cannot produce a single valid triplet for the requested regime.
class DatasetStructureError : public Error {
public:
    using Error::Error;
};

/// A metric is undefined for its input (e.g. AUC over one class).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

}

#endif
