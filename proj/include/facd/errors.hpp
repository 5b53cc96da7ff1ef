#pragma once

#include <stdexcept>
#include <string>

namespace facd {

/// Base class for all errors raised by the library. Everything thrown on
/// purpose derives from this; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidConfigError : public Error {
public:
    using Error::Error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

/// Evaluation point outside the unit interval.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Design matrix cannot support the requested fit (too few distinct points,
/// effective degrees of freedom exhaust the sample, ...).
class DegenerateDesignError : public Error {
public:
    using Error::Error;
};

/// A feature has no usable observations.
class FeatureEmptyError : public Error {
public:
    using Error::Error;
};

/// The two datasets do not describe the same subjects.
class PairedDataError : public Error {
public:
    using Error::Error;
};

/// No positive eigenvalue survived; the estimated kernel carries no signal.
class EmptySpectrumError : public Error {
public:
    using Error::Error;
};

/// Contradictory duplicate rows in an input file.
class ConflictError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace facd
