#pragma once

#include <stdexcept>
#include <string>

namespace fplab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class EmptyShard : public Error {
public:
    using Error::Error;
};

class EmptyAggregation : public Error {
public:
    using Error::Error;
};

class NumericDivergence : public Error {
public:
    using Error::Error;
};

class InvalidBatch : public Error {
public:
    using Error::Error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InvalidDataset : public Error {
public:
    using Error::Error;
};

/// Raised by run_federation; wraps a sub-operation failure with the round it happened in.
class RoundError : public Error {
public:
    RoundError(int round, const std::string& what)
        : Error("round " + std::to_string(round) + ": " + what), round_(round) {}
    int round() const noexcept { return round_; }

private:
    int round_;
};

}  // namespace fplab
