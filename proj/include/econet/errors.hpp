#pragma once

#include <stdexcept>
#include <string>

namespace econet {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the service maps subclasses to HTTP codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Training needs at least one scribble of each class.
class InsufficientScribbles : public Error {
public:
    using Error::Error;
};

// Loss became NaN/Inf during online training.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

}  // namespace econet
