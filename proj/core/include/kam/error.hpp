#pragma once

#include <stdexcept>
#include <string>

namespace kam {

// Base of every error thrown by the library. The CLI maps the concrete
// kinds onto exit codes (parameter → 2, I/O → 3, numerical → 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Out-of-range argument or inconsistent shapes.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of a function (e.g. k > c).
class DomainError : public Error {
public:
    using Error::Error;
};

// Failure of a numerical procedure: non-finite values, ill-conditioning,
// failed line searches, non-PSD spectra.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// A file was read but its content does not match the documented format.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace kam
