#pragma once

#include <stdexcept>
#include <string>

namespace legs4 {

/// Base error for every failure the library reports. Messages name the
/// offending field or resource so callers can surface them verbatim.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

} // namespace legs4
