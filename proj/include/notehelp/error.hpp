#pragma once

#include <stdexcept>
#include <string>

namespace notehelp {

// Domain failure: bad input data, failed fit, exhausted retries. The CLI maps
// this to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller misuse (bad flag combinations, invalid configuration). Exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace notehelp
