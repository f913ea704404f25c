#pragma once

#include <stdexcept>
#include <string>

namespace hivis {

// All recoverable failures in the library throw Error; the CLI maps them to
// exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

}  // namespace hivis
