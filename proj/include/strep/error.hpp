#pragma once

#include <stdexcept>
#include <string>

namespace strep {

enum class ErrorKind {
    Config,    // bad configuration or usage
    Data,      // missing/corrupt/inconsistent data files
    Shape,     // tensor extents do not line up
    Numeric,   // non-finite values, divergence, singular systems
    State,     // API called in the wrong order
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace strep
