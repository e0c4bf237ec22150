#pragma once

#include <stdexcept>
#include <string>

namespace dsqn {

// Thrown when a caller violates a documented precondition. Deliberately a
// logic_error: these indicate bugs at the call site, not recoverable state.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

[[noreturn]] inline void contract_fail(const char* cond, const char* file, int line,
                                       const std::string& msg) {
  std::string what = std::string(file) + ":" + std::to_string(line) + ": requirement failed: ";
  what += cond;
  if (!msg.empty()) {
    what += " (";
    what += msg;
    what += ")";
  }
  throw ContractViolation(what);
}

}  // namespace detail

}  // namespace dsqn

#define DSQN_REQUIRE(cond, msg)                                                  \
  do {                                                                           \
    if (!(cond)) ::dsqn::detail::contract_fail(#cond, __FILE__, __LINE__, (msg)); \
  } while (0)
