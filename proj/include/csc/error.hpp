#pragma once

#include <stdexcept>
#include <string>

namespace csc {

/// Error type thrown by every module for contract violations and I/O failures.
class CscError : public std::runtime_error {
 public:
  explicit CscError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace csc
