#pragma once

#include <stdexcept>
#include <string>

namespace kdts {

// User-facing problems: bad config values, missing files, malformed inputs.
// The CLI maps these to exit code 1.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal failures (divergence, broken invariants, IO corruption). Exit code 2.
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kdts
