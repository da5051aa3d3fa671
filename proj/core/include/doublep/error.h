// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace doublep {

enum class ErrorKind {
  kInvalidArgument,  // precondition or invariant violated by the caller
  kIo,               // file could not be opened, read or written
  kFormat,           // a DPKV file is malformed
};

// Single exception type for the library. The message is the short diagnostic
// the CLI prints verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(const std::string& message) {
  throw Error(ErrorKind::kInvalidArgument, message);
}

inline void Require(bool condition, const std::string& message) {
  if (!condition) Fail(message);
}

}  // namespace doublep
