// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gleak {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kInvalidSpec,
  kNonFinite,
  kPrecondition,
  kRankDeficient,
  kOutOfRange,
  kSingular,
  kIo,
  kConfig,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a code and a short context
// string (op name, layer, offset...) in addition to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string context, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " [" + context +
                           "]: " + message),
        code_(code),
        context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

[[noreturn]] inline void fail(ErrorCode code, std::string context,
                              const std::string& message) {
  throw Error(code, std::move(context), message);
}

inline void require(bool cond, ErrorCode code, const char* context,
                    const std::string& message) {
  if (!cond) fail(code, context, message);
}

}  // namespace gleak
