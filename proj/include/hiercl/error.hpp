#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace hiercl {

/// Library-wide exception. `code()` is a stable machine-parseable tag of the
/// form "module/condition" (e.g. "data/duplicate_image_id"); `what()` is the
/// human-readable message. The CLI prints both on one line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

inline void check(bool condition, const char* code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace hiercl
