#pragma once

#include <charconv>
#include <string>

#include "hiercl/error.hpp"

namespace hiercl {

/// Shortest decimal string that round-trips the double exactly. Keeps CSV
/// output byte-stable across runs while losing no precision.
inline std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  check(ec == std::errc(), "format/to_chars", "format_double: conversion failed");
  return std::string(buf, ptr);
}

}  // namespace hiercl
