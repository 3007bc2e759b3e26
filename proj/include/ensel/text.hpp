#pragma once

#include <charconv>
#include <cstddef>
#include <istream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>

namespace ensel {

// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& token, const std::string& context) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::runtime_error(context + ": expected a number, got '" + token + "'");
  return v;
}

inline long long parse_int(const std::string& token, const std::string& context) {
  long long v = 0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::runtime_error(context + ": expected an integer, got '" + token + "'");
  return v;
}

// Whitespace-delimited token reader with error messages that name what was
// being read when the stream ran dry.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word(const std::string& context) {
    std::string t;
    if (!(in_ >> t)) throw std::runtime_error(context + ": unexpected end of input");
    return t;
  }

  double number(const std::string& context) { return parse_double(word(context), context); }

  std::size_t count(const std::string& context) {
    const long long v = parse_int(word(context), context);
    if (v < 0) throw std::runtime_error(context + ": negative count");
    return static_cast<std::size_t>(v);
  }

  bool at_end() {
    in_ >> std::ws;
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  std::istream& in_;
};

}  // namespace ensel
