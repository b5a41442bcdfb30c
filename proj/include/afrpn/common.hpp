#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace afrpn {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Zero-area or self-intersecting polygon where a simple one is required.
struct DegenerateQuad : Error {
  using Error::Error;
};

struct InvalidFactor : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct InvalidNorm : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct EmptyBatch : Error {
  using Error::Error;
};

// Malformed annotation line; carries the 1-based line number.
struct ParseError : Error {
  int line = 0;
  ParseError(int line_no, const std::string& msg)
      : Error("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};

struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct CompatError : Error {
  using Error::Error;
};

struct JoinError : Error {
  using Error::Error;
};

// NaN/Inf encountered where training must abort.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace afrpn
