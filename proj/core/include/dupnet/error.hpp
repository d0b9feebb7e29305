#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace dupnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or layer geometry that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values surfaced during quantization or training.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string layer = {})
      : Error(what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

// Config-text problems; line is 1-based, 0 when the error is not tied to a line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Binary containers, images and raw tensors.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace dupnet
