#pragma once

#include <stdexcept>
#include <string>

namespace trapeval {

/// Base of every defined-error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Box configuration outside a loss's domain (degenerate hull, zero height).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Tensor or layer shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries line or element context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A parameter outside its documented range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Gradient request that cannot be served (unknown layer, no path to score).
class GraphError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}

  [[nodiscard]] int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace trapeval
