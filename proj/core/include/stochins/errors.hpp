#pragma once

#include <stdexcept>
#include <string>

namespace stochins {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user input: mesh parameters, region geometry, config values.
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

// Mismatched vector/field sizes between a mesh, tree and field.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

}  // namespace stochins
