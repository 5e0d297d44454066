#pragma once

#include <stdexcept>
#include <string>

namespace heatmapbcc {

/// Malformed input files or configuration values.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Failed factorizations, non-finite intermediates and the like.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Files that cannot be opened or written.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace heatmapbcc
