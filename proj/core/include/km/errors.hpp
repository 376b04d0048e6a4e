#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace km {

/// Parse failure in a kernel expression; `offset` is the byte position of the
/// first offending character in the input string.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Linear-algebra failure (e.g. Cholesky breakdown after the jitter ladder).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every restart of a hyperparameter search failed numerically.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Gram spectrum with no positive eigenvalues, or a similarly unusable geometry.
class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A proposal step has no unevaluated candidates left.
class ExhaustedLibraryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Prompt template rendering failed (missing or leftover slot).
class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or incomplete runtime configuration (CLI flags, env vars, config files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// HTTP / transport failure talking to an LLM endpoint.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace km
