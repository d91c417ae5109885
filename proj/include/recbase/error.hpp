#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace recbase {

/// Failure category. Each maps to a distinct process exit code in the CLI.
enum class ErrorKind {
  kConfig,      // malformed or unknown configuration
  kData,        // missing, truncated or inconsistent input data
  kDivergence,  // training produced a non-finite loss
  kMetric,      // metric undefined for the given input (e.g. single-class AUC)
  kMismatch,    // checkpoint / vocabulary / dimension mismatch
  kShape,       // tensor shape incompatibility
  kState,       // operation invoked in the wrong lifecycle state
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

std::string shape_to_string(const std::vector<size_t>& shape);

/// Shape mismatch carrying both offending shapes.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, std::vector<size_t> lhs, std::vector<size_t> rhs)
      : Error(ErrorKind::kShape,
              op + ": shape mismatch " + shape_to_string(lhs) + " vs " + shape_to_string(rhs)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}
  const std::vector<size_t>& lhs() const noexcept { return lhs_; }
  const std::vector<size_t>& rhs() const noexcept { return rhs_; }

 private:
  std::vector<size_t> lhs_;
  std::vector<size_t> rhs_;
};

int exit_code_for(ErrorKind kind) noexcept;

}  // namespace recbase
