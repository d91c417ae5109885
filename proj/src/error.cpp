#include "recbase/error.hpp"

namespace recbase {

std::string shape_to_string(const std::vector<size_t>& shape) {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kShape:
      return 3;
    case ErrorKind::kDivergence:
      return 4;
    case ErrorKind::kMetric:
      return 5;
    case ErrorKind::kMismatch:
      return 6;
    case ErrorKind::kState:
      return 7;
  }
  return 1;
}

}  // namespace recbase
