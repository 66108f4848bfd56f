#include "pv/errors.hpp"

namespace pv {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::load: return "load";
    case ErrorKind::argument: return "argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::provenance: return "provenance";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::backend: return "backend";
    case ErrorKind::validation: return "validation";
    case ErrorKind::runtime: return "runtime";
  }
  return "unknown";
}

bool Error::is_validation() const noexcept {
  switch (kind_) {
    case ErrorKind::shape:
    case ErrorKind::config:
    case ErrorKind::load:
    case ErrorKind::argument:
    case ErrorKind::ingestion:
    case ErrorKind::validation:
      return true;
    default:
      return false;
  }
}

}  // namespace pv
