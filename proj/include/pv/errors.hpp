#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pv {

enum class ErrorKind {
  shape,
  config,
  load,
  argument,
  numeric,
  provenance,
  ingestion,
  backend,
  validation,
  runtime,
};

std::string_view to_string(ErrorKind kind);

/// Base of every error raised by the toolkit. `stage` names the pipeline step
/// that failed when the error crossed a composite operation (e.g. "saliency").
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }
  void set_stage(std::string stage) { stage_ = std::move(stage); }

  /// Validation-class failures map to CLI exit code 1, everything else to 2.
  bool is_validation() const noexcept;

 private:
  ErrorKind kind_;
  std::string stage_;
};

#define PV_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

PV_DEFINE_ERROR(ShapeError, ErrorKind::shape)
PV_DEFINE_ERROR(ConfigError, ErrorKind::config)
PV_DEFINE_ERROR(LoadError, ErrorKind::load)
PV_DEFINE_ERROR(ArgumentError, ErrorKind::argument)
PV_DEFINE_ERROR(NumericError, ErrorKind::numeric)
PV_DEFINE_ERROR(ProvenanceError, ErrorKind::provenance)
PV_DEFINE_ERROR(IngestionError, ErrorKind::ingestion)
PV_DEFINE_ERROR(BackendError, ErrorKind::backend)
PV_DEFINE_ERROR(ValidationError, ErrorKind::validation)

#undef PV_DEFINE_ERROR

}  // namespace pv
