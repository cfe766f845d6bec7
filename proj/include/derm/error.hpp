#pragma once

#include <stdexcept>
#include <string>

namespace derm {

/// Root of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error record.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DERM_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

DERM_DEFINE_ERROR(DimensionError, "dimension")
DERM_DEFINE_ERROR(ContractError, "contract")
DERM_DEFINE_ERROR(ParameterError, "parameter")
DERM_DEFINE_ERROR(NumericError, "numeric")
DERM_DEFINE_ERROR(BatchSizeError, "batch_size")
DERM_DEFINE_ERROR(WiringError, "wiring")
DERM_DEFINE_ERROR(ConfigError, "config")
DERM_DEFINE_ERROR(DegenerateChannelError, "degenerate_channel")
DERM_DEFINE_ERROR(InpaintError, "inpaint")
DERM_DEFINE_ERROR(IngestionError, "ingestion")
DERM_DEFINE_ERROR(StratificationError, "stratification")
DERM_DEFINE_ERROR(DegenerateMetricError, "degenerate_metric")
DERM_DEFINE_ERROR(DivergenceError, "divergence")
DERM_DEFINE_ERROR(DiversityError, "diversity")
DERM_DEFINE_ERROR(IoError, "io")
DERM_DEFINE_ERROR(CheckpointError, "checkpoint")

#undef DERM_DEFINE_ERROR

}  // namespace derm
