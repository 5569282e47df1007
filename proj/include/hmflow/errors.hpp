#pragma once

#include <stdexcept>
#include <string>

namespace hmflow {

// Error taxonomy used across the library. Each kind carries a stable
// machine-readable name so the CLI can emit one-line diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format_error", m) {}
};
struct LengthError : Error {
  explicit LengthError(const std::string& m) : Error("length_error", m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape_error", m) {}
};
struct ValueError : Error {
  explicit ValueError(const std::string& m) : Error("value_error", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};
struct PartitionError : Error {
  explicit PartitionError(const std::string& m) : Error("partition_error", m) {}
};
struct DegenerateRegionError : Error {
  explicit DegenerateRegionError(const std::string& m)
      : Error("degenerate_region_error", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error("training_error", m) {}
};

}  // namespace hmflow
