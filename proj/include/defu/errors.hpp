#pragma once

#include <stdexcept>
#include <string>

namespace defu {

/// Axis of a 4-D tensor in batch-channel-height-width order.
enum class Axis { Batch = 0, Channel = 1, Height = 2, Width = 3, None = -1 };

const char* axis_name(Axis axis);

/// Shape or dimension contract violated. Carries the offending axis when one
/// can be named.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(Axis axis, const std::string& what);
  explicit DimensionError(const std::string& what);

  Axis axis() const noexcept { return axis_; }

 private:
  Axis axis_;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input data could not be read or is malformed (missing files, bad PNGs).
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint magic/version mismatch or structurally invalid content.
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Checkpoint truncated or checksum mismatch.
class IntegrityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation was recorded on a tape but has no gradient rule.
class UnsupportedOpError : public std::logic_error {
  using std::logic_error::logic_error;
};

/// API misuse, e.g. calling backward on a non-scalar node.
class ContractError : public std::logic_error {
  using std::logic_error::logic_error;
};

/// A metric is undefined for the given input (e.g. AUC with one class).
class DegenerateInputError : public std::domain_error {
  using std::domain_error::domain_error;
};

/// Non-finite values appeared during training or a primitive.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace defu
