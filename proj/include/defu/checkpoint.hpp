#pragma once

// Binary layout (little-endian):
//   "DEFU" | u32 version | u32 len, config text | u64 epoch
//   | u8 has_optimizer [u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps]
//   | u32 count | count x record | u32 crc32 of every preceding byte
// record: u32 len, name | u8 dtype (0 f32, 1 f64) | u8 rank | rank x u64 dim
//         | raw values

#include <cstdint>
#include <optional>
#include <string>

#include "defu/model.hpp"
#include "defu/optim.hpp"

namespace defu {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, SegmentationModel<T>& model,
                     const AdamState<T>* optimizer = nullptr,
                     std::uint64_t epoch = 0);

template <typename T>
struct LoadedCheckpoint {
  SegmentationModel<T> model;
  std::optional<AdamState<T>> optimizer;
  std::uint64_t epoch = 0;
};

/// Throws FormatError on bad magic, version, dtype or content and
/// IntegrityError on truncation or checksum mismatch.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

/// Loads parameters and buffers into an existing model. Every tensor is
/// validated against the model before any value is overwritten.
template <typename T>
std::uint64_t restore_checkpoint(const std::string& path,
                                 SegmentationModel<T>& model,
                                 std::optional<AdamState<T>>* optimizer = nullptr);

/// Model configuration stored in a checkpoint, without loading tensors.
ModelConfig read_checkpoint_config(const std::string& path);

}  // namespace defu
