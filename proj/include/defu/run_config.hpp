#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "defu/data/dataset.hpp"
#include "defu/model.hpp"
#include "defu/train.hpp"

namespace defu {

enum class CrossMode { None, M2S, S2M };

const char* cross_name(CrossMode mode);
CrossMode parse_cross(const std::string& text);

struct DataConfig {
  bool synthetic = false;
  std::string data_dir;
  std::size_t size = 512;  ///< square side after resize
  std::size_t synthetic_count = 704;
  data::SplitCounts split;
  CrossMode cross = CrossMode::None;
  double cross_val_fraction = 0.1;  ///< of the training-source pool
  std::size_t dilate_radius = 1;
  std::size_t dilate_iterations = 1;
  AucMode auc_mode = AucMode::PerImage;
};

/// Everything a run needs. Parsed from an INI file with sections [model],
/// [train], [augment], [data] and [run]; unknown sections or keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string name;  ///< label used by reports; defaults to the out dir name

  void validate() const;  // throws ConfigError
  std::string to_ini() const;
  static RunConfig parse_ini(const std::string& text);
  static RunConfig load(const std::string& path);
};

}  // namespace defu
