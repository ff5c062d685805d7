#pragma once

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "defu/data/dataset.hpp"
#include "defu/run_config.hpp"

namespace defu {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,    ///< bad arguments or configuration
  kExitData = 2,     ///< unreadable or malformed inputs
  kExitNumeric = 3,  ///< non-finite training state or failed gradient check
};

/// Entry point behind the `defu` executable. Never throws; every failure is
/// reported on `err` and mapped to an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

struct PreparedData {
  data::DatasetManifest manifest;
  std::vector<data::Sample> train;
  std::vector<data::Sample> val;
  std::vector<data::Sample> test;
};

/// Builds the manifest for `config` and loads the samples of the requested
/// splits (synthetic generation or directory scan, resize, mask dilation).
PreparedData prepare_data(const RunConfig& config,
                          const std::set<data::Split>& splits = {
                              data::Split::Train, data::Split::Val,
                              data::Split::Test});

}  // namespace defu
