#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "defu/tensor.hpp"

namespace defu::data {

enum class Source { Montgomery, Shenzhen, Synthetic };
enum class Split { Train, Val, Test };

const char* source_name(Source source);
Source parse_source(const std::string& text);
const char* split_name(Split split);
Split parse_split(const std::string& text);

struct Sample {
  Tensor image;  ///< (1,1,H,W) in [0,1]
  Tensor mask;   ///< (1,1,H,W) in {0,1}
  Source source = Source::Synthetic;
  std::string id;
};

/// On-disk location of one sample. Montgomery lists two mask files.
struct SampleFiles {
  std::string id;
  Source source = Source::Synthetic;
  std::string image;
  std::vector<std::string> masks;
};

/// Loads, merges (logical OR) the masks at native resolution, then resizes
/// image (bilinear) and mask (nearest) to height x width.
Sample load_sample(const SampleFiles& files, std::size_t height,
                   std::size_t width);

/// Finds samples under `root`:
///   montgomery/images/<id>.png, montgomery/masks/{left,right}/<id>.png
///   shenzhen/images/<id>.png,   shenzhen/masks/<id>.png (or <id>_mask.png)
/// Images without masks are skipped. Result is ordered by source, then id.
std::vector<SampleFiles> scan_directory(const std::string& root);

/// Two soft-edged ellipses on a noisy background with matching binary masks.
/// Sample i depends only on (seed, i).
std::vector<Sample> synth_dataset(std::size_t n, std::size_t size,
                                  std::uint64_t seed);

struct SampleKey {
  std::string id;
  Source source = Source::Synthetic;
};

struct ManifestEntry {
  std::string id;
  Source source = Source::Synthetic;
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;

  std::size_t count(Split split) const;
  std::size_t count(Source source) const;
  std::vector<std::string> ids(Split split) const;

  /// `# key = value` header lines, then one `id<TAB>source<TAB>split` line
  /// per entry.
  std::string to_text() const;
  static DatasetManifest parse(const std::string& text);

  bool operator==(const DatasetManifest&) const = default;
};

struct SplitCounts {
  std::size_t train = 528;
  std::size_t val = 76;
  std::size_t test = 100;
};

/// Seeded shuffle, then contiguous train/val/test assignment. Samples beyond
/// the requested counts are left out. Throws DataError if too few samples.
DatasetManifest split_dataset(std::span<const SampleKey> samples,
                              const SplitCounts& counts, std::uint64_t seed);

/// Cross-source protocol: every sample of `train_source` goes to the training
/// pool (of which `val_count` are held out for validation after a seeded
/// shuffle); every sample of the other source is test data.
DatasetManifest split_cross(std::span<const SampleKey> samples,
                            Source train_source, std::size_t val_count,
                            std::uint64_t seed);

/// Stacks the given samples into (N,1,H,W) image and mask batches.
void make_batch(std::span<const Sample> samples,
                std::span<const std::size_t> indices, Tensor& images,
                Tensor& masks);

}  // namespace defu::data
