#include "defu/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "defu/data/image_io.hpp"
#include "defu/data/transforms.hpp"
#include "defu/errors.hpp"

namespace defu::data {

namespace fs = std::filesystem;

const char* source_name(Source source) {
  switch (source) {
    case Source::Montgomery: return "montgomery";
    case Source::Shenzhen: return "shenzhen";
    case Source::Synthetic: return "synthetic";
  }
  return "?";
}

Source parse_source(const std::string& text) {
  if (text == "montgomery") return Source::Montgomery;
  if (text == "shenzhen") return Source::Shenzhen;
  if (text == "synthetic") return Source::Synthetic;
  throw DataError("unknown source '" + text + "'");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + text + "'");
}

Sample load_sample(const SampleFiles& files, std::size_t height,
                   std::size_t width) {
  if (files.masks.empty()) {
    throw DataError("sample '" + files.id + "' has no mask files");
  }
  Sample s;
  s.id = files.id;
  s.source = files.source;
  Tensor image = read_image(files.image);
  Tensor mask = read_mask(files.masks.front());
  for (std::size_t k = 1; k < files.masks.size(); ++k) {
    const Tensor other = read_mask(files.masks[k]);
    if (other.shape() != mask.shape()) {
      throw DataError("mask files of '" + files.id + "' differ in size");
    }
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      mask[i] = (mask[i] >= 0.5f || other[i] >= 0.5f) ? 1.0f : 0.0f;
    }
  }
  if (mask.shape() != image.shape()) {
    std::clog << "warning: mask of '" << files.id << "' is "
              << to_string(mask.shape()) << " but the image is "
              << to_string(image.shape()) << "; both are resized\n";
  }
  s.image = resize_image(image, height, width);
  s.mask = resize_mask(mask, height, width);
  return s;
}

namespace {

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<SampleFiles> scan_directory(const std::string& root) {
  if (!fs::is_directory(root)) {
    throw DataError("data directory '" + root + "' does not exist");
  }
  std::vector<SampleFiles> out;
  std::size_t skipped = 0;

  const fs::path mont = fs::path(root) / "montgomery";
  for (const auto& id : png_stems(mont / "images")) {
    const fs::path left = mont / "masks" / "left" / (id + ".png");
    const fs::path right = mont / "masks" / "right" / (id + ".png");
    if (!fs::exists(left) || !fs::exists(right)) {
      ++skipped;
      continue;
    }
    out.push_back({id, Source::Montgomery,
                   (mont / "images" / (id + ".png")).string(),
                   {left.string(), right.string()}});
  }

  const fs::path shen = fs::path(root) / "shenzhen";
  for (const auto& id : png_stems(shen / "images")) {
    fs::path mask = shen / "masks" / (id + ".png");
    if (!fs::exists(mask)) mask = shen / "masks" / (id + "_mask.png");
    if (!fs::exists(mask)) {
      ++skipped;
      continue;
    }
    out.push_back({id, Source::Shenzhen,
                   (shen / "images" / (id + ".png")).string(),
                   {mask.string()}});
  }
  if (skipped) {
    std::clog << "note: skipped " << skipped << " images without masks\n";
  }
  if (out.empty()) {
    throw DataError("no samples found under '" + root +
                    "' (expected montgomery/ and/or shenzhen/ subdirectories)");
  }
  return out;
}

std::vector<Sample> synth_dataset(std::size_t n, std::size_t size,
                                  std::uint64_t seed) {
  if (size < 8) throw DataError("synthetic images must be at least 8x8");
  std::vector<Sample> out;
  out.reserve(n);
  const double s = static_cast<double>(size);
  constexpr double kEdge = 1.0;  // logistic edge width, pixels
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = sample_stream(seed, 0x53594e5448ull, i);
    auto u = [&rng](double lo, double hi) {
      return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    struct Ellipse {
      double cx, cy, a, b, angle;
    };
    const Ellipse lungs[2] = {
        {u(0.28, 0.36) * s, u(0.45, 0.55) * s, u(0.10, 0.16) * s,
         u(0.20, 0.30) * s, u(-10, 10) * std::numbers::pi / 180},
        {u(0.64, 0.72) * s, u(0.45, 0.55) * s, u(0.10, 0.16) * s,
         u(0.20, 0.30) * s, u(-10, 10) * std::numbers::pi / 180},
    };
    const double background = u(0.5, 0.7);
    const double lung = u(0.15, 0.3);
    std::normal_distribution<double> noise(0.0, 0.04);

    Sample smp;
    smp.id = "synth_" + std::to_string(i);
    smp.source = Source::Synthetic;
    smp.image = Tensor({1, 1, size, size});
    smp.mask = Tensor({1, 1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        double weight = 0;
        bool inside = false;
        for (const Ellipse& e : lungs) {
          const double dx = static_cast<double>(x) - e.cx;
          const double dy = static_cast<double>(y) - e.cy;
          const double px = std::cos(e.angle) * dx + std::sin(e.angle) * dy;
          const double py = -std::sin(e.angle) * dx + std::cos(e.angle) * dy;
          const double r = std::sqrt((px / e.a) * (px / e.a) + (py / e.b) * (py / e.b));
          const double dist = (r - 1.0) * std::min(e.a, e.b);
          weight = std::max(weight, 1.0 / (1.0 + std::exp(dist / kEdge)));
          inside = inside || r <= 1.0;
        }
        const double v = background * (1 - weight) + lung * weight + noise(rng);
        const std::size_t k = y * size + x;
        smp.image[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        smp.mask[k] = inside ? 1.0f : 0.0f;
      }
    }
    out.push_back(std::move(smp));
  }
  return out;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(),
      [split](const ManifestEntry& e) { return e.split == split; }));
}

std::size_t DatasetManifest::count(Source source) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(),
      [source](const ManifestEntry& e) { return e.source == source; }));
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.id);
  }
  return out;
}

std::string DatasetManifest::to_text() const {
  std::ostringstream os;
  os << "# seed = " << seed << '\n';
  for (const auto& [k, v] : metadata) os << "# " << k << " = " << v << '\n';
  for (const auto& e : entries) {
    os << e.id << '\t' << source_name(e.source) << '\t' << split_name(e.split)
       << '\n';
  }
  return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos || eq < 2) {
        throw DataError("malformed manifest header: " + line);
      }
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 3);
      if (key == "seed") {
        m.seed = std::stoull(value);
      } else {
        m.metadata[key] = value;
      }
      continue;
    }
    std::istringstream fields(line);
    std::string id, source, split;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, source, '\t') ||
        !std::getline(fields, split)) {
      throw DataError("malformed manifest line: " + line);
    }
    if (!ids.insert(id).second) throw DataError("duplicate manifest id " + id);
    m.entries.push_back({id, parse_source(source), parse_split(split)});
  }
  return m;
}

namespace {

void add_source_counts(DatasetManifest& m) {
  for (Source s : {Source::Montgomery, Source::Shenzhen, Source::Synthetic}) {
    if (const auto n = m.count(s)) m.metadata[source_name(s)] = std::to_string(n);
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

DatasetManifest split_dataset(std::span<const SampleKey> samples,
                              const SplitCounts& counts, std::uint64_t seed) {
  const std::size_t need = counts.train + counts.val + counts.test;
  if (need > samples.size()) {
    throw DataError("split needs " + std::to_string(need) + " samples but only " +
                    std::to_string(samples.size()) + " are available");
  }
  DatasetManifest m;
  m.seed = seed;
  const auto order = shuffled(samples.size(), seed);
  for (std::size_t k = 0; k < need; ++k) {
    const Split split = k < counts.train               ? Split::Train
                        : k < counts.train + counts.val ? Split::Val
                                                        : Split::Test;
    const SampleKey& s = samples[order[k]];
    m.entries.push_back({s.id, s.source, split});
  }
  add_source_counts(m);
  return m;
}

DatasetManifest split_cross(std::span<const SampleKey> samples,
                            Source train_source, std::size_t val_count,
                            std::uint64_t seed) {
  std::vector<SampleKey> pool, test;
  for (const auto& s : samples) (s.source == train_source ? pool : test).push_back(s);
  if (pool.size() <= val_count) {
    throw DataError(std::string("not enough ") + source_name(train_source) +
                    " samples for a validation split of " +
                    std::to_string(val_count));
  }
  if (test.empty()) throw DataError("cross split has no test samples");
  DatasetManifest m;
  m.seed = seed;
  m.metadata["cross_train_source"] = source_name(train_source);
  const auto order = shuffled(pool.size(), seed);
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const SampleKey& s = pool[order[k]];
    m.entries.push_back({s.id, s.source, k < pool.size() - val_count ? Split::Train : Split::Val});
  }
  for (const auto& s : test) m.entries.push_back({s.id, s.source, Split::Test});
  add_source_counts(m);
  return m;
}

void make_batch(std::span<const Sample> samples,
                std::span<const std::size_t> indices, Tensor& images,
                Tensor& masks) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape first = samples[indices[0]].image.shape();
  const Shape batch{indices.size(), 1, first.h, first.w};
  images = Tensor(batch);
  masks = Tensor(batch);
  const std::size_t plane = first.h * first.w;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= samples.size()) throw ContractError("batch index out of range");
    const Sample& s = samples[indices[b]];
    if (s.image.shape() != first || s.mask.shape() != first) {
      throw DimensionError("samples in a batch must share one shape");
    }
    std::copy_n(s.image.raw(), plane, images.raw() + b * plane);
    std::copy_n(s.mask.raw(), plane, masks.raw() + b * plane);
  }
}

}  // namespace defu::data
