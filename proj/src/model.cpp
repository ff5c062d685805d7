#include "defu/model.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "defu/errors.hpp"

namespace defu {

const char* arch_name(Arch arch) {
  return arch == Arch::DEFUNet ? "defunet" : "unet";
}

Arch parse_arch(const std::string& text) {
  if (text == "defunet") return Arch::DEFUNet;
  if (text == "unet") return Arch::UNetBaseline;
  throw ConfigError("unknown arch '" + text + "' (expected defunet or unet)");
}

std::vector<std::size_t> ModelConfig::filter_schedule() const {
  if (!filters.empty()) return filters;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t doubling = std::min(i, levels >= 2 ? levels - 2 : 0);
    const std::size_t shift = bottom_matches_previous ? doubling : i;
    out.push_back(base_filters << shift);
  }
  return out;
}

void ModelConfig::validate() const {
  if (levels < 2) throw ConfigError("levels must be at least 2");
  if (levels > 12) throw ConfigError("levels must be at most 12");
  if (in_channels == 0 || out_channels == 0) {
    throw ConfigError("channel counts must be positive");
  }
  if (units == 0) throw ConfigError("units must be at least 1");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("bn_momentum must be in (0, 1]");
  }
  if (filters.empty() && base_filters == 0) {
    throw ConfigError("base_filters must be positive");
  }
  const auto f = filter_schedule();
  if (f.size() != levels) {
    throw ConfigError("filter schedule has " + std::to_string(f.size()) +
                      " entries, expected " + std::to_string(levels));
  }
  if (std::find(f.begin(), f.end(), 0u) != f.end()) {
    throw ConfigError("filter widths must be positive");
  }
  if (bottom_matches_previous && f[levels - 1] != f[levels - 2]) {
    throw ConfigError("bottom level width " + std::to_string(f[levels - 1]) +
                      " must equal the level above it (" +
                      std::to_string(f[levels - 2]) + ")");
  }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

std::string to_text(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "arch = " << arch_name(arch) << '\n'
     << "levels = " << levels << '\n'
     << "base_filters = " << base_filters << '\n'
     << "filters = " << join(filters) << '\n'
     << "bottom_matches_previous = " << (bottom_matches_previous ? "true" : "false") << '\n'
     << "recurrence = " << recurrence << '\n'
     << "units = " << units << '\n'
     << "alpha = " << defu::to_text(alpha) << '\n'
     << "in_channels = " << in_channels << '\n'
     << "out_channels = " << out_channels << '\n'
     << "fuse_bottom = " << (fuse_bottom ? "true" : "false") << '\n'
     << "inception_batchnorm = " << (inception_batchnorm ? "true" : "false") << '\n'
     << "bn_momentum = " << defu::to_text(bn_momentum) << '\n'
     << "bn_eps = " << defu::to_text(bn_eps) << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate key " + key);
    if (key == "arch") {
      c.arch = parse_arch(value);
    } else if (key == "levels") {
      c.levels = to_size(key, value);
    } else if (key == "base_filters") {
      c.base_filters = to_size(key, value);
    } else if (key == "filters") {
      c.filters.clear();
      std::istringstream parts(value);
      std::string part;
      while (std::getline(parts, part, ',')) {
        part = trim(part);
        if (!part.empty()) c.filters.push_back(to_size(key, part));
      }
    } else if (key == "bottom_matches_previous") {
      c.bottom_matches_previous = to_bool(key, value);
    } else if (key == "recurrence") {
      c.recurrence = to_size(key, value);
    } else if (key == "units") {
      c.units = to_size(key, value);
    } else if (key == "alpha") {
      c.alpha = to_double(key, value);
    } else if (key == "in_channels") {
      c.in_channels = to_size(key, value);
    } else if (key == "out_channels") {
      c.out_channels = to_size(key, value);
    } else if (key == "fuse_bottom") {
      c.fuse_bottom = to_bool(key, value);
    } else if (key == "inception_batchnorm") {
      c.inception_batchnorm = to_bool(key, value);
    } else if (key == "bn_momentum") {
      c.bn_momentum = to_double(key, value);
    } else if (key == "bn_eps") {
      c.bn_eps = to_double(key, value);
    } else {
      throw ConfigError("unknown model key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

template <typename T>
SegmentationModel<T> SegmentationModel<T>::build(const ModelConfig& config,
                                                 std::uint64_t seed) {
  config.validate();
  SegmentationModel m;
  m.config_ = config;
  const auto f = config.filter_schedule();
  const std::size_t L = config.levels;

  nn::Rng rng(seed);
  nn::LayerOptions opt;
  opt.alpha = config.alpha;
  opt.batchnorm.momentum = config.bn_momentum;
  opt.batchnorm.eps = config.bn_eps;

  auto make_block = [&](const std::string& name, std::size_t in,
                        std::size_t out) -> std::unique_ptr<nn::Block<T>> {
    if (config.arch == Arch::DEFUNet) {
      return std::make_unique<nn::DcrcBlock<T>>(name, in, out, config.units,
                                                config.recurrence, opt, rng);
    }
    return std::make_unique<nn::DoubleConvBlock<T>>(name, in, out, opt, rng);
  };

  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t in = i == 0 ? config.in_channels : f[i - 1];
    m.encoder_.push_back(make_block("enc" + std::to_string(i + 1), in, f[i]));
  }
  if (config.arch == Arch::DEFUNet) {
    for (std::size_t i = 0; i + 1 < L; ++i) {
      m.inception_.push_back(std::make_unique<nn::InceptionDilationBlock<T>>(
          "inc" + std::to_string(i + 1), f[i], f[i + 1], opt, rng,
          config.inception_batchnorm));
    }
  }
  for (std::size_t i = 0; i + 1 < L; ++i) {
    m.decoder_.push_back(
        make_block("dec" + std::to_string(i + 1), f[i + 1] + f[i], f[i]));
  }
  m.head_ = std::make_unique<nn::Conv2d<T>>(
      "head", nn::conv_spec(f[0], config.out_channels, 1), rng);
  return m;
}

template <typename T>
void SegmentationModel<T>::check_input(const Shape& shape) const {
  if (shape.c != config_.in_channels) {
    throw DimensionError(Axis::Channel,
                         "model expects " + std::to_string(config_.in_channels) +
                             " input channels, got " + std::to_string(shape.c));
  }
  const std::size_t d = config_.divisor();
  if (shape.h % d != 0) {
    throw DimensionError(Axis::Height, "input height " +
                                           std::to_string(shape.h) +
                                           " is not divisible by " +
                                           std::to_string(d));
  }
  if (shape.w % d != 0) {
    throw DimensionError(Axis::Width, "input width " + std::to_string(shape.w) +
                                          " is not divisible by " +
                                          std::to_string(d));
  }
}

template <typename T>
ad::Var<T> SegmentationModel<T>::run(ad::Tape<T>& tape, const ad::Var<T>& input,
                                     Mode mode,
                                     std::vector<FusionStage<T>>* trace) {
  check_input(input.shape());
  const std::size_t L = config_.levels;
  const bool dual = config_.arch == Arch::DEFUNet;

  std::vector<ad::Var<T>> x(L), skip(L);
  ad::Var<T> y;
  x[0] = encoder_[0]->forward(tape, input, mode);
  skip[0] = x[0];
  y = x[0];
  if (trace) trace->push_back({x[0].value(), y.value(), skip[0].value()});
  for (std::size_t i = 1; i < L; ++i) {
    x[i] = encoder_[i]->forward(tape, ad::maxpool2d(x[i - 1]), mode);
    if (dual) {
      // Level 1 has nothing to fuse yet: its inception input is Y_1 = X_1.
      y = inception_[i - 1]->forward(tape, i == 1 ? x[0] : skip[i - 1], mode);
      skip[i] = ad::add(x[i], y);
    } else {
      skip[i] = x[i];
    }
    if (trace) {
      trace->push_back({x[i].value(), dual ? y.value() : x[i].value(),
                        skip[i].value()});
    }
  }

  ad::Var<T> d = config_.fuse_bottom ? skip[L - 1] : x[L - 1];
  for (std::size_t i = L - 1; i-- > 0;) {
    d = decoder_[i]->forward(
        tape, ad::concat_channels<T>({ad::upsample_nearest2x(d), skip[i]}),
        mode);
  }
  return ad::sigmoid(head_->forward(tape, d));
}

template <typename T>
ad::Var<T> SegmentationModel<T>::forward(ad::Tape<T>& tape,
                                         const ad::Var<T>& input, Mode mode) {
  return run(tape, input, mode, nullptr);
}

template <typename T>
BasicTensor<T> SegmentationModel<T>::predict(const BasicTensor<T>& input) {
  ad::Tape<T> tape(false);
  return run(tape, tape.constant(input), Mode::Eval, nullptr).value();
}

template <typename T>
std::vector<FusionStage<T>> SegmentationModel<T>::fusion_trace(
    const BasicTensor<T>& input, BasicTensor<T>* output) {
  std::vector<FusionStage<T>> trace;
  ad::Tape<T> tape(false);
  auto out = run(tape, tape.constant(input), Mode::Eval, &trace);
  if (output) *output = out.value();
  return trace;
}

template <typename T>
nn::StateRefs<T> SegmentationModel<T>::state() {
  nn::StateRefs<T> refs;
  for (auto& b : encoder_) b->collect(refs);
  for (auto& b : inception_) b->collect(refs);
  for (auto& b : decoder_) b->collect(refs);
  head_->collect(refs);
  return refs;
}

template <typename T>
std::vector<ad::Parameter<T>*> SegmentationModel<T>::parameters() {
  return state().params;
}

template <typename T>
std::vector<nn::NamedBuffer<T>> SegmentationModel<T>::buffers() {
  return state().buffers;
}

template <typename T>
std::size_t SegmentationModel<T>::count_params() {
  std::size_t total = 0;
  for (const auto* p : parameters()) total += p->value.numel();
  return total;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;

}  // namespace defu
