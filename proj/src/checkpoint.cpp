#include "defu/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <vector>

#include "defu/errors.hpp"

namespace defu {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'E', 'F', 'U'};

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

std::size_t dtype_size(std::uint8_t tag) {
  if (tag == 0) return 4;
  if (tag == 1) return 8;
  throw FormatError("unknown dtype tag " + std::to_string(tag));
}

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  template <typename T>
  void put_record(const std::string& name, const std::vector<std::uint64_t>& dims,
                  const T* values, std::size_t count) {
    put_string(name);
    put(dtype_tag<T>());
    put(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) put(d);
    put_raw(values, count * sizeof(T));
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : p_(data), end_(data + size) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, p_, sizeof(V));
    p_ += sizeof(V);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* out = p_;
    p_ += n;
    return out;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) {
      throw IntegrityError("checkpoint is truncated");
    }
  }
  const unsigned char* p_;
  const unsigned char* end_;
};

struct Record {
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> dims;
  const unsigned char* payload = nullptr;
  std::size_t count = 0;
};

struct Parsed {
  std::vector<unsigned char> bytes;  // owns the payloads
  std::string config_text;
  std::uint64_t epoch = 0;
  bool has_optimizer = false;
  std::uint64_t step = 0;
  double lr = 0, beta1 = 0, beta2 = 0, eps = 0;
  std::map<std::string, Record> records;
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t checksum(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  while (n > 0) {
    const std::size_t chunk = std::min<std::size_t>(n, 1u << 30);
    crc = crc32(crc, data, static_cast<uInt>(chunk));
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Parsed parse(const std::string& path) {
  Parsed out;
  out.bytes = read_file(path);
  const auto& b = out.bytes;
  if (b.size() < sizeof(kMagic) + 4) {
    throw IntegrityError("checkpoint '" + path + "' is truncated (" +
                         std::to_string(b.size()) + " bytes)");
  }
  if (std::memcmp(b.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, b.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (b.size() < 12) throw IntegrityError("checkpoint is truncated");
  std::uint32_t stored = 0;
  std::memcpy(&stored, b.data() + b.size() - 4, 4);
  if (checksum(b.data(), b.size() - 4) != stored) {
    throw IntegrityError("checkpoint '" + path +
                         "' failed its checksum (truncated or corrupted)");
  }

  Reader r(b.data() + 8, b.size() - 12);
  out.config_text = r.get_string();
  out.epoch = r.get<std::uint64_t>();
  out.has_optimizer = r.get<std::uint8_t>() != 0;
  if (out.has_optimizer) {
    out.step = r.get<std::uint64_t>();
    out.lr = r.get<double>();
    out.beta1 = r.get<double>();
    out.beta2 = r.get<double>();
    out.eps = r.get<double>();
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    Record rec;
    rec.dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    rec.count = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      rec.dims.push_back(r.get<std::uint64_t>());
      rec.count *= rec.dims.back();
    }
    rec.payload = r.take(rec.count * dtype_size(rec.dtype));
    if (!out.records.emplace(std::move(name), std::move(rec)).second) {
      throw FormatError("duplicate tensor record in checkpoint");
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor records");
  return out;
}

std::vector<std::uint64_t> dims_of(const Shape& s) {
  return {s.n, s.c, s.h, s.w};
}

std::string dims_text(const std::vector<std::uint64_t>& dims) {
  std::string out = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out + ")";
}

template <typename T>
const Record& expect(const Parsed& p, const std::string& name,
                     const std::vector<std::uint64_t>& dims) {
  const auto it = p.records.find(name);
  if (it == p.records.end()) {
    throw FormatError("checkpoint has no tensor '" + name +
                      "' (model configuration mismatch?)");
  }
  if (it->second.dtype != dtype_tag<T>()) {
    throw FormatError("tensor '" + name + "' has the wrong dtype");
  }
  if (it->second.dims != dims) {
    throw FormatError("tensor '" + name + "' is " +
                      dims_text(it->second.dims) + " in the checkpoint but " +
                      dims_text(dims) + " in the model");
  }
  return it->second;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, SegmentationModel<T>& model,
                     const AdamState<T>* optimizer, std::uint64_t epoch) {
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put_string(model.config().to_text());
  w.put(epoch);
  w.put(static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    w.put(optimizer->step);
    w.put(optimizer->lr);
    w.put(optimizer->beta1);
    w.put(optimizer->beta2);
    w.put(optimizer->eps);
  }
  const auto params = model.parameters();
  const auto buffers = model.buffers();
  std::uint32_t count = static_cast<std::uint32_t>(params.size() + buffers.size());
  if (optimizer) {
    count += static_cast<std::uint32_t>(optimizer->m.size() + optimizer->v.size());
  }
  w.put(count);
  for (const auto* p : params) {
    w.put_record(p->name, dims_of(p->value.shape()), p->value.raw(),
                 p->value.numel());
  }
  for (const auto& b : buffers) {
    w.put_record(b.name, {b.data->size()}, b.data->data(), b.data->size());
  }
  if (optimizer) {
    for (const auto& [name, t] : optimizer->m) {
      w.put_record("adam.m/" + name, dims_of(t.shape()), t.raw(), t.numel());
    }
    for (const auto& [name, t] : optimizer->v) {
      w.put_record("adam.v/" + name, dims_of(t.shape()), t.raw(), t.numel());
    }
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = checksum(bytes.data(), bytes.size());
  w.put(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

template <typename T>
std::uint64_t restore_checkpoint(const std::string& path,
                                 SegmentationModel<T>& model,
                                 std::optional<AdamState<T>>* optimizer) {
  const Parsed p = parse(path);
  const auto params = model.parameters();
  const auto buffers = model.buffers();

  // Validate everything first so a failure leaves the model untouched.
  std::vector<const Record*> param_recs, buffer_recs;
  for (const auto* prm : params) {
    param_recs.push_back(&expect<T>(p, prm->name, dims_of(prm->value.shape())));
  }
  for (const auto& b : buffers) {
    buffer_recs.push_back(&expect<T>(p, b.name, {b.data->size()}));
  }
  std::optional<AdamState<T>> state;
  std::size_t expected = params.size() + buffers.size();
  if (p.has_optimizer) {
    state.emplace();
    state->step = p.step;
    state->lr = p.lr;
    state->beta1 = p.beta1;
    state->beta2 = p.beta2;
    state->eps = p.eps;
    for (const auto& [name, rec] : p.records) {
      const bool is_m = name.rfind("adam.m/", 0) == 0;
      const bool is_v = name.rfind("adam.v/", 0) == 0;
      if (!is_m && !is_v) continue;
      if (rec.dtype != dtype_tag<T>() || rec.dims.size() != 4) {
        throw FormatError("optimizer tensor '" + name + "' is malformed");
      }
      BasicTensor<T> t({rec.dims[0], rec.dims[1], rec.dims[2], rec.dims[3]});
      std::memcpy(t.raw(), rec.payload, rec.count * sizeof(T));
      (is_m ? state->m : state->v).emplace(name.substr(7), std::move(t));
      ++expected;
    }
  }
  if (expected != p.records.size()) {
    throw FormatError("checkpoint holds " + std::to_string(p.records.size()) +
                      " tensors but the model accounts for " +
                      std::to_string(expected) +
                      " (model configuration mismatch?)");
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    std::memcpy(params[i]->value.raw(), param_recs[i]->payload,
                param_recs[i]->count * sizeof(T));
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    std::memcpy(buffers[i].data->data(), buffer_recs[i]->payload,
                buffer_recs[i]->count * sizeof(T));
  }
  if (optimizer) *optimizer = std::move(state);
  return p.epoch;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const ModelConfig config = read_checkpoint_config(path);
  LoadedCheckpoint<T> out{SegmentationModel<T>::build(config, 0), std::nullopt, 0};
  out.epoch = restore_checkpoint(path, out.model, &out.optimizer);
  return out;
}

ModelConfig read_checkpoint_config(const std::string& path) {
  const Parsed p = parse(path);
  try {
    return ModelConfig::parse(p.config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint configuration is invalid: ") +
                      e.what());
  }
}

template void save_checkpoint<float>(const std::string&, SegmentationModel<float>&,
                                     const AdamState<float>*, std::uint64_t);
template void save_checkpoint<double>(const std::string&,
                                      SegmentationModel<double>&,
                                      const AdamState<double>*, std::uint64_t);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);
template std::uint64_t restore_checkpoint<float>(
    const std::string&, SegmentationModel<float>&,
    std::optional<AdamState<float>>*);
template std::uint64_t restore_checkpoint<double>(
    const std::string&, SegmentationModel<double>&,
    std::optional<AdamState<double>>*);

}  // namespace defu
