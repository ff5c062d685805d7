#include "defu/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "defu/errors.hpp"

namespace defu {

namespace pt = boost::property_tree;

const char* cross_name(CrossMode mode) {
  switch (mode) {
    case CrossMode::None: return "none";
    case CrossMode::M2S: return "m2s";
    case CrossMode::S2M: return "s2m";
  }
  return "?";
}

CrossMode parse_cross(const std::string& text) {
  if (text == "none" || text.empty()) return CrossMode::None;
  if (text == "m2s") return CrossMode::M2S;
  if (text == "s2m") return CrossMode::S2M;
  throw ConfigError("unknown cross mode '" + text + "' (expected m2s or s2m)");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.size == 0 || data.size % model.divisor() != 0) {
    throw ConfigError("data size " + std::to_string(data.size) +
                      " must be a positive multiple of " +
                      std::to_string(model.divisor()));
  }
  if (!data.synthetic && data.data_dir.empty()) {
    throw ConfigError("no data: set data.data_dir or data.synthetic = true");
  }
  if (data.synthetic && data.cross != CrossMode::None) {
    throw ConfigError("cross-source splits need real data");
  }
  if (data.synthetic) {
    const auto need = data.split.train + data.split.val + data.split.test;
    if (need > data.synthetic_count) {
      throw ConfigError("split counts need " + std::to_string(need) +
                        " samples but synthetic_count is " +
                        std::to_string(data.synthetic_count));
    }
  }
  if (!(data.cross_val_fraction >= 0 && data.cross_val_fraction < 1)) {
    throw ConfigError("cross_val_fraction must be in [0, 1)");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const char* b(bool v) { return v ? "true" : "false"; }

/// Typed reads that reject unknown keys in a section.
class Section {
 public:
  Section(const pt::ptree& tree, std::string name)
      : tree_(tree), name_(std::move(name)) {}

  template <typename V>
  void get(const std::string& key, V& out) {
    used_.insert(key);
    const auto node = tree_.get_child_optional(key);
    if (!node) return;
    try {
      out = node->template get_value<V>();
    } catch (const pt::ptree_error&) {
      throw ConfigError("invalid value for " + name_ + "." + key + ": '" +
                        node->data() + "'");
    }
  }
  void get(const std::string& key, bool& out) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else throw ConfigError("invalid boolean for " + name_ + "." + key);
  }
  void finish() const {
    for (const auto& [key, _] : tree_) {
      if (!used_.count(key)) {
        throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os << "[model]\n" << model.to_text();
  const auto& t = train;
  os << "\n[train]\n"
     << "batch_size = " << t.batch_size << '\n'
     << "max_epochs = " << t.max_epochs << '\n'
     << "lr = " << fmt(t.lr) << '\n'
     << "plateau_factor = " << fmt(t.plateau_factor) << '\n'
     << "plateau_patience = " << t.plateau_patience << '\n'
     << "min_lr = " << fmt(t.min_lr) << '\n'
     << "early_stopping = " << b(t.early_stopping) << '\n'
     << "early_stop_patience = " << t.early_stop_patience << '\n'
     << "augment = " << b(t.augment) << '\n'
     << "threshold = " << fmt(t.threshold) << '\n'
     << "target_train_dice = " << fmt(t.target_train_dice) << '\n';
  const auto& a = t.augmentation;
  os << "\n[augment]\n"
     << "rotation_deg = " << fmt(a.rotation_deg) << '\n'
     << "shift = " << fmt(a.shift) << '\n'
     << "shear_deg = " << fmt(a.shear_deg) << '\n'
     << "zoom = " << fmt(a.zoom) << '\n'
     << "flip_prob = " << fmt(a.flip_prob) << '\n';
  const auto& d = data;
  os << "\n[data]\n"
     << "synthetic = " << b(d.synthetic) << '\n'
     << "data_dir = " << d.data_dir << '\n'
     << "size = " << d.size << '\n'
     << "synthetic_count = " << d.synthetic_count << '\n'
     << "train = " << d.split.train << '\n'
     << "val = " << d.split.val << '\n'
     << "test = " << d.split.test << '\n'
     << "cross = " << cross_name(d.cross) << '\n'
     << "cross_val_fraction = " << fmt(d.cross_val_fraction) << '\n'
     << "dilate_radius = " << d.dilate_radius << '\n'
     << "dilate_iterations = " << d.dilate_iterations << '\n'
     << "auc_mode = " << (d.auc_mode == AucMode::Pooled ? "pooled" : "per_image")
     << '\n';
  os << "\n[run]\n"
     << "seed = " << seed << '\n'
     << "out_dir = " << out_dir << '\n'
     << "name = " << name << '\n';
  return os.str();
}

RunConfig RunConfig::parse_ini(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() +
                      " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  const pt::ptree empty;
  auto section = [&](const char* name) -> const pt::ptree& {
    const auto child = tree.get_child_optional(name);
    return child ? *child : empty;
  };
  for (const auto& [name, node] : tree) {
    if (name != "model" && name != "train" && name != "augment" &&
        name != "data" && name != "run") {
      throw ConfigError("unknown section [" + name + "]");
    }
    if (node.data().size()) throw ConfigError("key '" + name + "' outside a section");
  }

  {
    std::ostringstream model_text;
    for (const auto& [key, node] : section("model")) {
      model_text << key << " = " << node.data() << '\n';
    }
    c.model = ModelConfig::parse(model_text.str());
  }
  {
    Section s(section("train"), "train");
    auto& t = c.train;
    s.get("batch_size", t.batch_size);
    s.get("max_epochs", t.max_epochs);
    s.get("lr", t.lr);
    s.get("plateau_factor", t.plateau_factor);
    s.get("plateau_patience", t.plateau_patience);
    s.get("min_lr", t.min_lr);
    s.get("early_stopping", t.early_stopping);
    s.get("early_stop_patience", t.early_stop_patience);
    s.get("augment", t.augment);
    s.get("threshold", t.threshold);
    s.get("target_train_dice", t.target_train_dice);
    s.finish();
  }
  {
    Section s(section("augment"), "augment");
    auto& a = c.train.augmentation;
    s.get("rotation_deg", a.rotation_deg);
    s.get("shift", a.shift);
    s.get("shear_deg", a.shear_deg);
    s.get("zoom", a.zoom);
    s.get("flip_prob", a.flip_prob);
    s.finish();
  }
  {
    Section s(section("data"), "data");
    auto& d = c.data;
    std::string cross = cross_name(d.cross);
    std::string auc = "per_image";
    s.get("synthetic", d.synthetic);
    s.get("data_dir", d.data_dir);
    s.get("size", d.size);
    s.get("synthetic_count", d.synthetic_count);
    s.get("train", d.split.train);
    s.get("val", d.split.val);
    s.get("test", d.split.test);
    s.get("cross", cross);
    s.get("cross_val_fraction", d.cross_val_fraction);
    s.get("dilate_radius", d.dilate_radius);
    s.get("dilate_iterations", d.dilate_iterations);
    s.get("auc_mode", auc);
    s.finish();
    d.cross = parse_cross(cross);
    if (auc == "per_image") d.auc_mode = AucMode::PerImage;
    else if (auc == "pooled") d.auc_mode = AucMode::Pooled;
    else throw ConfigError("auc_mode must be per_image or pooled");
  }
  {
    Section s(section("run"), "run");
    s.get("seed", c.seed);
    s.get("out_dir", c.out_dir);
    s.get("name", c.name);
    s.finish();
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_ini(text.str());
}

}  // namespace defu
