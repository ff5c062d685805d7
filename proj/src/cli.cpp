#include "defu/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "defu/checkpoint.hpp"
#include "defu/data/image_io.hpp"
#include "defu/data/transforms.hpp"
#include "defu/errors.hpp"
#include "defu/gradcheck_suite.hpp"
#include "defu/report.hpp"
#include "defu/train.hpp"

namespace defu {

namespace fs = std::filesystem;
using data::Split;

PreparedData prepare_data(const RunConfig& config,
                          const std::set<Split>& splits) {
  const DataConfig& d = config.data;
  PreparedData out;
  std::map<std::string, data::Sample> synthetic;
  std::map<std::string, data::SampleFiles> files;
  std::vector<data::SampleKey> keys;

  if (d.synthetic) {
    for (auto& s : data::synth_dataset(d.synthetic_count, d.size, config.seed)) {
      keys.push_back({s.id, s.source});
      synthetic.emplace(s.id, std::move(s));
    }
  } else {
    for (auto& f : data::scan_directory(d.data_dir)) {
      keys.push_back({f.id, f.source});
      files.emplace(f.id, std::move(f));
    }
  }

  if (d.cross == CrossMode::None) {
    out.manifest = data::split_dataset(keys, d.split, config.seed);
  } else {
    const auto source = d.cross == CrossMode::M2S ? data::Source::Montgomery
                                                  : data::Source::Shenzhen;
    std::size_t pool = 0;
    for (const auto& k : keys) pool += k.source == source;
    const auto val = static_cast<std::size_t>(
        std::lround(d.cross_val_fraction * static_cast<double>(pool)));
    out.manifest = data::split_cross(keys, source, val, config.seed);
  }

  for (const auto& e : out.manifest.entries) {
    if (!splits.count(e.split)) continue;
    data::Sample s;
    if (d.synthetic) {
      s = synthetic.at(e.id);
    } else {
      s = data::load_sample(files.at(e.id), d.size, d.size);
      s.mask = data::dilate_mask(s.mask, d.dilate_radius, d.dilate_iterations);
    }
    switch (e.split) {
      case Split::Train: out.train.push_back(std::move(s)); break;
      case Split::Val: out.val.push_back(std::move(s)); break;
      case Split::Test: out.test.push_back(std::move(s)); break;
    }
  }
  return out;
}

namespace {

struct CommonFlags {
  std::string config;
  std::string data_dir;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool synthetic = false;
  std::optional<std::size_t> size;
  std::string cross;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI run configuration");
  cmd->add_option("--data-dir", f.data_dir, "Dataset root directory");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_flag("--synthetic", f.synthetic, "Use the synthetic dataset");
  cmd->add_option("--size", f.size, "Square image size after resize");
  cmd->add_option("--cross", f.cross, "Cross-source protocol")
      ->check(CLI::IsMember({"m2s", "s2m"}));
}

RunConfig resolve_config(const CommonFlags& f, const std::string& fallback_ini) {
  RunConfig c;
  if (!f.config.empty()) {
    c = RunConfig::load(f.config);
  } else if (!fallback_ini.empty() && fs::exists(fallback_ini)) {
    c = RunConfig::load(fallback_ini);
  }
  if (!f.data_dir.empty()) {
    c.data.data_dir = f.data_dir;
    c.data.synthetic = false;
  }
  if (f.synthetic) c.data.synthetic = true;
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.size) c.data.size = *f.size;
  if (!f.cross.empty()) c.data.cross = parse_cross(f.cross);
  if (c.name.empty()) c.name = fs::path(c.out_dir).filename().string();
  return c;
}

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_summary(std::ostream& out, const std::string& label,
                   const MetricsReport& r) {
  out << label << ":";
  for (const auto& m : metric_names()) out << ' ' << m << '=' << fixed(metric_value(r, m));
  out << " dice_raw=" << fixed(r.dice_raw) << '\n';
}

void write_evaluation(const std::string& dir, const std::string& prefix,
                      const Evaluation& ev) {
  write_text((fs::path(dir) / (prefix + "_per_image.csv")).string(),
             to_csv(evaluation_table(ev)));
  write_text((fs::path(dir) / (prefix + "_summary.csv")).string(),
             to_csv(evaluation_summary(ev)));
}

int cmd_train(const CommonFlags& flags, std::ostream& out) {
  RunConfig config = resolve_config(flags, "");
  config.validate();
  fs::create_directories(config.out_dir);
  const fs::path dir(config.out_dir);
  write_text((dir / "run.ini").string(), config.to_ini());

  PreparedData prepared = prepare_data(config);
  write_text((dir / "manifest.txt").string(), prepared.manifest.to_text());
  out << "data: " << prepared.train.size() << " train, " << prepared.val.size()
      << " val, " << prepared.test.size() << " test\n";

  Model model = Model::build(config.model, config.seed);
  out << "model: " << arch_name(config.model.arch) << ", "
      << model.count_params() << " parameters\n";
  Adam<float> optimizer(config.train.lr);

  std::ofstream log((dir / "metrics.csv").string(), std::ios::trunc);
  if (!log) throw DataError("cannot write metrics log under " + dir.string());
  CsvTable header;
  header.header = epoch_log_header();
  log << to_csv(header) << std::flush;

  const std::string best_path = (dir / "best.ckpt").string();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_model(
      model, optimizer, prepared.train, prepared.val, config.train, config.seed,
      [&](const EpochRecord& r) {
        CsvTable row;
        row.rows.push_back(epoch_log_row(r));
        log << to_csv(row).substr(1) << std::flush;  // drop empty header line
        if (r.improved) {
          save_checkpoint(best_path, model, &optimizer.state(), r.epoch);
        }
        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0).count();
        out << "epoch " << r.epoch << " lr=" << r.lr
            << " loss=" << fixed(r.train_loss) << " dice=" << fixed(r.train.dice);
        if (r.has_val) {
          out << " val_loss=" << fixed(r.val_loss) << " val_dice=" << fixed(r.val.dice);
        }
        out << (r.improved ? " *" : "") << " (" << fixed(secs, 1) << "s)\n"
            << std::flush;
      });
  save_checkpoint((dir / "last.ckpt").string(), model, &optimizer.state(),
                  result.history.size());
  out << "stopped: " << result.stop_reason << " after "
      << result.history.size() << " epochs; best epoch " << result.best_epoch
      << '\n';

  if (!prepared.test.empty()) {
    restore_checkpoint(best_path, model);
    const Evaluation ev =
        evaluate_model(model, prepared.test, config.train.threshold,
                       config.train.batch_size, config.data.auc_mode);
    write_evaluation(config.out_dir, "test", ev);
    print_summary(out, "test", ev.summary);
    if (config.data.cross != CrossMode::None) {
      out << "test dice/f1: " << fixed(ev.summary.dice) << "/"
          << fixed(ev.summary.f1) << '\n';
    }
  }
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& split_name, std::ostream& out) {
  const fs::path ckpt_dir = fs::path(checkpoint).parent_path();
  RunConfig config = resolve_config(flags, (ckpt_dir / "run.ini").string());
  if (flags.out.empty()) config.out_dir = ckpt_dir.empty() ? "." : ckpt_dir.string();
  auto loaded = load_checkpoint<float>(checkpoint);
  config.model = loaded.model.config();
  config.validate();

  std::set<Split> splits;
  if (split_name == "all") {
    splits = {Split::Train, Split::Val, Split::Test};
  } else {
    splits = {data::parse_split(split_name)};
  }
  PreparedData prepared = prepare_data(config, splits);
  std::vector<data::Sample> samples;
  for (auto* part : {&prepared.train, &prepared.val, &prepared.test}) {
    for (auto& s : *part) samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("split '" + split_name + "' is empty");

  const Evaluation ev =
      evaluate_model(loaded.model, samples, config.train.threshold,
                     config.train.batch_size, config.data.auc_mode);
  write_evaluation(config.out_dir, "eval_" + split_name, ev);
  print_summary(out, split_name + " (" + std::to_string(samples.size()) + " images)",
                ev.summary);
  if (config.data.cross != CrossMode::None) {
    out << "test dice/f1: " << fixed(ev.summary.dice) << "/" << fixed(ev.summary.f1)
        << '\n';
  }
  return kExitOk;
}

Tensor pad_to(const Tensor& t, std::size_t h, std::size_t w) {
  if (t.shape().h == h && t.shape().w == w) return t;
  Tensor out({1, 1, h, w});
  for (std::size_t y = 0; y < t.shape().h; ++y) {
    for (std::size_t x = 0; x < t.shape().w; ++x) out.at(0, 0, y, x) = t.at(0, 0, y, x);
  }
  return out;
}

Tensor crop_to(const Tensor& t, std::size_t h, std::size_t w) {
  if (t.shape().h == h && t.shape().w == w) return t;
  Tensor out({1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.at(0, 0, y, x) = t.at(0, 0, y, x);
  }
  return out;
}

int cmd_predict(const std::string& checkpoint, const std::string& input,
                const std::string& truth_path, const std::string& out_dir,
                std::optional<std::size_t> size, double threshold,
                std::ostream& out) {
  auto loaded = load_checkpoint<float>(checkpoint);
  Tensor image = data::read_image(input);
  if (size) image = data::resize_image(image, *size, *size);
  const std::size_t h = image.shape().h, w = image.shape().w;
  const std::size_t d = loaded.model.config().divisor();
  const std::size_t ph = (h + d - 1) / d * d, pw = (w + d - 1) / d * d;
  if (ph != h || pw != w) {
    out << "note: input " << h << "x" << w << " padded to " << ph << "x" << pw
        << " (multiple of " << d << "); output cropped back\n";
  }
  const Tensor probs = crop_to(loaded.model.predict(pad_to(image, ph, pw)), h, w);
  const Tensor mask = defu::threshold(probs, static_cast<float>(threshold));

  const std::string stem = fs::path(input).stem().string();
  const fs::path dir(out_dir);
  const std::string mask_path = (dir / (stem + "_mask.png")).string();
  data::write_mask_png(mask_path, mask);
  out << "mask: " << mask_path << '\n';
  if (!truth_path.empty()) {
    Tensor truth = data::read_mask(truth_path);
    truth = data::resize_mask(truth, h, w);
    const std::string overlay = (dir / (stem + "_overlay.png")).string();
    data::write_overlay_png(overlay, image, truth, mask);
    out << "overlay: " << overlay << '\n';
    out << "dice: " << format_number(dice_coef<float>(truth.data(), mask.data()))
        << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const SuiteOptions& options, std::ostream& out) {
  std::size_t failures = 0;
  const auto entries = run_gradcheck_suite(options, [&](const SuiteEntry& e) {
    out << (e.passed ? "PASS " : "FAIL ") << std::left << std::setw(44) << e.name;
    if (e.forward_only) {
      out << ' ' << e.note;
    } else {
      out << " max_rel_err=" << std::scientific << std::setprecision(2)
          << e.result.max_rel_error << std::defaultfloat << " tol=" << e.tolerance
          << " coords=" << e.result.coords_checked;
      if (!e.note.empty()) out << " (" << e.note << ")";
    }
    out << " [" << fixed(e.seconds, 1) << "s]\n" << std::flush;
    failures += !e.passed;
  });
  const std::size_t covered = registry_coverage(entries);
  const std::size_t registered = ad::op_registry().size();
  out << "coverage: " << covered << "/" << registered << " registered ops\n";
  if (options.filter.empty() && covered != registered) ++failures;
  out << (failures ? "gradcheck FAILED (" + std::to_string(failures) + ")"
                   : std::string("gradcheck passed"))
      << '\n';
  return failures ? kExitNumeric : kExitOk;
}

int cmd_report(const std::string& runs_dir, const std::string& format,
               const std::string& out_dir, std::ostream& out) {
  const auto rows = collect_runs(runs_dir);
  const std::string text =
      format == "csv" ? render_report_csv(rows) : render_report_markdown(rows);
  if (out_dir.empty()) {
    out << text;
  } else {
    const std::string path =
        (fs::path(out_dir) / (format == "csv" ? "report.csv" : "report.md")).string();
    write_text(path, text);
    out << "report: " << path << " (" << rows.size() << " runs)\n";
  }
  return kExitOk;
}

std::optional<ad::OpKind> find_op(const std::string& name) {
  for (const auto& info : ad::op_registry()) {
    if (info.name == name) return info.kind;
  }
  return std::nullopt;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Dual-encoder fusion U-Net segmentation engine", "defu"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a model and log metrics");
  add_common(train, train_flags);

  CommonFlags eval_flags;
  std::string eval_ckpt, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--split", eval_split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  std::string pred_ckpt, pred_input, pred_truth, pred_out = ".";
  std::optional<std::size_t> pred_size;
  double pred_threshold = 0.5;
  auto* predict = app.add_subcommand("predict", "Segment one image");
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict->add_option("--input", pred_input, "Input PNG")->required();
  predict->add_option("--mask", pred_truth, "Ground-truth mask PNG for the overlay");
  predict->add_option("--out", pred_out, "Output directory");
  predict->add_option("--size", pred_size, "Resize the input to size x size first");
  predict->add_option("--threshold", pred_threshold, "Binarization threshold");

  SuiteOptions suite;
  std::string fault_op;
  double fault_factor = 1.5;
  bool quick = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--inject-fault", fault_op,
                        "Corrupt the gradient rule of this op (negative control)");
  gradcheck->add_option("--fault-factor", fault_factor, "Scale for --inject-fault");
  gradcheck->add_option("--filter", suite.filter, "Only run matching entries");
  gradcheck->add_option("--seed", suite.seed, "Random seed");
  gradcheck->add_flag("--quick", quick, "Skip the full-model checks");

  std::string runs_dir, format = "md", report_out;
  auto* report = app.add_subcommand("report", "Tabulate metrics across runs");
  report->add_option("--runs-dir", runs_dir, "Directory of run outputs")->required();
  report->add_option("--format", format, "Table format")
      ->check(CLI::IsMember({"csv", "md"}));
  report->add_option("--out", report_out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out);
    if (*eval) return cmd_eval(eval_flags, eval_ckpt, eval_split, out);
    if (*predict) {
      return cmd_predict(pred_ckpt, pred_input, pred_truth, pred_out, pred_size,
                         pred_threshold, out);
    }
    if (*gradcheck) {
      if (!fault_op.empty()) {
        const auto kind = find_op(fault_op);
        if (!kind) {
          err << "error: unknown op '" << fault_op << "'\n";
          return kExitUsage;
        }
        suite.faults.emplace_back(*kind, fault_factor);
      }
      suite.include_model = !quick;
      return cmd_gradcheck(suite, out);
    }
    if (*report) return cmd_report(runs_dir, format, report_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitData;
  } catch (const IntegrityError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace defu
