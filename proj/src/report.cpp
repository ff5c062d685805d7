#include "defu/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "defu/errors.hpp"
#include "defu/run_config.hpp"

namespace defu {

namespace fs = std::filesystem;

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? std::string::npos
                            : static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += sep;
    out += cells[i];
  }
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      cells.resize(t.header.size());
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_csv(text.str());
}

std::string to_csv(const CsvTable& table) {
  std::string out = join(table.header) + "\n";
  for (const auto& row : table.rows) out += join(row) + "\n";
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<std::string> epoch_log_header() {
  std::vector<std::string> h = {"epoch", "lr", "train_loss"};
  for (const auto& m : metric_names()) h.push_back("train_" + m);
  h.push_back("val_loss");
  for (const auto& m : metric_names()) h.push_back("val_" + m);
  return h;
}

std::vector<std::string> epoch_log_row(const EpochRecord& r) {
  std::vector<std::string> row = {std::to_string(r.epoch), format_number(r.lr),
                                  format_number(r.train_loss)};
  for (const auto& m : metric_names()) row.push_back(format_number(metric_value(r.train, m)));
  row.push_back(r.has_val ? format_number(r.val_loss) : "");
  for (const auto& m : metric_names()) {
    row.push_back(r.has_val ? format_number(metric_value(r.val, m)) : "");
  }
  return row;
}

namespace {

std::vector<std::string> report_columns() {
  std::vector<std::string> cols = metric_names();
  cols.push_back("dice_raw");
  cols.push_back("dice_loss");
  return cols;
}

std::vector<std::string> report_cells(const MetricsReport& r) {
  std::vector<std::string> cells;
  for (const auto& m : report_columns()) cells.push_back(format_number(metric_value(r, m)));
  return cells;
}

}  // namespace

CsvTable evaluation_table(const Evaluation& ev) {
  CsvTable t;
  t.header = {"id"};
  for (const auto& m : report_columns()) t.header.push_back(m);
  for (std::size_t i = 0; i < ev.per_image.size(); ++i) {
    std::vector<std::string> row = {ev.ids[i]};
    for (auto& c : report_cells(ev.per_image[i])) row.push_back(std::move(c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable evaluation_summary(const Evaluation& ev) {
  CsvTable t;
  t.header = {"images"};
  for (const auto& m : report_columns()) t.header.push_back(m);
  std::vector<std::string> row = {std::to_string(ev.per_image.size())};
  for (auto& c : report_cells(ev.summary)) row.push_back(std::move(c));
  t.rows.push_back(std::move(row));
  return t;
}

namespace {

std::string run_label(const fs::path& dir) {
  const fs::path ini = dir / "run.ini";
  if (fs::exists(ini)) {
    try {
      const RunConfig c = RunConfig::load(ini.string());
      if (!c.name.empty()) return c.name;
    } catch (const std::exception&) {
      // fall back to the directory name
    }
  }
  return dir.filename().string();
}

std::optional<double> cell(const CsvTable& t, std::size_t row,
                           const std::string& name) {
  const std::size_t col = t.column(name);
  if (col == std::string::npos || row >= t.rows.size()) return std::nullopt;
  return parse_number(t.rows[row][col]);
}

}  // namespace

std::vector<ReportRow> collect_runs(const std::string& runs_dir) {
  if (!fs::is_directory(runs_dir)) {
    throw DataError("runs directory '" + runs_dir + "' does not exist");
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  std::vector<ReportRow> rows;
  for (const auto& dir : dirs) {
    ReportRow row;
    row.run = run_label(dir);
    if (fs::exists(dir / "test_summary.csv")) {
      const CsvTable t = read_csv((dir / "test_summary.csv").string());
      row.split = "test";
      for (const auto& m : metric_names()) row.metrics[m] = cell(t, 0, m);
    } else if (fs::exists(dir / "metrics.csv")) {
      const CsvTable t = read_csv((dir / "metrics.csv").string());
      row.split = "val";
      // Best epoch by validation loss; the last epoch when none is logged.
      std::size_t best = t.rows.empty() ? 0 : t.rows.size() - 1;
      double best_loss = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto v = cell(t, i, "val_loss");
        if (v && *v < best_loss) {
          best_loss = *v;
          best = i;
        }
      }
      for (const auto& m : metric_names()) row.metrics[m] = cell(t, best, "val_" + m);
    } else {
      continue;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_report_csv(const std::vector<ReportRow>& rows) {
  CsvTable t;
  t.header = {"model", "split"};
  for (const auto& m : metric_names()) t.header.push_back(m);
  for (const auto& r : rows) {
    std::vector<std::string> cells = {r.run, r.split};
    for (const auto& m : metric_names()) {
      const auto it = r.metrics.find(m);
      cells.push_back(it != r.metrics.end() && it->second ? format_number(*it->second) : "");
    }
    t.rows.push_back(std::move(cells));
  }
  return to_csv(t);
}

std::string render_report_markdown(const std::vector<ReportRow>& rows) {
  static const std::map<std::string, std::string> titles = {
      {"dice", "Dice"},     {"ac", "AC"},         {"iou", "IOU"},
      {"precision", "Precision"}, {"recall", "Recall"}, {"f1", "F1 Score"},
      {"auc", "AUC"}};
  std::ostringstream os;
  os << "| Model | Split |";
  for (const auto& m : metric_names()) os << ' ' << titles.at(m) << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < metric_names().size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) {
    os << "| " << r.run << " | " << r.split << " |";
    for (const auto& m : metric_names()) {
      const auto it = r.metrics.find(m);
      os << ' ';
      if (it != r.metrics.end() && it->second) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *it->second);
        os << buf;
      }
      os << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace defu
