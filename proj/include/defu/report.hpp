#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defu/metrics.hpp"
#include "defu/train.hpp"

namespace defu {

/// Plain comma-separated table (no quoting; fields must not contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index, or npos when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);
std::string to_csv(const CsvTable& table);
void write_text(const std::string& path, const std::string& text);

/// Round-trip formatting (%.17g); NaN becomes an empty cell.
std::string format_number(double v);
/// Empty or unparsable cells read as nullopt.
std::optional<double> parse_number(const std::string& cell);

/// Per-epoch training log: epoch, lr, train_loss, train_<metric>...,
/// val_loss, val_<metric>...
std::vector<std::string> epoch_log_header();
std::vector<std::string> epoch_log_row(const EpochRecord& record);

/// One row per image followed by nothing else; the summary goes to its own
/// table via evaluation_summary().
CsvTable evaluation_table(const Evaluation& evaluation);
CsvTable evaluation_summary(const Evaluation& evaluation);

struct ReportRow {
  std::string run;
  std::string split;  ///< "test" from a test summary, else "val" (best epoch)
  std::map<std::string, std::optional<double>> metrics;
};

/// Scans each subdirectory of `runs_dir` (sorted) for test_summary.csv, or
/// failing that metrics.csv, and extracts the seven reported metrics.
std::vector<ReportRow> collect_runs(const std::string& runs_dir);
std::string render_report_csv(const std::vector<ReportRow>& rows);
std::string render_report_markdown(const std::vector<ReportRow>& rows);

}  // namespace defu
