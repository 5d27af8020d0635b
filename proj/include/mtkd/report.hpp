#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtkd/trainer.hpp"

namespace mtkd {

// One line of a per-run metrics CSV.
struct MetricsRow {
  std::string suite;
  std::string grid_point;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double l_clip = 0, l_kl = 0, l_mse = 0, total = 0;
  double acc = 0, recall1 = 0, recall5 = 0;
  double alpha[4] = {0, 0, 0, 0};  // empty slots are 0
  double fw_iters = 0, lr = 0, wall_ms = 0;
};

inline constexpr std::size_t kMaxLoggedTeachers = 4;

std::string metrics_csv_header();
std::vector<MetricsRow> metrics_rows(const std::string& suite, const std::string& grid_point, std::uint64_t seed,
                                     const RunMetrics& metrics, bool record_timing);
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);  // DataError

// epoch, stream (applied | lsr | dsw), alpha_0..alpha_3
std::string format_weights_csv(const RunMetrics& metrics);

struct SummaryRow {
  std::string suite;
  std::string grid_point;
  std::size_t seeds = 0;
  double acc_mean = 0, acc_std = 0;
  double recall1_mean = 0, recall5_mean = 0;
  std::size_t rank = 0;  // 1 = best mean accuracy within the suite
  bool best = false;
};

// Final-epoch rows grouped by (suite, grid_point) in first-seen order.
// Sample standard deviation; 0 for a single seed. Ties in mean accuracy keep
// first-seen order.
std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);

// Long format for plotting: suite, grid_point, seed, epoch, metric, value.
std::string format_long_csv(const std::vector<MetricsRow>& rows);

struct Report {
  std::vector<SummaryRow> summary;
  std::string table;  // one block per suite, best row flagged
};

// Reads <dir>/runs/*.csv, writes <dir>/report_long.csv and returns the table.
// NoRunsFound when there is nothing to read.
Report build_report(const std::filesystem::path& dir);

std::string render_table(const std::vector<SummaryRow>& rows);

}  // namespace mtkd
