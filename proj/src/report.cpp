#include "mtkd/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mtkd/errors.hpp"

namespace mtkd {

namespace {

// Shortest round-trippable form, so CSVs are exact and reproducible.
std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::DataError, "metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size() && !s.empty() && s[0] != '-') return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::DataError, "metrics CSV line " + std::to_string(line) + ": bad integer '" + s + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* const kLongMetrics[] = {"l_clip", "l_kl", "l_mse", "total", "acc", "recall1", "recall5",
                                    "alpha_0", "alpha_1", "alpha_2", "alpha_3", "fw_iters", "lr", "wall_ms"};

std::vector<double> metric_values(const MetricsRow& r) {
  return {r.l_clip,   r.l_kl,     r.l_mse,    r.total,    r.acc,      r.recall1, r.recall5,
          r.alpha[0], r.alpha[1], r.alpha[2], r.alpha[3], r.fw_iters, r.lr,      r.wall_ms};
}

}  // namespace

std::string metrics_csv_header() {
  return "suite,grid_point,seed,epoch,l_clip,l_kl,l_mse,total,acc,recall1,recall5,"
         "alpha_0,alpha_1,alpha_2,alpha_3,fw_iters,lr,wall_ms";
}

std::vector<MetricsRow> metrics_rows(const std::string& suite, const std::string& grid_point, std::uint64_t seed,
                                     const RunMetrics& metrics, bool record_timing) {
  std::vector<MetricsRow> rows;
  for (const auto& e : metrics.epochs) {
    MetricsRow r;
    r.suite = suite;
    r.grid_point = grid_point;
    r.seed = seed;
    r.epoch = e.epoch;
    r.l_clip = e.l_clip;
    r.l_kl = e.l_kl;
    r.l_mse = e.l_mse;
    r.total = e.total;
    r.acc = e.eval.accuracy;
    r.recall1 = e.eval.recall1;
    r.recall5 = e.eval.recall5;
    for (std::size_t k = 0; k < std::min(e.alpha.size(), kMaxLoggedTeachers); ++k) r.alpha[k] = e.alpha[k];
    r.fw_iters = e.fw_iters;
    r.lr = e.lr;
    r.wall_ms = record_timing ? e.wall_ms : 0.0;
    rows.push_back(r);
  }
  return rows;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& r : rows) {
    out += r.suite + "," + r.grid_point + "," + std::to_string(r.seed) + "," + std::to_string(r.epoch);
    for (double v : {r.l_clip, r.l_kl, r.l_mse, r.total, r.acc, r.recall1, r.recall5, r.alpha[0], r.alpha[1],
                     r.alpha[2], r.alpha[3], r.fw_iters, r.lr, r.wall_ms})
      out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  const auto lines = lines_of(text);
  require(!lines.empty() && lines[0] == metrics_csv_header(), ErrorCode::DataError,
          "metrics CSV header does not match the expected columns");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    require(f.size() == 18, ErrorCode::DataError, "metrics CSV line " + std::to_string(i + 1) + " has " +
                                                      std::to_string(f.size()) + " fields, expected 18");
    MetricsRow r;
    r.suite = f[0];
    r.grid_point = f[1];
    r.seed = parse_uint(f[2], i + 1);
    r.epoch = parse_uint(f[3], i + 1);
    double* dst[] = {&r.l_clip,   &r.l_kl,     &r.l_mse,    &r.total,    &r.acc,      &r.recall1, &r.recall5,
                     &r.alpha[0], &r.alpha[1], &r.alpha[2], &r.alpha[3], &r.fw_iters, &r.lr,      &r.wall_ms};
    for (std::size_t k = 0; k < 14; ++k) *dst[k] = parse_double(f[4 + k], i + 1);
    rows.push_back(r);
  }
  return rows;
}

std::string format_weights_csv(const RunMetrics& metrics) {
  std::string out = "epoch,stream,alpha_0,alpha_1,alpha_2,alpha_3\n";
  auto emit = [&](std::size_t epoch, const char* stream, const std::vector<double>& a) {
    if (a.empty()) return;
    out += std::to_string(epoch) + "," + stream;
    for (std::size_t k = 0; k < kMaxLoggedTeachers; ++k) out += "," + num(k < a.size() ? a[k] : 0.0);
    out += "\n";
  };
  for (const auto& e : metrics.epochs) {
    emit(e.epoch, "applied", e.alpha);
    emit(e.epoch, "lsr", e.lsr_alpha);
    emit(e.epoch, "dsw", e.dsw_alpha);
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  // Final epoch per (suite, grid_point, seed).
  std::map<std::tuple<std::string, std::string, std::uint64_t>, const MetricsRow*> last;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    const std::pair<std::string, std::string> key{r.suite, r.grid_point};
    if (std::find(order.begin(), order.end(), key) == order.end()) order.push_back(key);
    auto& slot = last[{r.suite, r.grid_point, r.seed}];
    if (slot == nullptr || r.epoch >= slot->epoch) slot = &r;
  }

  std::vector<SummaryRow> out;
  for (const auto& [suite, grid] : order) {
    std::vector<const MetricsRow*> finals;
    for (const auto& [key, row] : last)
      if (std::get<0>(key) == suite && std::get<1>(key) == grid) finals.push_back(row);
    SummaryRow s;
    s.suite = suite;
    s.grid_point = grid;
    s.seeds = finals.size();
    const double n = static_cast<double>(finals.size());
    for (const auto* r : finals) {
      s.acc_mean += r->acc / n;
      s.recall1_mean += r->recall1 / n;
      s.recall5_mean += r->recall5 / n;
    }
    if (finals.size() > 1) {
      double ss = 0.0;
      for (const auto* r : finals) ss += (r->acc - s.acc_mean) * (r->acc - s.acc_mean);
      s.acc_std = std::sqrt(ss / (n - 1.0));
    }
    out.push_back(s);
  }

  for (auto& s : out) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const auto& o = out[j];
      if (o.suite != s.suite) continue;
      if (o.acc_mean > s.acc_mean || (o.acc_mean == s.acc_mean && &o < &s)) ++better;
    }
    s.rank = better + 1;
    s.best = s.rank == 1;
  }
  return out;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "suite,grid_point,seeds,acc_mean,acc_std,recall1_mean,recall5_mean,rank,best\n";
  for (const auto& s : rows)
    out += s.suite + "," + s.grid_point + "," + std::to_string(s.seeds) + "," + num(s.acc_mean) + "," +
           num(s.acc_std) + "," + num(s.recall1_mean) + "," + num(s.recall5_mean) + "," + std::to_string(s.rank) +
           "," + (s.best ? "1" : "0") + "\n";
  return out;
}

std::string format_long_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "suite,grid_point,seed,epoch,metric,value\n";
  for (const auto& r : rows) {
    const auto values = metric_values(r);
    for (std::size_t k = 0; k < values.size(); ++k)
      out += r.suite + "," + r.grid_point + "," + std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," +
             kLongMetrics[k] + "," + num(values[k]) + "\n";
  }
  return out;
}

std::string render_table(const std::vector<SummaryRow>& rows) {
  std::string out;
  std::string current;
  char buf[256];
  for (const auto& s : rows) {
    if (s.suite != current) {
      if (!current.empty()) out += "\n";
      current = s.suite;
      out += "suite " + s.suite + " (desk-scale analog)\n";
      std::snprintf(buf, sizeof buf, "  %-4s %-16s %5s %17s %8s %8s\n", "rank", "grid_point", "seeds",
                    "accuracy", "R@1", "R@5");
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  %-4zu %-16s %5zu %8.4f +- %6.4f %8.4f %8.4f%s\n", s.rank, s.grid_point.c_str(),
                  s.seeds, s.acc_mean, s.acc_std, s.recall1_mean, s.recall5_mean, s.best ? "  <- best" : "");
    out += buf;
  }
  return out;
}

Report build_report(const std::filesystem::path& dir) {
  const auto runs = dir / "runs";
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(runs))
    for (const auto& entry : std::filesystem::directory_iterator(runs))
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  require(!files.empty(), ErrorCode::NoRunsFound, "no run CSVs under " + runs.string());
  std::sort(files.begin(), files.end());

  std::vector<MetricsRow> rows;
  for (const auto& f : files) {
    auto part = parse_metrics_csv(read_text(f));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  require(!rows.empty(), ErrorCode::NoRunsFound, "run CSVs under " + runs.string() + " hold no epochs");
  write_text(dir / "report_long.csv", format_long_csv(rows));

  Report report;
  report.summary = summarize(rows);
  report.table = render_table(report.summary);
  return report;
}

}  // namespace mtkd
