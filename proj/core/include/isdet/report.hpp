#pragma once

#include <string>
#include <utility>
#include <vector>

#include "isdet/gradcheck.hpp"
#include "isdet/profiler.hpp"
#include "isdet/trace.hpp"

namespace isdet {

/// rows: aligned human-readable table with a commented header.
/// records: one self-delimiting JSON record per line (meta, rows, totals).
enum class ReportFormat { rows, records };

inline constexpr int kSchemaVersion = 1;

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

struct SweepRow {
  int64_t side = 0;
  int64_t pixels = 0;
  int64_t flops = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  double exponent = 0.0;  // fitted log-log growth of flops vs pixels
  Convention convention;
  ConfigEcho config;
};

struct NamedGradReport {
  std::string name;
  GradReport report;
};

/// Least-squares slope of log(y) against log(x).
double fit_log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string render_cost_report(const CostReport& report, const std::string& command,
                               ReportFormat format);
std::string render_compare_report(const CompareReport& report, const std::string& command,
                                  ReportFormat format);
std::string render_shape_trace(const ShapeTrace& trace, const std::string& command,
                               const ConfigEcho& config, ReportFormat format);
std::string render_loss_curve(const std::vector<double>& losses, const std::string& command,
                              const ConfigEcho& config, ReportFormat format);
std::string render_sweep(const SweepReport& report, const std::string& command,
                         ReportFormat format);
std::string render_gradchecks(const std::vector<NamedGradReport>& reports,
                              const std::string& command, const ConfigEcho& config,
                              ReportFormat format);

/// Minimal static line plot (SVG) of a numeric series.
std::string render_line_svg(const std::vector<double>& ys, const std::string& title);

}  // namespace isdet
