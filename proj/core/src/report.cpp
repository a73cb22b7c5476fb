#include "isdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace isdet {

namespace {

using nlohmann::json;

json config_json(const ConfigEcho& config) {
  json j = json::object();
  for (const auto& [k, v] : config) j[k] = v;
  return j;
}

json convention_json(const Convention& c) {
  return json{{"flop_factor", c.flop_factor},
              {"softmax_alpha", c.softmax_alpha},
              {"channel_round", c.channel_round}};
}

json meta_record(const std::string& command, const ConfigEcho& config,
                 const Convention* convention) {
  json j{{"schema_version", kSchemaVersion}, {"kind", "meta"}, {"command", command},
         {"config", config_json(config)}};
  if (convention) j["convention"] = convention_json(*convention);
  return j;
}

std::string config_line(const ConfigEcho& config) {
  std::ostringstream os;
  for (size_t i = 0; i < config.size(); ++i) {
    if (i) os << ' ';
    os << config[i].first << '=' << config[i].second;
  }
  return os.str();
}

void rows_header(std::ostringstream& os, const std::string& command, const ConfigEcho& config,
                 const Convention* convention) {
  os << "# schema_version: " << kSchemaVersion << "\n";
  os << "# command: " << command << "\n";
  if (!config.empty()) os << "# config: " << config_line(config) << "\n";
  if (convention) {
    os << "# convention: flop_factor=" << convention->flop_factor
       << " softmax_alpha=" << convention->softmax_alpha
       << " channel_round=" << convention->channel_round << "\n";
  }
}

ConfigEcho cost_config(const CostReport& r) {
  ConfigEcho config = r.config;
  config.emplace_back("module", r.module);
  config.emplace_back("batch", std::to_string(r.batch));
  config.emplace_back("size", std::to_string(r.in_h) + "x" + std::to_string(r.in_w));
  return config;
}

}  // namespace

double fit_log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fit_log_log_slope: need at least two points");
  }
  double mx = 0, my = 0;
  std::vector<double> lx(x.size()), ly(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0 || y[i] <= 0) throw std::invalid_argument("fit_log_log_slope: positive data only");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double num = 0, den = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return num / den;
}

std::string render_cost_report(const CostReport& report, const std::string& command,
                               ReportFormat format) {
  ConfigEcho config = cost_config(report);
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, config, &report.convention).dump() << "\n";
    for (const CostRow& row : report.rows) {
      os << json{{"kind", "row"}, {"name", row.name}, {"params", row.params},
                 {"flops", row.flops}}
                .dump()
         << "\n";
    }
    os << json{{"kind", "totals"}, {"params", report.total_params()},
               {"flops", report.total_flops()}}
              .dump()
       << "\n";
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, config, &report.convention);
  os << std::left << std::setw(28) << "name" << std::right << std::setw(14) << "params"
     << std::setw(16) << "flops" << "\n";
  for (const CostRow& row : report.rows) {
    os << std::left << std::setw(28) << row.name << std::right << std::setw(14) << row.params
       << std::setw(16) << row.flops << "\n";
  }
  os << std::left << std::setw(28) << "TOTAL" << std::right << std::setw(14)
     << report.total_params() << std::setw(16) << report.total_flops() << "\n";
  return os.str();
}

std::string render_compare_report(const CompareReport& report, const std::string& command,
                                  ReportFormat format) {
  ConfigEcho config;
  config.emplace_back("a", report.a.module);
  config.emplace_back("b", report.b.module);
  for (const auto& kv : report.b.config) config.push_back(kv);
  config.emplace_back("size", std::to_string(report.b.in_h) + "x" + std::to_string(report.b.in_w));
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, config, &report.b.convention).dump() << "\n";
    for (const CostRow& row : report.delta_rows) {
      os << json{{"kind", "row"}, {"name", row.name}, {"delta_params", row.params},
                 {"delta_flops", row.flops}}
                .dump()
         << "\n";
    }
    os << json{{"kind", "totals"},
               {"a_params", report.a.total_params()},
               {"b_params", report.b.total_params()},
               {"a_flops", report.a.total_flops()},
               {"b_flops", report.b.total_flops()},
               {"delta_params", report.delta_params},
               {"delta_flops", report.delta_flops}}
              .dump()
       << "\n";
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, config, &report.b.convention);
  os << std::left << std::setw(28) << "name" << std::right << std::setw(14) << "d_params"
     << std::setw(16) << "d_flops" << "\n";
  for (const CostRow& row : report.delta_rows) {
    if (row.params == 0 && row.flops == 0) continue;
    os << std::left << std::setw(28) << row.name << std::right << std::setw(14) << row.params
       << std::setw(16) << row.flops << "\n";
  }
  os << std::left << std::setw(28) << "TOTAL" << std::right << std::setw(14)
     << report.delta_params << std::setw(16) << report.delta_flops << "\n";
  os << "# a: " << report.a.module << " params=" << report.a.total_params()
     << " flops=" << report.a.total_flops() << "\n";
  os << "# b: " << report.b.module << " params=" << report.b.total_params()
     << " flops=" << report.b.total_flops() << "\n";
  return os.str();
}

std::string render_shape_trace(const ShapeTrace& trace, const std::string& command,
                               const ConfigEcho& config, ReportFormat format) {
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, config, nullptr).dump() << "\n";
    for (const auto& [stage, shape] : trace.stages) {
      os << json{{"kind", "row"}, {"stage", stage}, {"shape", shape_str(shape)}}.dump() << "\n";
    }
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, config, nullptr);
  for (const auto& [stage, shape] : trace.stages) {
    os << std::left << std::setw(24) << stage << shape_str(shape) << "\n";
  }
  return os.str();
}

std::string render_loss_curve(const std::vector<double>& losses, const std::string& command,
                              const ConfigEcho& config, ReportFormat format) {
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, config, nullptr).dump() << "\n";
    for (size_t i = 0; i < losses.size(); ++i) {
      os << json{{"kind", "row"}, {"step", i}, {"loss", losses[i]}}.dump() << "\n";
    }
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, config, nullptr);
  os << "step,loss\n";
  os << std::setprecision(17);
  for (size_t i = 0; i < losses.size(); ++i) {
    os << i << ',' << losses[i] << "\n";
  }
  return os.str();
}

std::string render_sweep(const SweepReport& report, const std::string& command,
                         ReportFormat format) {
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, report.config, &report.convention).dump() << "\n";
    for (const SweepRow& row : report.rows) {
      os << json{{"kind", "row"}, {"side", row.side}, {"pixels", row.pixels},
                 {"flops", row.flops}}
                .dump()
         << "\n";
    }
    os << json{{"kind", "totals"}, {"exponent", report.exponent}}.dump() << "\n";
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, report.config, &report.convention);
  os << std::left << std::setw(10) << "side" << std::right << std::setw(12) << "pixels"
     << std::setw(16) << "flops" << "\n";
  for (const SweepRow& row : report.rows) {
    os << std::left << std::setw(10) << row.side << std::right << std::setw(12) << row.pixels
       << std::setw(16) << row.flops << "\n";
  }
  os << "exponent " << std::setprecision(4) << std::fixed << report.exponent << "\n";
  return os.str();
}

std::string render_gradchecks(const std::vector<NamedGradReport>& reports,
                              const std::string& command, const ConfigEcho& config,
                              ReportFormat format) {
  if (format == ReportFormat::records) {
    std::ostringstream os;
    os << meta_record(command, config, nullptr).dump() << "\n";
    for (const NamedGradReport& r : reports) {
      os << json{{"kind", "row"},
                 {"name", r.name},
                 {"max_rel_err", r.report.max_rel_err},
                 {"max_abs_err", r.report.max_abs_err},
                 {"tol", r.report.tol},
                 {"pass", r.report.pass}}
                .dump()
         << "\n";
    }
    return os.str();
  }
  std::ostringstream os;
  rows_header(os, command, config, nullptr);
  for (const NamedGradReport& r : reports) {
    os << std::left << std::setw(24) << r.name << (r.report.pass ? "PASS" : "FAIL")
       << "  max_rel=" << std::scientific << std::setprecision(3) << r.report.max_rel_err
       << " max_abs=" << r.report.max_abs_err << std::defaultfloat << "\n";
  }
  return os.str();
}

std::string render_line_svg(const std::vector<double>& ys, const std::string& title) {
  const int width = 640, height = 360, margin = 40;
  double lo = 0.0, hi = 1.0;
  if (!ys.empty()) {
    lo = *std::min_element(ys.begin(), ys.end());
    hi = *std::max_element(ys.begin(), ys.end());
    if (hi <= lo) hi = lo + 1.0;
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << margin << "\" y=\"24\" font-family=\"monospace\" font-size=\"14\">"
     << title << "</text>\n";
  if (ys.size() > 1) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
      double fx = static_cast<double>(i) / static_cast<double>(ys.size() - 1);
      double fy = (ys[i] - lo) / (hi - lo);
      double px = margin + fx * (width - 2 * margin);
      double py = height - margin - fy * (height - 2 * margin);
      os << px << ',' << py << ' ';
    }
    os << "\"/>\n";
  }
  os << "<text x=\"" << margin << "\" y=\"" << height - 8
     << "\" font-family=\"monospace\" font-size=\"12\">min=" << lo << " max=" << hi
     << " n=" << ys.size() << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace isdet
