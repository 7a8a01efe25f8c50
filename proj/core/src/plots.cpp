#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gpmpc/scenario.hpp"

namespace gpmpc {

namespace {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_chart(const std::string& title, const std::vector<Series>& series) {
  constexpr double width = 720.0, height = 400.0;
  constexpr double ml = 60.0, mr = 20.0, mt = 36.0, mb = 40.0;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      }
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  }
  if (x_max - x_min < 1e-12) x_max = x_min + 1.0;
  if (y_max - y_min < 1e-12) y_max = y_min + 1.0;
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;
  const auto sx = [&](double x) {
    return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr);
  };
  const auto sy = [&](double y) {
    return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double yv = y_min + (y_max - y_min) * tick / 4.0;
    out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
        << format_double(yv) << "</text>\n";
    const double xv = x_min + (x_max - x_min) * tick / 4.0;
    out << "<text x=\"" << sx(xv) << "\" y=\"" << height - mb + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << format_double(xv) << "</text>\n";
  }
  double legend_y = mt + 4.0;
  for (const auto& s : series) {
    if (s.x.empty()) continue;
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) out << ' ';
      out << format_double(sx(s.x[i])) << ',' << format_double(sy(s.y[i]));
    }
    out << "\"/>\n";
    out << "<text x=\"" << width - mr - 4 << "\" y=\"" << legend_y
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
        << s.color << "\">" << s.label << "</text>\n";
    legend_y += 14.0;
  }
  out << "</svg>\n";
  return out.str();
}

std::vector<double> column_values(const CsvTable& table, const std::string& name) {
  const int idx = table.column_index(name);
  if (idx < 0) throw std::runtime_error("plot: missing column " + name);
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) out.push_back(row[idx]);
  return out;
}

const std::vector<std::string> kPalette = {"#1f77b4", "#d62728", "#2ca02c",
                                           "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::vector<std::filesystem::path> export_plots(const RunLog& log,
                                                const std::filesystem::path& out_dir) {
  if (log.steps.rows.empty()) throw std::invalid_argument("export_plots: empty log");
  std::vector<std::filesystem::path> written;
  if (log.application == "pathfollow") {
    const auto time = column_values(log.steps, "time");
    for (const char* metric : {"eps_lateral", "eps_heading"}) {
      Series s{metric, kPalette[0], time, column_values(log.steps, metric)};
      const auto path = out_dir / (std::string(metric) + ".svg");
      write_file(path, svg_chart(log.controller + ": " + metric, {s}));
      written.push_back(path);
    }
    return written;
  }

  // Platoon: per-vehicle series keyed off the vehicle column.
  const auto vehicle = column_values(log.steps, "vehicle");
  const auto time = column_values(log.steps, "time");
  int max_vehicle = 0;
  for (double v : vehicle) max_vehicle = std::max(max_vehicle, static_cast<int>(v));
  const auto per_vehicle = [&](const std::string& column) {
    std::vector<Series> series(max_vehicle + 1);
    const auto values = column_values(log.steps, column);
    for (int v = 0; v <= max_vehicle; ++v) {
      series[v].label = v == max_vehicle ? "HV" : "AV" + std::to_string(v + 1);
      series[v].color = kPalette[v % kPalette.size()];
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const int v = static_cast<int>(vehicle[i]);
      series[v].x.push_back(time[i]);
      series[v].y.push_back(values[i]);
    }
    return series;
  };

  const struct {
    const char* file;
    const char* column;
    const char* title;
  } panels[] = {{"velocity.svg", "velocity", "velocities"},
                {"position.svg", "position", "positions"},
                {"distance.svg", "gap_front", "inter-vehicle distances"}};
  for (const auto& panel : panels) {
    auto series = per_vehicle(panel.column);
    if (std::string(panel.column) == "gap_front" && !series.empty()) {
      series.erase(series.begin());  // the leader has no vehicle ahead
    }
    const auto path = out_dir / panel.file;
    write_file(path, svg_chart(log.controller + ": " + panel.title, series));
    written.push_back(path);
  }
  return written;
}

}  // namespace gpmpc
