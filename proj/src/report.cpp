#include "srttt/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "srttt/train.hpp"

namespace srttt {

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("report: write failed for " + path);
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "depth,samples,exact_match\n";
  for (const DepthResult& d : r.depths) {
    os << fmt(d.depth, "%.2f") << "," << d.samples << "," << fmt(d.exact_match()) << "\n";
  }
  return os.str();
}

std::string report_jsonl(const EvalReport& r) {
  std::ostringstream os;
  nlohmann::ordered_json meta;
  meta["type"] = "meta";
  meta["model_tag"] = r.model_tag;
  meta["seq_len"] = r.seq_len;
  meta["perplexity"] = r.perplexity;
  meta["mean_alpha"] = r.mean_alpha;
  meta["mean_occupancy"] = r.mean_occupancy;
  meta["routed_fraction"] = r.routed_fraction;
  os << meta.dump() << "\n";
  for (const DepthResult& d : r.depths) {
    nlohmann::ordered_json row;
    row["type"] = "depth";
    row["depth"] = d.depth;
    row["samples"] = d.samples;
    row["successes"] = d.successes;
    row["exact_match"] = d.exact_match();
    row["captured"] = d.captured;
    row["captured_successes"] = d.captured_successes;
    os << row.dump() << "\n";
  }
  return os.str();
}

std::string report_svg(const EvalReport& r) {
  const int width = 640, height = 420;
  const int ml = 60, mr = 20, mt = 50, mb = 60;
  const int plot_w = width - ml - mr, plot_h = height - mt - mb;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"monospace\" "
        "font-size=\"14\">exact match by depth: "
     << r.model_tag << " (len " << r.seq_len << ")</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\""
     << mt + plot_h << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double frac = i / 4.0;
    const int y = mt + plot_h - static_cast<int>(frac * plot_h);
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" << fmt(frac, "%.2f")
       << "</text>\n";
  }
  const size_t n = r.depths.size();
  const double slot = static_cast<double>(plot_w) / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const DepthResult& d = r.depths[i];
    const double em = d.exact_match();
    const int bar_w = static_cast<int>(slot * 0.6);
    const int x = ml + static_cast<int>(slot * (static_cast<double>(i) + 0.2));
    const int bar_h = static_cast<int>(em * plot_h);
    const int y = mt + plot_h - bar_h;
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << bar_h
       << "\" fill=\"#4878cf\"/>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 5
       << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" << fmt(em)
       << "</text>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << mt + plot_h + 18
       << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" << fmt(d.depth, "%.2f")
       << "</text>\n";
  }
  os << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 16
     << "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">needle depth (ppl "
     << fmt(r.perplexity, "%.3f") << ")</text>\n";
  os << "</svg>\n";
  return os.str();
}

struct Series {
  std::vector<double> x, y;
};

std::string polyline(const Series& s, double x0, double x1, double y0, double y1, int px, int py,
                     int pw, int ph, const char* color) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
  const size_t stride = std::max<size_t>(1, s.x.size() / 1000);
  for (size_t i = 0; i < s.x.size(); i += stride) {
    const double fx = (s.x[i] - x0) / std::max(1e-12, x1 - x0);
    const double fy = (s.y[i] - y0) / std::max(1e-12, y1 - y0);
    os << fmt(px + fx * pw, "%.1f") << "," << fmt(py + ph - fy * ph, "%.1f") << " ";
  }
  os << "\"/>\n";
  return os.str();
}

}  // namespace

std::vector<std::string> emit_report(const EvalReport& report, ReportFormat format,
                                     const std::string& prefix) {
  if (report.depths.empty()) {
    throw std::runtime_error(
        "report: empty depth list; pass at least one depth, e.g. --depths 0.25,0.5");
  }
  std::vector<std::string> written;
  if (format == ReportFormat::table || format == ReportFormat::all) {
    const std::string path = prefix + ".csv";
    write_file(path, report_csv(report));
    written.push_back(path);
  }
  if (format == ReportFormat::lines || format == ReportFormat::all) {
    const std::string path = prefix + ".jsonl";
    write_file(path, report_jsonl(report));
    written.push_back(path);
  }
  if (format == ReportFormat::plot || format == ReportFormat::all) {
    const std::string path = prefix + ".svg";
    write_file(path, report_svg(report));
    written.push_back(path);
  }
  return written;
}

void write_training_curves_svg(const std::string& svg_path,
                               const std::vector<std::string>& metric_lines) {
  if (metric_lines.empty()) throw std::runtime_error("report: metrics log is empty");
  Series loss;
  std::vector<Series> alpha;
  long stage2_first = -1;
  for (const std::string& line : metric_lines) {
    const StepMetrics m = parse_metrics_line(line);
    loss.x.push_back(static_cast<double>(m.step));
    loss.y.push_back(m.loss);
    if (alpha.size() < m.mean_alpha.size()) alpha.resize(m.mean_alpha.size());
    for (size_t l = 0; l < m.mean_alpha.size(); ++l) {
      alpha[l].x.push_back(static_cast<double>(m.step));
      alpha[l].y.push_back(m.mean_alpha[l]);
    }
    if (m.stage == 2 && stage2_first < 0) stage2_first = m.step;
  }
  const double x0 = loss.x.front(), x1 = loss.x.back();
  double loss_max = 0;
  for (double v : loss.y) loss_max = std::max(loss_max, v);
  double alpha_max = 1e-9;
  for (const Series& s : alpha) {
    for (double v : s.y) alpha_max = std::max(alpha_max, v);
  }

  const int width = 720, height = 480;
  const int ml = 60, mr = 20;
  const int panel_h = 180, gap = 50, mt = 40;
  const int pw = width - ml - mr;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2
     << "\" y=\"20\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"14\">training "
        "curves</text>\n";

  const char* colors[] = {"#4878cf", "#d65f5f", "#6acc65", "#b47cc7"};
  auto panel = [&](int py, const std::string& label, double ymax) {
    os << "<rect x=\"" << ml << "\" y=\"" << py << "\" width=\"" << pw << "\" height=\"" << panel_h
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml << "\" y=\"" << py - 6
       << "\" font-family=\"monospace\" font-size=\"12\">" << label << " (max " << fmt(ymax, "%.4f")
       << ", steps " << fmt(x0, "%.0f") << "-" << fmt(x1, "%.0f") << ")</text>\n";
    if (stage2_first > 0) {
      const double fx = (static_cast<double>(stage2_first) - x0) / std::max(1e-12, x1 - x0);
      os << "<line x1=\"" << fmt(ml + fx * pw, "%.1f") << "\" y1=\"" << py << "\" x2=\""
         << fmt(ml + fx * pw, "%.1f") << "\" y2=\"" << py + panel_h
         << "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";
    }
  };
  panel(mt, "loss", loss_max);
  os << polyline(loss, x0, x1, 0.0, loss_max, ml, mt, pw, panel_h, colors[0]);
  const int py2 = mt + panel_h + gap;
  panel(py2, "mean alpha per layer", alpha_max);
  for (size_t l = 0; l < alpha.size(); ++l) {
    os << polyline(alpha[l], x0, x1, 0.0, alpha_max, ml, py2, pw, panel_h,
                   colors[(l + 1) % 4]);
  }
  os << "</svg>\n";
  write_file(svg_path, os.str());
}

std::vector<CsvRow> parse_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("report: cannot open " + path);
  std::vector<CsvRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CsvRow row{};
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    row.depth = std::stod(cell);
    std::getline(ss, cell, ',');
    row.samples = std::stoi(cell);
    std::getline(ss, cell, ',');
    row.exact_match = std::stod(cell);
    rows.push_back(row);
  }
  return rows;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "table") return ReportFormat::table;
  if (name == "lines") return ReportFormat::lines;
  if (name == "plot") return ReportFormat::plot;
  if (name == "all") return ReportFormat::all;
  throw std::runtime_error("unknown report format '" + name + "' (table|lines|plot|all)");
}

}  // namespace srttt
