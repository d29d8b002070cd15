#pragma once

#include <string>
#include <vector>

#include "srttt/eval.hpp"

namespace srttt {

enum class ReportFormat { table, lines, plot, all };

// Writes prefix.csv / prefix.jsonl / prefix.svg depending on format. Output
// is byte-deterministic for a given report. Throws on empty depth lists and
// unwritable paths.
std::vector<std::string> emit_report(const EvalReport& report, ReportFormat format,
                                     const std::string& prefix);

// Loss and gate curves rendered from a metrics log (one JSON record per
// step); writes a self-contained SVG.
void write_training_curves_svg(const std::string& svg_path,
                               const std::vector<std::string>& metric_lines);

struct CsvRow {
  double depth;
  int samples;
  double exact_match;
};
std::vector<CsvRow> parse_report_csv(const std::string& path);

ReportFormat parse_report_format(const std::string& name);

}  // namespace srttt
