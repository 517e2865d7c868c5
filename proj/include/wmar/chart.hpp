#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wmar {

// One task's aggregated learning curve: per evaluation step, the median and
// interquartile bounds of the normalized score across seeds.
struct ChartSeries {
  int task = 0;
  std::string label;
  std::vector<int64_t> steps;
  std::vector<double> median;
  std::vector<double> q25;
  std::vector<double> q75;
};

struct ChartData {
  std::string model;
  int64_t steps_per_task = 0;
  int task_count = 0;
  std::vector<ChartSeries> series;
};

// Parses a curves CSV (model,seed,task,task_label,global_step,score,
// steps_per_task,task_count) and aggregates seeds with the same quartile
// rule the metrics use. One entry per model, wmar first. Throws
// RuntimeError on malformed input.
std::vector<ChartData> parse_curves_csv(const std::string& text);

// Renders one self-contained SVG: median line per task with interquartile
// band, the segment inside the task's own training window drawn bold, task
// boundaries marked, one legend entry per task. An empty ChartData renders
// an axes-only placeholder.
std::string render_chart_svg(const ChartData& d);

// Writes chart_<model>.svg per model under out_dir; with no models at all,
// writes a single empty-but-valid chart.svg.
void write_charts(const std::string& curves_csv_text, const std::string& out_dir);

}  // namespace wmar
