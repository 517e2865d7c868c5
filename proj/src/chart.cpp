#include "wmar/chart.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "wmar/errors.hpp"
#include "wmar/evalkit.hpp"
#include "wmar/fsutil.hpp"

namespace wmar {

namespace {

constexpr const char* kCurvesHeader =
    "model,seed,task,task_label,global_step,score,steps_per_task,task_count";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

int64_t parse_i64(const std::string& s, const char* what) {
  int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw RuntimeError(std::string("chart: malformed CSV: bad ") + what + " \"" + s + "\"");
  return v;
}

double parse_f64(const std::string& s, const char* what) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw RuntimeError(std::string("chart: malformed CSV: bad ") + what + " \"" + s + "\"");
  return v;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// A colorblind-safe cycle; tasks index into it modulo its size.
const char* kPalette[] = {"#0072b2", "#d55e00", "#009e73", "#cc79a7",
                          "#e69f00", "#56b4e9", "#f0e442", "#000000"};
constexpr int kPaletteSize = 8;

}  // namespace

std::vector<ChartData> parse_curves_csv(const std::string& text) {
  // model -> task -> step -> scores across seeds
  struct PerModel {
    int64_t steps_per_task = -1;
    int task_count = -1;
    std::map<int, std::string> labels;
    std::map<int, std::map<int64_t, std::vector<double>>> points;
  };
  std::map<std::string, PerModel> models;
  std::vector<std::string> model_seen;

  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (first) {
      if (line != kCurvesHeader)
        throw RuntimeError("chart: malformed CSV: expected header \"" +
                           std::string(kCurvesHeader) + "\", got \"" + line + "\"");
      first = false;
      continue;
    }
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 8)
      throw RuntimeError("chart: malformed CSV: expected 8 fields, got " +
                         std::to_string(f.size()) + " in \"" + line + "\"");
    const std::string& model = f[0];
    const int task = static_cast<int>(parse_i64(f[2], "task"));
    const int64_t step = parse_i64(f[4], "global_step");
    const double score = parse_f64(f[5], "score");
    const int64_t n = parse_i64(f[6], "steps_per_task");
    const int tasks = static_cast<int>(parse_i64(f[7], "task_count"));
    if (task < 0 || tasks < 1 || task >= tasks || n < 1)
      throw RuntimeError("chart: malformed CSV: inconsistent task indexing in \"" + line + "\"");

    if (!models.count(model)) model_seen.push_back(model);
    PerModel& pm = models[model];
    if (pm.steps_per_task < 0) {
      pm.steps_per_task = n;
      pm.task_count = tasks;
    } else if (pm.steps_per_task != n || pm.task_count != tasks) {
      throw RuntimeError("chart: malformed CSV: model " + model +
                         " mixes steps_per_task/task_count values");
    }
    auto [it, fresh] = pm.labels.emplace(task, f[3]);
    if (!fresh && it->second != f[3])
      throw RuntimeError("chart: malformed CSV: task " + std::to_string(task) +
                         " has two labels: " + it->second + " and " + f[3]);
    pm.points[task][step].push_back(score);
  }
  if (first) throw RuntimeError("chart: malformed CSV: empty input");

  // wmar leads, the ablation follows, anything else in first-seen order.
  std::vector<std::string> order;
  for (const char* preferred : {"wmar", "fifo_only"})
    if (models.count(preferred)) order.push_back(preferred);
  for (const std::string& m : model_seen)
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);

  std::vector<ChartData> out;
  for (const std::string& name : order) {
    const PerModel& pm = models.at(name);
    ChartData d;
    d.model = name;
    d.steps_per_task = pm.steps_per_task;
    d.task_count = pm.task_count;
    for (const auto& [task, by_step] : pm.points) {
      ChartSeries s;
      s.task = task;
      s.label = pm.labels.at(task);
      for (const auto& [step, scores] : by_step) {
        const Quartiles q = quartiles(scores);
        s.steps.push_back(step);
        s.median.push_back(q.median);
        s.q25.push_back(q.q25);
        s.q75.push_back(q.q75);
      }
      d.series.push_back(std::move(s));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string render_chart_svg(const ChartData& d) {
  constexpr double kW = 960, kH = 540;
  constexpr double kLeft = 70, kRight = 210, kTop = 44, kBottom = 52;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;

  double xmax = static_cast<double>(d.steps_per_task) * d.task_count;
  double ymin = 0.0, ymax = 1.0;
  for (const ChartSeries& s : d.series) {
    for (int64_t st : s.steps) xmax = std::max(xmax, static_cast<double>(st));
    for (double v : s.q25) ymin = std::min(ymin, v);
    for (double v : s.q75) ymax = std::max(ymax, v);
  }
  if (xmax <= 0) xmax = 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;

  const auto px = [&](double step) { return kLeft + pw * (step / xmax); };
  const auto py = [&](double v) { return kTop + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::string svg;
  char buf[512];
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"540\" "
         "viewBox=\"0 0 960 540\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"960\" height=\"540\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"26\" font-size=\"17\" font-weight=\"bold\">%s</text>\n",
                kLeft, d.model.empty() ? "(no model)" : d.model.c_str());
  svg += buf;

  // Frame and axes.
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                "stroke=\"#333\"/>\n",
                kLeft, kTop, pw, ph);
  svg += buf;

  // Horizontal gridlines at five even ticks.
  for (int i = 0; i <= 4; ++i) {
    const double v = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%s</text>\n",
                  kLeft, py(v), kLeft + pw, py(v), kLeft - 6, py(v) + 4, fmt_g(v).c_str());
    svg += buf;
  }

  // Task-boundary markers and step labels.
  if (d.steps_per_task > 0) {
    for (int k = 0; k <= d.task_count; ++k) {
      const double step = static_cast<double>(d.steps_per_task) * k;
      if (step > xmax + 1e-9) break;
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#bbb\" "
                    "stroke-dasharray=\"4 3\"/>\n"
                    "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%s"
                    "</text>\n",
                    px(step), kTop, px(step), kTop + ph, px(step), kTop + ph + 16,
                    fmt_g(step).c_str());
      svg += buf;
    }
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\">"
                "environment steps</text>\n",
                kLeft + pw / 2, kH - 14);
  svg += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"18\" y=\"%.1f\" font-size=\"13\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 18 %.1f)\">normalized score</text>\n",
                kTop + ph / 2, kTop + ph / 2);
  svg += buf;

  if (d.series.empty()) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"14\" text-anchor=\"middle\" "
                  "fill=\"#777\">no data</text>\n",
                  kLeft + pw / 2, kTop + ph / 2);
    svg += buf;
    svg += "</svg>\n";
    return svg;
  }

  for (const ChartSeries& s : d.series) {
    const char* color = kPalette[s.task % kPaletteSize];
    if (s.steps.empty()) continue;

    // Interquartile band: upper bound forward, lower bound back.
    std::string band = "<path d=\"M";
    for (size_t i = 0; i < s.steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, " %.2f %.2f", px(static_cast<double>(s.steps[i])),
                    py(s.q75[i]));
      band += buf;
    }
    for (size_t i = s.steps.size(); i-- > 0;) {
      std::snprintf(buf, sizeof buf, " L %.2f %.2f", px(static_cast<double>(s.steps[i])),
                    py(s.q25[i]));
      band += buf;
    }
    band += " Z\" fill=\"";
    band += color;
    band += "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    svg += band;

    // Median line, then the bold overlay inside the task's training window.
    std::string line = "<polyline fill=\"none\" stroke=\"";
    line += color;
    line += "\" stroke-width=\"1.4\" points=\"";
    for (size_t i = 0; i < s.steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(static_cast<double>(s.steps[i])),
                    py(s.median[i]));
      line += buf;
    }
    line += "\"/>\n";
    svg += line;

    if (d.steps_per_task > 0) {
      const double lo = static_cast<double>(d.steps_per_task) * s.task;
      const double hi = lo + static_cast<double>(d.steps_per_task);
      std::string bold = "<polyline fill=\"none\" stroke=\"";
      bold += color;
      bold += "\" stroke-width=\"3.5\" points=\"";
      int kept = 0;
      for (size_t i = 0; i < s.steps.size(); ++i) {
        const double st = static_cast<double>(s.steps[i]);
        if (st < lo - 1e-9 || st > hi + 1e-9) continue;
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(st), py(s.median[i]));
        bold += buf;
        ++kept;
      }
      bold += "\"/>\n";
      if (kept >= 2) svg += bold;
    }
  }

  // Legend: one entry per task, plus the bold-segment note.
  const double lx = kLeft + pw + 18;
  double ly = kTop + 10;
  for (const ChartSeries& s : d.series) {
    const char* color = kPalette[s.task % kPaletteSize];
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                  "stroke-width=\"3\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%s</text>\n",
                  lx, ly, lx + 24, ly, color, lx + 30, ly + 4, s.label.c_str());
    svg += buf;
    ly += 20;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" fill=\"#555\">bold segment = "
                "task being trained</text>\n",
                lx, ly + 8);
  svg += buf;

  svg += "</svg>\n";
  return svg;
}

void write_charts(const std::string& curves_csv_text, const std::string& out_dir) {
  const std::vector<ChartData> charts = parse_curves_csv(curves_csv_text);
  make_dirs(out_dir);
  if (charts.empty()) {
    atomic_write_file(path_join(out_dir, "chart.svg"), render_chart_svg(ChartData{}));
    return;
  }
  for (const ChartData& d : charts)
    atomic_write_file(path_join(out_dir, "chart_" + d.model + ".svg"), render_chart_svg(d));
}

}  // namespace wmar
