#include "sdclab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sdclab/error.hpp"
#include "sdclab/experiment.hpp"

namespace sdclab {

namespace {

constexpr double kWidth = 640, kHeight = 480, kMargin = 56;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

const char* class_color(std::size_t c) { return kPalette[c % std::size(kPalette)]; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

class Svg {
 public:
  Svg(double w, double h) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
         << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  std::ostringstream& raw() { return out_; }
  void text(double x, double y, std::string_view s, std::string_view anchor = "middle") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\">"
         << s << "</text>\n";
  }
  void line(double x0, double y0, double x1, double y1, std::string_view stroke = "black") {
    out_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\""
         << num(y1) << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, std::string_view stroke,
                std::string_view cls) {
    out_ << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << stroke
         << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) out_ << num(x) << "," << num(y) << " ";
    out_ << "\"/>\n";
  }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

// Data-to-pixel mapping inside the plot margins.
struct Frame {
  Bounds b;
  double px(double x) const { return kMargin + (x - b.x0) / (b.x1 - b.x0) * (kWidth - 2 * kMargin); }
  double py(double y) const {
    return kHeight - kMargin - (y - b.y0) / (b.y1 - b.y0) * (kHeight - 2 * kMargin);
  }
};

void axes(Svg& svg, const Frame& f, std::string_view xlabel, std::string_view ylabel) {
  svg.line(kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin);
  svg.line(kMargin, kMargin, kMargin, kHeight - kMargin);
  for (int i = 0; i <= 4; ++i) {
    const double x = f.b.x0 + (f.b.x1 - f.b.x0) * i / 4;
    const double y = f.b.y0 + (f.b.y1 - f.b.y0) * i / 4;
    svg.text(f.px(x), kHeight - kMargin + 16, label(x));
    svg.text(kMargin - 6, f.py(y) + 4, label(y), "end");
  }
  svg.text(kWidth / 2, kHeight - 12, xlabel);
  svg.raw() << "<text x=\"14\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 14 "
            << kHeight / 2 << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
}

void legend(Svg& svg, const std::vector<std::pair<std::string, std::string>>& entries) {
  double y = kMargin + 4;
  for (const auto& [name, color] : entries) {
    svg.raw() << "<rect x=\"" << kWidth - kMargin - 120 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
              << color << "\"/>\n";
    svg.text(kWidth - kMargin - 104, y + 9, name, "start");
    y += 16;
  }
}

// Blue to yellow ramp.
std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + 215 * t));
  const int g = static_cast<int>(std::lround(60 + 170 * t));
  const int b = static_cast<int>(std::lround(150 - 110 * t));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

// Row-run-length encoded raster of `colors` (res x res, top row first).
void raster(Svg& svg, const Frame& f, const Field& field,
            const std::function<std::string(double)>& color) {
  const double cw = (f.px(field.bounds.x1) - f.px(field.bounds.x0)) / static_cast<double>(field.res);
  const double ch = (f.py(field.bounds.y0) - f.py(field.bounds.y1)) / static_cast<double>(field.res);
  svg.raw() << "<g class=\"field\" shape-rendering=\"crispEdges\">\n";
  for (std::size_t r = 0; r < field.res; ++r) {
    std::size_t c = 0;
    while (c < field.res) {
      const std::string col = color(field.values[r * field.res + c]);
      std::size_t e = c + 1;
      while (e < field.res && color(field.values[r * field.res + e]) == col) ++e;
      svg.raw() << "<rect x=\"" << num(f.px(field.bounds.x0) + cw * static_cast<double>(c))
                << "\" y=\"" << num(f.py(field.bounds.y1) + ch * static_cast<double>(r))
                << "\" width=\"" << num(cw * static_cast<double>(e - c) + 0.01) << "\" height=\""
                << num(ch + 0.01) << "\" fill=\"" << col << "\"/>\n";
      c = e;
    }
  }
  svg.raw() << "</g>\n";
}

void scatter(Svg& svg, const Frame& f, const std::array<double, 2>& p, std::string_view color,
             double radius) {
  svg.raw() << "<circle cx=\"" << num(f.px(p[0])) << "\" cy=\"" << num(f.py(p[1])) << "\" r=\""
            << radius << "\" fill=\"" << color << "\" fill-opacity=\"0.7\"/>\n";
}

void require_plane(const SdcDims& dims) {
  if (dims.d != 2) {
    throw UnsupportedPlotError("spatial plots need d = 2, dataset has d = " + std::to_string(dims.d));
  }
}

// Cell centres as rows [res*res, 2], top row first.
Tensor grid_points(const Bounds& b, std::size_t res) {
  std::vector<double> xy;
  xy.reserve(2 * res * res);
  for (std::size_t r = 0; r < res; ++r) {
    const double y = b.y1 - (b.y1 - b.y0) * (static_cast<double>(r) + 0.5) / static_cast<double>(res);
    for (std::size_t c = 0; c < res; ++c) {
      xy.push_back(b.x0 + (b.x1 - b.x0) * (static_cast<double>(c) + 0.5) / static_cast<double>(res));
      xy.push_back(y);
    }
  }
  return Tensor({res * res, 2}, std::move(xy));
}

std::vector<std::array<double, 2>> all_segments(const Dataset& ds) {
  std::vector<std::array<double, 2>> pts;
  for (const auto& inst : ds.instances()) {
    for (std::size_t j = 0; j < inst.m; ++j) {
      const auto s = inst.segment(j);
      pts.push_back({s[0], s[1]});
    }
  }
  return pts;
}

}  // namespace

std::string_view to_string(PlotKind k) {
  switch (k) {
    case PlotKind::dynamics: return "dynamics";
    case PlotKind::threshold: return "threshold";
    case PlotKind::focus_heatmap: return "focus-heatmap";
    case PlotKind::decision_boundary: return "decision-boundary";
  }
  return "dynamics";
}

PlotKind parse_plot_kind(std::string_view name) {
  for (auto k : {PlotKind::dynamics, PlotKind::threshold, PlotKind::focus_heatmap,
                 PlotKind::decision_boundary}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown plot kind '" + std::string(name) +
                    "' (known: dynamics, threshold, focus-heatmap, decision-boundary)");
}

Bounds padded_bounds(const std::vector<std::array<double, 2>>& points, double pad) {
  if (points.empty()) return {};
  Bounds b{points[0][0], points[0][0], points[0][1], points[0][1]};
  for (const auto& p : points) {
    b.x0 = std::min(b.x0, p[0]);
    b.x1 = std::max(b.x1, p[0]);
    b.y0 = std::min(b.y0, p[1]);
    b.y1 = std::max(b.y1, p[1]);
  }
  const double wx = std::max(b.x1 - b.x0, 1e-6), wy = std::max(b.y1 - b.y0, 1e-6);
  return {b.x0 - pad * wx, b.x1 + pad * wx, b.y0 - pad * wy, b.y1 + pad * wy};
}

double Field::min() const { return *std::min_element(values.begin(), values.end()); }
double Field::max() const { return *std::max_element(values.begin(), values.end()); }

Field focus_field(const FcamModel& model, const Bounds& b, std::size_t res) {
  require_plane(model.dims());
  return {b, res, model.segment_scores(grid_points(b, res))};
}

Field decision_field(const FcamModel& model, const Bounds& b, std::size_t res) {
  if (model.config().feature_width() != 2) {
    throw UnsupportedPlotError("decision regions need a 2-wide classifier input, model has " +
                               std::to_string(model.config().feature_width()));
  }
  const Tensor logits = model.classify_rows(grid_points(b, res));
  Field field{b, res, std::vector<double>(res * res)};
  for (std::size_t i = 0; i < res * res; ++i) {
    const auto row = logits.row(i);
    field.values[i] = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return field;
}

std::string dynamics_svg(const DynamicsLog& log, std::string_view title) {
  Svg svg(kWidth, kHeight);
  const double last = log.records.empty() ? 1.0 : static_cast<double>(log.records.back().epoch);
  Frame f{{0.0, std::max(last, 1.0), 0.0, 1.0}};
  axes(svg, f, "epoch", "fraction of instances");
  svg.text(kWidth / 2, 24, title);
  struct Curve {
    const char* name;
    double DynamicsRecord::*field;
    const char* color;
  };
  const Curve curves[] = {{"FTPT", &DynamicsRecord::ftpt, kPalette[2]},
                          {"FFPT", &DynamicsRecord::ffpt, kPalette[0]},
                          {"FTPF", &DynamicsRecord::ftpf, kPalette[4]},
                          {"FFPF", &DynamicsRecord::ffpf, kPalette[1]}};
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& c : curves) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : log.records) pts.emplace_back(f.px(static_cast<double>(r.epoch)), f.py(r.*c.field));
    svg.polyline(pts, c.color, c.name);
    entries.emplace_back(c.name, c.color);
  }
  legend(svg, entries);
  return svg.finish();
}

std::string threshold_svg(const std::vector<double>& grid,
                          const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
  Svg svg(kWidth, kHeight);
  Frame f{{0.0, 1.0, 0.0, 1.0}};
  axes(svg, f, "threshold on foreground weight", "fraction of instances above threshold");
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& [name, values] = curves[i];
    if (values.size() != grid.size()) {
      throw DimensionError("threshold curve '" + name + "' has " + std::to_string(values.size()) +
                           " points, grid has " + std::to_string(grid.size()));
    }
    std::vector<std::pair<double, double>> pts;
    for (std::size_t t = 0; t < grid.size(); ++t) pts.emplace_back(f.px(grid[t]), f.py(values[t]));
    svg.polyline(pts, class_color(i), name);
    entries.emplace_back(name, class_color(i));
  }
  legend(svg, entries);
  return svg.finish();
}

std::string focus_heatmap_svg(const FcamModel& model, const Dataset& dataset) {
  require_plane(dataset.dims());
  const auto pts = all_segments(dataset);
  const Field field = focus_field(model, padded_bounds(pts));
  const double lo = field.min(), hi = field.max();
  const double span = hi - lo;
  Svg svg(kWidth, kHeight);
  Frame f{field.bounds};
  raster(svg, f, field, [&](double v) {
    // Quantised so equal-colour runs compress; a flat field maps to mid-scale.
    const double t = span > 1e-12 ? (v - lo) / span : 0.5;
    return heat_color(std::round(t * 63.0) / 63.0);
  });
  axes(svg, f, "x1", "x2");
  svg.text(kWidth / 2, 24, "focus score f (" + label(lo) + " to " + label(hi) + ")");
  std::vector<std::pair<std::string, std::string>> entries{{"background", "#606060"}};
  for (const auto& inst : dataset.instances()) {
    for (std::size_t j = 0; j < inst.m; ++j) {
      const auto s = inst.segment(j);
      const bool fg = j == inst.fg_index;
      scatter(svg, f, {s[0], s[1]}, fg ? class_color(inst.label) : "#606060", fg ? 2.0 : 1.2);
    }
  }
  for (std::size_t c = 0; c < dataset.dims().k; ++c) {
    entries.emplace_back("class " + std::to_string(c + 1), class_color(c));
  }
  legend(svg, entries);
  return svg.finish();
}

std::string decision_boundary_svg(const FcamModel& model, const Dataset& dataset) {
  require_plane(dataset.dims());
  std::vector<std::array<double, 2>> attended;
  std::vector<std::size_t> labels;
  for (const auto& inst : dataset.instances()) {
    const auto alpha = model.attention_vector(inst.segments).weights;
    std::array<double, 2> p{0.0, 0.0};
    for (std::size_t j = 0; j < inst.m; ++j) {
      p[0] += alpha[j] * inst.segment(j)[0];
      p[1] += alpha[j] * inst.segment(j)[1];
    }
    attended.push_back(p);
    labels.push_back(inst.label);
  }
  const Field field = decision_field(model, padded_bounds(attended));
  Svg svg(kWidth, kHeight);
  Frame f{field.bounds};
  raster(svg, f, field, [](double v) { return std::string(class_color(static_cast<std::size_t>(v))); });
  svg.raw() << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
            << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"white\" fill-opacity=\"0.6\"/>\n";
  axes(svg, f, "attended x1", "attended x2");
  svg.text(kWidth / 2, 24, "classifier regions over attended inputs");
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < attended.size(); ++i) scatter(svg, f, attended[i], class_color(labels[i]), 2.0);
  for (std::size_t c = 0; c < dataset.dims().k; ++c) {
    entries.emplace_back("class " + std::to_string(c + 1), class_color(c));
  }
  legend(svg, entries);
  return svg.finish();
}

namespace {

std::vector<double> read_threshold_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<double> values;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  return values;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::filesystem::path> run_directories(const std::filesystem::path& sweep_dir) {
  std::vector<std::filesystem::path> runs;
  for (const auto& v : std::filesystem::directory_iterator(sweep_dir)) {
    if (!v.is_directory()) continue;
    for (const auto& s : std::filesystem::directory_iterator(v.path())) {
      if (s.is_directory() && std::filesystem::exists(s.path() / "model.txt")) runs.push_back(s.path());
    }
  }
  std::sort(runs.begin(), runs.end());
  return runs;
}

std::vector<std::filesystem::path> plot_run(const std::filesystem::path& run, PlotKind kind,
                                            PlotStage stage) {
  const std::string suffix = stage == PlotStage::init ? "-init" : "";
  const auto target = run / (std::string(to_string(kind)) + suffix + ".svg");
  switch (kind) {
    case PlotKind::dynamics:
      write_file(target, dynamics_svg(DynamicsLog::read_csv(run / "dynamics.csv"),
                                      run.parent_path().filename().string() + " " +
                                          run.filename().string()));
      break;
    case PlotKind::threshold: {
      const auto values = read_threshold_csv(run / "threshold.csv");
      write_file(target, threshold_svg(threshold_grid(values.size()),
                                       {{run.parent_path().filename().string(), values}}));
      break;
    }
    case PlotKind::focus_heatmap:
    case PlotKind::decision_boundary: {
      const auto info = read_key_values(run / "run.txt");
      const auto it = info.find("dataset");
      if (it == info.end()) throw ConfigError(run.string() + "/run.txt does not name its dataset");
      const Dataset ds = load_dataset(it->second);
      require_plane(ds.dims());
      const FcamModel model =
          FcamModel::load(run, stage == PlotStage::init ? "params.init.bin" : "params.bin");
      write_file(target, kind == PlotKind::focus_heatmap ? focus_heatmap_svg(model, ds)
                                                         : decision_boundary_svg(model, ds));
      break;
    }
  }
  return {target};
}

}  // namespace

std::vector<std::filesystem::path> plot_directory(const std::filesystem::path& dir, PlotKind kind,
                                                  PlotStage stage) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("no such directory " + dir.string());
  if (std::filesystem::exists(dir / "model.txt")) return plot_run(dir, kind, stage);
  if (!std::filesystem::exists(dir / "report.csv")) {
    throw ConfigError(dir.string() + " is neither a run directory nor a sweep directory");
  }
  const auto runs = run_directories(dir);
  if (kind == PlotKind::threshold) {
    // One mean curve per variant.
    std::map<std::string, std::pair<std::vector<double>, std::size_t>> sums;
    std::vector<std::string> order;
    for (const auto& run : runs) {
      const auto values = read_threshold_csv(run / "threshold.csv");
      const auto name = run.parent_path().filename().string();
      auto [it, fresh] = sums.try_emplace(name, std::vector<double>(values.size(), 0.0), 0);
      if (fresh) order.push_back(name);
      for (std::size_t i = 0; i < values.size() && i < it->second.first.size(); ++i) {
        it->second.first[i] += values[i];
      }
      ++it->second.second;
    }
    std::vector<std::pair<std::string, std::vector<double>>> curves;
    for (const auto& name : order) {
      auto [values, count] = sums[name];
      for (auto& v : values) v /= static_cast<double>(count);
      curves.emplace_back(name, std::move(values));
    }
    const auto target = dir / "threshold.svg";
    write_file(target, threshold_svg(threshold_grid(curves.empty() ? 101 : curves[0].second.size()),
                                     curves));
    return {target};
  }
  std::vector<std::filesystem::path> written;
  for (const auto& run : runs) {
    const auto files = plot_run(run, kind, stage);
    written.insert(written.end(), files.begin(), files.end());
  }
  return written;
}

}  // namespace sdclab
