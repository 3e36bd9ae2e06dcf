#pragma once

// SVG figures: quadrant dynamics, threshold curves, and for d = 2 the focus
// heat map and the classifier decision regions.

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdclab/fcam.hpp"
#include "sdclab/sdc_data.hpp"
#include "sdclab/training.hpp"

namespace sdclab {

enum class PlotKind { dynamics, threshold, focus_heatmap, decision_boundary };
enum class PlotStage { final, init };

std::string_view to_string(PlotKind k);
PlotKind parse_plot_kind(std::string_view name);

inline constexpr std::size_t kFieldResolution = 200;

/// Axis-aligned plotting window.
struct Bounds {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
};

/// Bounding box of the points padded by `pad` of each side length.
Bounds padded_bounds(const std::vector<std::array<double, 2>>& points, double pad = 0.1);

/// Values on a res x res grid of cell centres, row-major from the top row.
struct Field {
  Bounds bounds;
  std::size_t res = 0;
  std::vector<double> values;
  double min() const;
  double max() const;
};

/// Focus score f over the plane.
Field focus_field(const FcamModel& model, const Bounds& b, std::size_t res = kFieldResolution);
/// argmax g over the plane (as class index); needs a 2-wide classifier input.
Field decision_field(const FcamModel& model, const Bounds& b, std::size_t res = kFieldResolution);

std::string dynamics_svg(const DynamicsLog& log, std::string_view title);
std::string threshold_svg(const std::vector<double>& grid,
                          const std::vector<std::pair<std::string, std::vector<double>>>& curves);
std::string focus_heatmap_svg(const FcamModel& model, const Dataset& dataset);
std::string decision_boundary_svg(const FcamModel& model, const Dataset& dataset);

/// Plots a run directory or a sweep directory (one containing report.csv).
/// Returns the written files.
std::vector<std::filesystem::path> plot_directory(const std::filesystem::path& dir, PlotKind kind,
                                                  PlotStage stage = PlotStage::final);

}  // namespace sdclab
