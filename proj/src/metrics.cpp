#include "sdclab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sdclab/attention.hpp"
#include "sdclab/error.hpp"

namespace sdclab {

bool focus_is_correct(std::span<const double> alpha, std::size_t fg_index) {
  if (fg_index >= alpha.size()) throw IndexError("foreground index outside attention vector");
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (j != fg_index && !(alpha[fg_index] > alpha[j])) return false;
  }
  return true;
}

EvalRecord make_record(std::size_t predicted, std::size_t label, std::vector<double> alpha,
                       std::size_t fg_index) {
  EvalRecord r;
  r.predicted = predicted;
  r.label = label;
  r.focus_correct = focus_is_correct(alpha, fg_index);
  r.alpha = std::move(alpha);
  r.fg_index = fg_index;
  r.prediction_correct = predicted == label;
  return r;
}

namespace {

void require_records(std::span<const EvalRecord> records, const char* metric) {
  if (records.empty()) {
    throw UndefinedMetricError(std::string(metric) + " is undefined on an empty record set");
  }
}

}  // namespace

Quadrants quadrants(std::span<const EvalRecord> records) {
  require_records(records, "quadrants");
  Quadrants q;
  for (const auto& r : records) {
    if (r.focus_correct) {
      (r.prediction_correct ? q.counts.ftpt : q.counts.ftpf)++;
    } else {
      (r.prediction_correct ? q.counts.ffpt : q.counts.ffpf)++;
    }
  }
  const double n = static_cast<double>(records.size());
  q.ftpt = static_cast<double>(q.counts.ftpt) / n;
  q.ffpt = static_cast<double>(q.counts.ffpt) / n;
  q.ftpf = static_cast<double>(q.counts.ftpf) / n;
  q.ffpf = static_cast<double>(q.counts.ffpf) / n;
  return q;
}

// Both marginals are sums of the quadrant fractions so the identities
// FT = FTPT + FTPF and accuracy = FTPT + FFPT hold bit-exactly.
double accuracy(std::span<const EvalRecord> records) {
  require_records(records, "accuracy");
  const auto q = quadrants(records);
  return q.ftpt + q.ffpt;
}

double ft(std::span<const EvalRecord> records) {
  require_records(records, "FT");
  const auto q = quadrants(records);
  return q.ftpt + q.ftpf;
}

Sparsity sparsity(std::span<const double> alpha) {
  if (alpha.empty()) throw UndefinedMetricError("sparsity of an empty attention vector");
  Sparsity s;
  double sq = 0.0;
  for (double a : alpha) {
    if (a > kNnzThreshold) s.nnz += 1.0;
    sq += a * a;
  }
  double best = INFINITY;
  for (double a : alpha) best = std::min(best, sq - 2.0 * a + 1.0);
  s.dist = std::sqrt(std::max(0.0, best));
  s.ent = entropy(alpha);
  return s;
}

Sparsity mean_sparsity(std::span<const EvalRecord> records) {
  require_records(records, "sparsity");
  Sparsity total;
  for (const auto& r : records) {
    const auto s = sparsity(r.alpha);
    total.nnz += s.nnz;
    total.dist += s.dist;
    total.ent += s.ent;
  }
  const double n = static_cast<double>(records.size());
  return {total.nnz / n, total.dist / n, total.ent / n};
}

std::vector<double> threshold_grid(std::size_t points) {
  if (points < 2) throw ContractError("threshold grid needs at least two points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return grid;
}

std::vector<double> threshold_curve(std::span<const EvalRecord> records,
                                    std::span<const double> thresholds) {
  require_records(records, "threshold curve");
  std::vector<double> fg_weights;
  fg_weights.reserve(records.size());
  for (const auto& r : records) fg_weights.push_back(r.alpha.at(r.fg_index));
  std::sort(fg_weights.begin(), fg_weights.end());
  std::vector<double> curve;
  curve.reserve(thresholds.size());
  const double n = static_cast<double>(fg_weights.size());
  for (double t : thresholds) {
    const auto above = fg_weights.end() - std::upper_bound(fg_weights.begin(), fg_weights.end(), t);
    curve.push_back(static_cast<double>(above) / n);
  }
  return curve;
}

BoxMask BoxMask::rectangle(std::size_t side, std::size_t r0, std::size_t r1, std::size_t c0,
                           std::size_t c1) {
  BoxMask mask{side, std::vector<std::uint8_t>(side * side, 0)};
  for (std::size_t r = r0; r < std::min(r1, side); ++r)
    for (std::size_t c = c0; c < std::min(c1, side); ++c) mask.cells[r * side + c] = 1;
  mask.validate();
  return mask;
}

void BoxMask::validate() const {
  if (cells.size() != side * side) throw DimensionError("box mask is not side x side");
  bool any = false;
  for (auto v : cells) {
    if (v > 1) throw ContractError("box mask entries must be 0 or 1");
    any = any || v == 1;
  }
  if (!any) throw UndefinedMetricError("box mask is empty");
}

Grid upsample(const Grid& grid, std::size_t factor) {
  if (factor < 1) throw ContractError("upsampling factor must be >= 1");
  if (grid.cells.size() != grid.side * grid.side) throw DimensionError("grid is not square");
  const std::size_t side = grid.side * factor;
  Grid out{side, std::vector<double>(side * side)};
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) out.cells[r * side + c] = grid.at(r / factor, c / factor);
  return out;
}

double bbox_cosine(const Grid& attention, const BoxMask& mask, std::size_t factor) {
  mask.validate();
  if (attention.side * factor != mask.side) {
    throw DimensionError("upsampled attention side " + std::to_string(attention.side * factor) +
                         " differs from mask side " + std::to_string(mask.side));
  }
  const Grid up = upsample(attention, factor);
  double dot = 0.0;
  double norm_a = 0.0;
  double norm_v = 0.0;
  for (std::size_t i = 0; i < up.cells.size(); ++i) {
    if (up.cells[i] < 0.0) throw ContractError("attention grid must be non-negative");
    dot += up.cells[i] * mask.cells[i];
    norm_a += up.cells[i] * up.cells[i];
    norm_v += mask.cells[i];
  }
  if (norm_a == 0.0) throw UndefinedMetricError("cosine with an all-zero attention grid");
  return dot / (std::sqrt(norm_a) * std::sqrt(norm_v));
}

}  // namespace sdclab
