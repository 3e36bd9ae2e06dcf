#pragma once

// Evaluation quantities for trained FCAMs: accuracy, focus-true rate and its
// quadrant decomposition, sparsity of attention vectors, threshold curves,
// and bounding-box alignment of attention grids.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sdclab {

struct EvalRecord {
  std::size_t predicted = 0;
  std::size_t label = 0;
  std::vector<double> alpha;
  std::size_t fg_index = 0;
  bool focus_correct = false;
  bool prediction_correct = false;
};

/// alpha[fg] strictly greater than every other weight.
bool focus_is_correct(std::span<const double> alpha, std::size_t fg_index);
EvalRecord make_record(std::size_t predicted, std::size_t label, std::vector<double> alpha,
                       std::size_t fg_index);

double accuracy(std::span<const EvalRecord> records);
/// Fraction of focus-correct records; throws UndefinedMetricError when empty.
double ft(std::span<const EvalRecord> records);

struct QuadrantCounts {
  std::size_t ftpt = 0;  // focus true, predicted true
  std::size_t ffpt = 0;
  std::size_t ftpf = 0;
  std::size_t ffpf = 0;
  std::size_t total() const noexcept { return ftpt + ffpt + ftpf + ffpf; }
};

struct Quadrants {
  QuadrantCounts counts;
  double ftpt = 0.0;
  double ffpt = 0.0;
  double ftpf = 0.0;
  double ffpf = 0.0;
};

Quadrants quadrants(std::span<const EvalRecord> records);

inline constexpr double kNnzThreshold = 0.01;

struct Sparsity {
  double nnz = 0.0;   // count of weights above kNnzThreshold
  double dist = 0.0;  // distance to the nearest one-hot vector
  double ent = 0.0;   // entropy in nats
};

Sparsity sparsity(std::span<const double> alpha);
/// Mean of the per-record sparsity metrics.
Sparsity mean_sparsity(std::span<const EvalRecord> records);

/// `points` evenly spaced thresholds covering [0, 1].
std::vector<double> threshold_grid(std::size_t points = 101);
/// For each t, the fraction of records with alpha[fg] > t.
std::vector<double> threshold_curve(std::span<const EvalRecord> records,
                                    std::span<const double> thresholds);

/// Square grid of cell values in row-major order.
struct Grid {
  std::size_t side = 0;
  std::vector<double> cells;

  double at(std::size_t r, std::size_t c) const { return cells[r * side + c]; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Binary bounding-box mask of side N.
struct BoxMask {
  std::size_t side = 0;
  std::vector<std::uint8_t> cells;

  /// Mask with ones on rows [r0, r1) and columns [c0, c1).
  static BoxMask rectangle(std::size_t side, std::size_t r0, std::size_t r1, std::size_t c0,
                           std::size_t c1);
  void validate() const;
};

/// Nearest-neighbour upsampling: each cell becomes a factor x factor block.
Grid upsample(const Grid& grid, std::size_t factor);

/// Cosine between the upsampled attention grid and the mask.
double bbox_cosine(const Grid& attention, const BoxMask& mask, std::size_t factor);

}  // namespace sdclab
