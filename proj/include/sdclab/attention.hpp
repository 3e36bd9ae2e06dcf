#pragma once

// Attention activations over a vector of focus scores, the entropy
// functional and hard selection. The free functions are pure; the ad::
// overloads record the same kernels on a tape, row by row.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "sdclab/autodiff.hpp"

namespace sdclab {

enum class ActivationKind { softmax, sparsemax, spherical_softmax, hard };

std::string_view to_string(ActivationKind kind);
/// Accepts "softmax", "sparsemax", "spherical_softmax", "hard".
ActivationKind parse_activation(std::string_view name);

/// Probability vector over the m segments of an instance.
struct AttentionVector {
  std::vector<double> weights;
  /// Set when spherical softmax met an all-zero score vector and fell back to uniform.
  bool degenerate = false;

  std::size_t size() const noexcept { return weights.size(); }
  double operator[](std::size_t j) const noexcept { return weights[j]; }
};

/// Tolerance for the sum-to-one invariant of every activation.
inline constexpr double kSimplexTolerance = 1e-9;
/// Guard added to the squared norm in spherical softmax.
inline constexpr double kSphericalEpsilon = 1e-12;

AttentionVector softmax(std::span<const double> z);
/// Euclidean projection onto the probability simplex (sort and threshold).
AttentionVector sparsemax(std::span<const double> z);
/// alpha_i = (z_i^2 + eps/m) / (sum_j z_j^2 + eps); uniform when z == 0.
AttentionVector spherical_softmax(std::span<const double> z);
/// Hard attention scores segments with softmax; selection happens downstream.
AttentionVector activate(ActivationKind kind, std::span<const double> z);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(std::span<const double> alpha);
/// Index of the largest weight; ties go to the lowest index.
std::size_t hard_select(std::span<const double> alpha);
bool is_probability_vector(std::span<const double> alpha, double tol = kSimplexTolerance);

namespace kernels {

void softmax(std::span<const double> z, std::span<double> out);
/// Returns the threshold tau.
double sparsemax(std::span<const double> z, std::span<double> out);
/// Returns true on the degenerate (all-zero) input.
bool spherical_softmax(std::span<const double> z, std::span<double> out);

// Vector-Jacobian products; results are added into `grad_z`.
void softmax_vjp(std::span<const double> alpha, std::span<const double> grad_alpha,
                 std::span<double> grad_z);
void sparsemax_vjp(std::span<const double> alpha, std::span<const double> grad_alpha,
                   std::span<double> grad_z);
void spherical_softmax_vjp(std::span<const double> z, std::span<const double> alpha,
                           std::span<const double> grad_alpha, std::span<double> grad_z);
void entropy_vjp(std::span<const double> alpha, double grad_out, std::span<double> grad_alpha);

}  // namespace kernels

namespace ad {

/// Row-wise activation of a score matrix [n, m] (or a single vector [m]).
NodeId attention(Tape& tape, NodeId scores, ActivationKind kind);
/// Row-wise entropy: [n, m] -> [n].
NodeId entropy_rows(Tape& tape, NodeId alpha);

}  // namespace ad

}  // namespace sdclab
