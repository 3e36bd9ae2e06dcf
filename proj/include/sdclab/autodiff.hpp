#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records operations eagerly (define-by-run). Every node keeps its
// forward value; backward() walks the tape in reverse and accumulates
// gradients into the ParamStore the parameter leaves were bound to.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdclab/tensor.hpp"

namespace sdclab::ad {

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

/// Named parameter tensors with gradient slots of identical shape.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;
  std::optional<ParamId> find(std::string_view name) const;

  const std::string& name(ParamId id) const { return entries_.at(id.index).name; }
  Tensor& value(ParamId id) { return entries_.at(id.index).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
  Tensor& grad(ParamId id) { return entries_.at(id.index).grad; }
  const Tensor& grad(ParamId id) const { return entries_.at(id.index).grad; }

  void zero_grad();

  /// Manifest + little-endian f64 payload; see README for the byte layout.
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  /// Replaces the values of an existing store; names and shapes must match.
  void load(std::istream& in);
  void load(const std::filesystem::path& path);
  /// Builds a fresh store from a serialized stream.
  static ParamStore read(std::istream& in);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  std::vector<Entry> entries_;
};

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

using Inputs = std::span<const Tensor* const>;
/// Gradient slots of the inputs; a slot is null when that input needs no gradient.
using InputGrads = std::span<Tensor* const>;
using ForwardFn = std::function<Tensor(Inputs)>;
using BackwardFn =
    std::function<void(Inputs inputs, const Tensor& output, const Tensor& output_grad,
                       InputGrads input_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  NodeId constant(Tensor value);
  /// Leaf bound to a trainable parameter; backward() accumulates into `store`.
  NodeId parameter(ParamStore& store, ParamId id);

  /// Records a primitive. `forward` runs immediately and again on replay().
  NodeId record(std::string_view op, std::vector<NodeId> inputs, ForwardFn forward,
                BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  /// Gradient of the last backward() root with respect to `id` (zeros if unreached).
  Tensor grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
  std::string_view op_name(NodeId id) const { return nodes_.at(id.index).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Accumulates d(root)/d(theta) into every bound ParamStore.
  void backward(NodeId root);

  /// Recomputes every non-leaf value in tape order. Parameter leaves re-read
  /// their store, so replay after an update reflects the new parameters.
  void replay();

 private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    ForwardFn forward;
    BackwardFn backward;
    ParamStore* store = nullptr;
    ParamId param;
  };

  std::vector<const Tensor*> input_values(const Node& node) const;

  std::vector<Node> nodes_;
};

// Primitive operations. Matrices are [rows, cols] with one sample per row.

/// W x + b for W [out, in], b [out]; x is [in] or [n, in].
NodeId affine(Tape& tape, NodeId weight, NodeId bias, NodeId x);
NodeId relu(Tape& tape, NodeId x);
NodeId tanh(Tape& tape, NodeId x);
NodeId add(Tape& tape, NodeId a, NodeId b);
NodeId mul(Tape& tape, NodeId a, NodeId b);
NodeId scale(Tape& tape, NodeId x, double factor);
NodeId sum(Tape& tape, NodeId x);
NodeId mean(Tape& tape, NodeId x);
/// [n, c] -> [n]
NodeId sum_rows(Tape& tape, NodeId x);
NodeId reshape(Tape& tape, NodeId x, Shape shape);
/// Passes the value through and blocks the gradient.
NodeId detach(Tape& tape, NodeId x);

/// -log softmax(logits)[label] for a single logit vector, as a scalar.
NodeId cross_entropy(Tape& tape, NodeId logits, std::size_t label);
/// Row-wise cross entropy: logits [n, k], labels n -> losses [n].
NodeId cross_entropy_rows(Tape& tape, NodeId logits, std::vector<std::size_t> labels);

/// log(sum(exp(z))) computed with the max shift.
double log_sum_exp(std::span<const double> z);

/// Builds a scalar on a fresh tape from the current parameter values.
using ScalarGraph = std::function<NodeId(Tape&, ParamStore&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_coordinate;
};

/// Compares analytic gradients against central differences over every
/// parameter coordinate. Relative error is
/// |analytic - numeric| / max(1e-8, r, |analytic| + |numeric|), where
/// r = 1e5 * DBL_EPSILON * max(1, |f|) / step bounds the rounding noise of
/// the central difference.
GradCheckResult grad_check(const ScalarGraph& function, ParamStore& params, double step);

}  // namespace sdclab::ad
