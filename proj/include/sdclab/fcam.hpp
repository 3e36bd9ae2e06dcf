#pragma once

// Focus-classify attention model: a focus network scores each segment, an
// attention activation turns the scores into weights over segments, and a
// classification network labels the weighted combination of segment
// features taken at a chosen focus layer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdclab/attention.hpp"
#include "sdclab/autodiff.hpp"
#include "sdclab/sdc_data.hpp"

namespace sdclab {

enum class Nonlinearity { relu, tanh };
enum class AttentionMode { soft, hard };

std::string_view to_string(Nonlinearity n);
std::string_view to_string(AttentionMode m);

/// Layer widths from input to output; every layer but the last is followed
/// by the hidden nonlinearity.
struct NetworkSpec {
  std::vector<std::size_t> widths;
  Nonlinearity hidden = Nonlinearity::relu;
  /// Multiplier on the Glorot-uniform bound; 0 gives an all-zero network.
  double init_gain = 1.0;

  std::size_t hidden_layers() const noexcept { return widths.size() - 2; }
  std::size_t input_width() const noexcept { return widths.front(); }
  std::size_t output_width() const noexcept { return widths.back(); }
};

struct FcamConfig {
  NetworkSpec focus;
  NetworkSpec classify;
  ActivationKind activation = ActivationKind::softmax;
  /// 0 aggregates raw segments; l > 0 aggregates the l-th hidden layer of f.
  std::size_t averaging_layer = 0;
  AttentionMode mode = AttentionMode::soft;

  std::size_t feature_width() const;
  /// Throws ConfigError unless the networks fit segment dimension d and k classes.
  void validate(std::size_t d, std::size_t k) const;
};

/// Weighted combination of segment features.
struct AttendedInput {
  std::vector<double> x;
};

AttendedInput attended_input(const AttentionVector& alpha,
                             std::span<const std::vector<double>> features);

/// Dense multilayer perceptron whose parameters live in a shared store.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ad::ParamStore& store, const std::string& prefix, NetworkSpec spec, CounterRng& init);

  const NetworkSpec& spec() const noexcept { return spec_; }

  /// Activations of every layer: [0] is the input, [l] the l-th hidden layer
  /// after its nonlinearity, back() the linear output. Stops after `last`.
  std::vector<ad::NodeId> forward(ad::Tape& tape, ad::NodeId input,
                                  const std::vector<ad::NodeId>& weights,
                                  const std::vector<ad::NodeId>& biases,
                                  std::optional<std::size_t> last = std::nullopt) const;

  const std::vector<ad::ParamId>& weight_ids() const noexcept { return weights_; }
  const std::vector<ad::ParamId>& bias_ids() const noexcept { return biases_; }

 private:
  NetworkSpec spec_;
  std::vector<ad::ParamId> weights_;
  std::vector<ad::ParamId> biases_;
};

/// Tape nodes of one batched FCAM pass over B instances.
struct FcamGraph {
  std::size_t batch = 0;
  ad::NodeId scores;    // [B, m]
  ad::NodeId alpha;     // [B, m]
  ad::NodeId features;  // [B*m, d']
  /// Soft mode: attended inputs [B, d'] and logits [B, k].
  /// Hard mode: per-patch logits [B*m, k] on detached features.
  std::optional<ad::NodeId> attended;
  ad::NodeId logits;
  /// Rows fed through the classification network.
  std::size_t classifier_rows = 0;
};

/// Prediction of the model on one instance.
struct Prediction {
  std::vector<double> alpha;
  std::vector<double> probabilities;
  std::size_t predicted = 0;
  /// Segment fed to g in hard mode.
  std::optional<std::size_t> selected;
};

class FcamModel {
 public:
  FcamModel(FcamConfig config, SdcDims dims, std::uint64_t seed);

  const FcamConfig& config() const noexcept { return config_; }
  SdcDims dims() const noexcept { return dims_; }
  std::uint64_t seed() const noexcept { return seed_; }
  ad::ParamStore& params() noexcept { return params_; }
  const ad::ParamStore& params() const noexcept { return params_; }
  const Mlp& focus() const noexcept { return focus_; }
  const Mlp& classifier() const noexcept { return classify_; }

  /// Records a batched pass. `segments` is [B*m, d] (instance-major). With
  /// `trainable` the parameters are bound for backward(); otherwise they
  /// enter the tape as constants.
  FcamGraph build(ad::Tape& tape, Tensor segments, std::size_t batch, bool trainable);
  FcamGraph build(ad::Tape& tape, Tensor segments, std::size_t batch) const;

  /// Activation of focus layer l on one segment (identity for l = 0).
  std::vector<double> feature_map(std::span<const double> segment) const;
  std::vector<double> focus_scores(std::span<const double> segments) const;
  AttentionVector attention_vector(std::span<const double> segments) const;
  /// Focus score f of each row of [n, d].
  std::vector<double> segment_scores(const Tensor& rows) const;
  /// Classification logits g(feature).
  std::vector<double> classify(std::span<const double> feature) const;
  /// Logits [n, k] for feature rows [n, d'].
  Tensor classify_rows(const Tensor& rows) const;
  /// Class probabilities: softmax(g(attended)) in soft mode,
  /// softmax(g(phi(x_j*))) with j* = hard_select(alpha) in hard mode.
  std::vector<double> forward(std::span<const double> segments) const;

  /// Batched predictions. In hard mode `sample_seed` switches selection from
  /// argmax to sampling j ~ alpha.
  std::vector<Prediction> predict(const TrainingView& view,
                                  std::optional<std::uint64_t> sample_seed = std::nullopt) const;

  /// Writes model.txt (configuration manifest) and params.bin into `dir`.
  void save(const std::filesystem::path& dir, std::string_view params_file = "params.bin") const;
  static FcamModel load(const std::filesystem::path& dir,
                        std::string_view params_file = "params.bin");

 private:
  FcamGraph build_impl(ad::Tape& tape, Tensor segments, std::size_t batch,
                       ad::ParamStore* bind) const;

  FcamConfig config_;
  SdcDims dims_;
  std::uint64_t seed_;
  ad::ParamStore params_;
  Mlp focus_;
  Mlp classify_;
};

namespace ad {

/// Attended inputs: alpha [B, m], features [B*m, d'] -> [B, d'].
NodeId attend(Tape& tape, NodeId alpha, NodeId features);

}  // namespace ad

}  // namespace sdclab
