#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sdclab/autodiff.hpp"
#include "sdclab/fcam.hpp"
#include "sdclab/metrics.hpp"
#include "sdclab/sdc_data.hpp"

namespace sdclab {

struct TrainConfig {
  double learning_rate = 0.0005;
  /// Weight of the mean attention entropy added to the soft loss.
  double lambda = 0.0;
  /// 0 means full batch.
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  std::string variant;

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  explicit AdamState(const ad::ParamStore& params);
};

/// One bias-corrected Adam update from the gradients currently in `params`.
/// Throws NumericalError naming the parameter if any gradient is non-finite.
void adam_step(ad::ParamStore& params, AdamState& state, double learning_rate);

struct DynamicsRecord {
  std::size_t epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double ft = 0.0;
  double ftpt = 0.0;
  double ffpt = 0.0;
  double ftpf = 0.0;
  double ffpf = 0.0;
  double loss = 0.0;
  friend bool operator==(const DynamicsRecord&, const DynamicsRecord&) = default;
};

struct DynamicsLog {
  std::vector<DynamicsRecord> records;

  static constexpr const char* kHeader = "epoch,train_acc,test_acc,ft,ftpt,ffpt,ftpf,ffpf,loss";
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static DynamicsLog read_csv(std::istream& in);
  static DynamicsLog read_csv(const std::filesystem::path& path);
  friend bool operator==(const DynamicsLog&, const DynamicsLog&) = default;
};

struct TrainStats {
  std::size_t classifier_rows = 0;
  std::size_t instance_visits = 0;
  std::size_t steps = 0;

  /// Classification-network evaluations per training instance.
  double classifier_evals_per_instance() const noexcept {
    return instance_visits == 0 ? 0.0
                                : static_cast<double>(classifier_rows) /
                                      static_cast<double>(instance_visits);
  }
};

struct TrainResult {
  DynamicsLog log;
  TrainStats stats;
};

/// Batch of instances as segment rows [B*m, d] with labels; built only from
/// the fg-blind view.
struct Batch {
  Tensor segments;
  std::vector<std::size_t> labels;
  std::size_t size() const noexcept { return labels.size(); }
};

Batch make_batch(const TrainingView& view, std::span<const std::size_t> indices);

/// Mean over the batch of CE(g(attended), y) + lambda * Ent(alpha).
ad::NodeId soft_loss(ad::Tape& tape, const FcamGraph& graph, std::span<const std::size_t> labels,
                     double lambda);
/// Mean over the batch of sum_j alpha_j * CE(g(phi(x_j)), y).
ad::NodeId hard_loss(ad::Tape& tape, const FcamGraph& graph, std::span<const std::size_t> labels,
                     std::size_t m);
/// Records the loss matching the model's mode with parameters bound.
ad::NodeId training_loss(ad::Tape& tape, FcamModel& model, const Batch& batch, double lambda,
                         std::size_t* classifier_rows = nullptr);

/// Single-instance loss values.
double loss_soft(const FcamModel& model, std::span<const double> segments, std::size_t label,
                 double lambda);
double loss_hard(const FcamModel& model, std::span<const double> segments, std::size_t label);

/// Predictions joined with the foreground index.
std::vector<EvalRecord> evaluate(const FcamModel& model, const EvaluationView& view);

/// Called after each epoch with the record just appended.
using EpochCallback = std::function<void(const DynamicsRecord&)>;

/// Adam training on the training split. Dynamics are measured on the test
/// split, or on the training split when no test instances exist.
TrainResult train(FcamModel& model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace sdclab
