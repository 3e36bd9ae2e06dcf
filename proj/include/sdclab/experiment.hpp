#pragma once

// Benchmark harness: variant codes, architecture presets, single runs with
// their on-disk artifacts, and parallel seed sweeps.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdclab/fcam.hpp"
#include "sdclab/report.hpp"
#include "sdclab/sdc_data.hpp"
#include "sdclab/training.hpp"

namespace sdclab {

/// A table row label such as "SM-0" or "SpMax-2": attention family plus
/// averaging layer.
struct Variant {
  std::string family;  // SM, ER, SpMax, SSM, HA
  std::size_t averaging_layer = 0;
  ActivationKind activation = ActivationKind::softmax;
  AttentionMode mode = AttentionMode::soft;
  bool entropy_regularized = false;

  std::string name() const { return family + "-" + std::to_string(averaging_layer); }
  std::string mechanism() const;
};

/// Throws ConfigError for unknown codes.
Variant parse_variant(std::string_view code);
/// Comma-separated list of codes.
std::vector<Variant> parse_variant_list(std::string_view codes);
/// SM, ER, SpMax, SSM, HA at layers 0 and 2.
std::vector<Variant> benchmark_variants();

/// Default entropy weight of the ER variants.
inline constexpr double kDefaultEntropyWeight = 0.003;

enum class Architecture {
  mlp,          // f: d-50-50-1, g: d'-50-k, ReLU
  linear,       // f: d-1, g: d-k
  linear_relu,  // f: d-1, g: d-50-k, ReLU
};

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view name);
/// Architecture the dataset preset was designed for (mlp when unknown).
Architecture default_architecture(std::string_view preset);
FcamConfig make_fcam_config(Architecture arch, const Variant& variant, const SdcDims& dims);

struct TrainOverrides {
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<double> lambda;
  std::optional<std::size_t> batch_size;
};

/// Preset-dependent defaults (error-mode presets: 500 full-batch epochs;
/// otherwise 200 epochs of batch 32) with overrides applied.
TrainConfig make_train_config(std::string_view preset, const Variant& variant,
                              std::uint64_t seed, const TrainOverrides& overrides);

struct RunOutcome {
  Variant variant;
  std::uint64_t seed = 0;
  ReportRow row;
  DynamicsLog log;
  TrainStats stats;
  std::vector<double> threshold_fractions;
};

/// Trains one (variant, seed) pair and writes into `out_dir`: model.txt,
/// params.bin, params.init.bin, dynamics.csv, threshold.csv, run.txt, and
/// appends the metrics row to metrics.csv.
RunOutcome run_experiment(const Dataset& dataset, const std::filesystem::path& dataset_path,
                          const Variant& variant, std::uint64_t seed,
                          const TrainOverrides& overrides,
                          std::optional<Architecture> architecture,
                          const std::filesystem::path& out_dir);

/// Key/value configuration file: `key = value` lines, `#` comments.
std::map<std::string, std::string> parse_key_values(std::istream& in);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Dataset generator configuration from keys d, m, k, background,
/// foreground.1 .. foreground.k (JSON distribution values) and
/// sample_with_replacement.
SdcConfig sdc_config_from_keys(const std::map<std::string, std::string>& keys);
BaseDistributionSpec parse_distribution(std::string_view json_text);

struct ExperimentConfig {
  std::string preset;
  std::filesystem::path dataset;
  std::optional<std::size_t> n;
  std::uint64_t dataset_seed = 0;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  TrainOverrides overrides;
  std::optional<Architecture> architecture;
  std::filesystem::path out;
  std::size_t workers = 0;  // 0: hardware concurrency

  void validate() const;
};

/// Parses "0,1,2" or "0-4" (or a mix).
std::vector<std::uint64_t> parse_seed_list(std::string_view text);
ExperimentConfig experiment_config_from_keys(const std::map<std::string, std::string>& keys);

struct SweepResult {
  RunReport report;
  std::size_t failures = 0;
};

/// Runs every (variant, seed) pair on a bounded worker pool. Each run owns
/// out/<variant>/seed-<s>; the report is written to out/report.csv.
SweepResult sweep(const ExperimentConfig& config);

/// Writes the dataset for a sweep/preset and returns its path.
std::filesystem::path materialize_dataset(const ExperimentConfig& config);

}  // namespace sdclab
