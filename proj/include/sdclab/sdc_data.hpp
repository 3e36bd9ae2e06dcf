#pragma once

// Mosaic instance generation for selective dependence classification and
// the dataset container with its fg-blind training view.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sdclab/rng.hpp"

namespace sdclab {

struct Gaussian {
  std::vector<double> mean;
  double stddev = 1.0;
};

struct Mixture {
  std::vector<Gaussian> components;
  std::vector<double> weights;
};

struct PointMass {
  std::vector<double> point;
};

/// Segment vectors read from a CSV file of `tag,v1,...,vd` lines; the pool is
/// every vector whose tag is listed.
struct FromFile {
  std::filesystem::path path;
  std::vector<std::string> tags;
};

struct BaseDistributionSpec {
  std::variant<Gaussian, Mixture, PointMass, FromFile> kind;

  /// Throws ConfigError unless the spec is usable for dimension `d`.
  void validate(std::size_t d) const;
};

struct SdcDims {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t k = 0;
  friend bool operator==(const SdcDims&, const SdcDims&) = default;
};

struct SdcConfig {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t k = 0;
  BaseDistributionSpec background;
  std::vector<BaseDistributionSpec> foregrounds;
  /// File pools are drawn without replacement unless this is set.
  bool sample_with_replacement = false;

  SdcDims dims() const { return {d, m, k}; }
  void validate() const;
};

/// m segments of dimension d stored segment-major, the class label, and the
/// index of the foreground segment.
struct MosaicInstance {
  std::size_t d = 0;
  std::size_t m = 0;
  std::vector<double> segments;
  std::size_t label = 0;
  std::size_t fg_index = 0;

  std::span<const double> segment(std::size_t j) const {
    return std::span<const double>(segments).subspan(j * d, d);
  }
  friend bool operator==(const MosaicInstance&, const MosaicInstance&) = default;
};

/// Draws mosaic instances for one configuration. File-backed pools are loaded
/// and shuffled once on construction; everything else is stateless.
class MosaicSampler {
 public:
  MosaicSampler(SdcConfig config, std::uint64_t pool_seed = 0);

  const SdcConfig& config() const noexcept { return config_; }

  /// Draws in the order: foreground index, label, background segments in
  /// increasing position, then the foreground segment.
  MosaicInstance sample(CounterRng& rng);

 private:
  struct Pool {
    std::vector<std::vector<double>> vectors;
    std::size_t cursor = 0;
  };
  void draw(std::size_t spec_index, CounterRng& rng, std::span<double> out);

  SdcConfig config_;
  // Index 0 is the background, 1..k the foregrounds.
  std::map<std::size_t, Pool> pools_;
};

/// Convenience for configurations without file pools.
MosaicInstance sample_instance(const SdcConfig& config, CounterRng& rng);

enum class Split { train, test, all };

class Dataset;

/// Fg-blind access to a split: segments and labels only.
class TrainingView {
 public:
  std::size_t size() const noexcept { return end_ - begin_; }
  SdcDims dims() const noexcept;
  std::span<const double> segments(std::size_t i) const;
  std::size_t label(std::size_t i) const;

 private:
  friend class Dataset;
  friend class EvaluationView;
  TrainingView(const Dataset* ds, std::size_t begin, std::size_t end)
      : ds_(ds), begin_(begin), end_(end) {}
  const Dataset* ds_;
  std::size_t begin_;
  std::size_t end_;
};

/// Evaluation access to a split, including the foreground index.
class EvaluationView {
 public:
  std::size_t size() const noexcept { return end_ - begin_; }
  SdcDims dims() const noexcept;
  std::span<const double> segments(std::size_t i) const;
  std::size_t label(std::size_t i) const;
  std::size_t fg_index(std::size_t i) const;
  TrainingView without_foreground() const { return TrainingView(ds_, begin_, end_); }

 private:
  friend class Dataset;
  EvaluationView(const Dataset* ds, std::size_t begin, std::size_t end)
      : ds_(ds), begin_(begin), end_(end) {}
  const Dataset* ds_;
  std::size_t begin_;
  std::size_t end_;
};

/// Immutable set of instances. The first n_train() instances form the
/// training split and the remaining n_test() the test split.
class Dataset {
 public:
  Dataset(SdcDims dims, std::vector<MosaicInstance> instances, double test_fraction,
          std::uint64_t seed, std::string preset = {}, std::optional<SdcConfig> config = {});

  SdcDims dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return instances_.size(); }
  std::size_t n_test() const noexcept { return n_test_; }
  std::size_t n_train() const noexcept { return instances_.size() - n_test_; }
  double test_fraction() const noexcept { return test_fraction_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& preset() const noexcept { return preset_; }
  /// Generating configuration when known (generated in-process or from a preset).
  const std::optional<SdcConfig>& config() const noexcept { return config_; }
  const std::vector<MosaicInstance>& instances() const noexcept { return instances_; }

  TrainingView training_view(Split split) const;
  EvaluationView evaluation_view(Split split) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  std::pair<std::size_t, std::size_t> range(Split split) const;

  SdcDims dims_;
  std::vector<MosaicInstance> instances_;
  std::size_t n_test_ = 0;
  double test_fraction_ = 0.0;
  std::uint64_t seed_ = 0;
  std::string preset_;
  std::optional<SdcConfig> config_;
};

/// n instances with floor(n * test_fraction) held out for testing. Instance i
/// uses the stream CounterRng::derive(seed, {i}).
Dataset make_dataset(const SdcConfig& config, std::size_t n, double test_fraction,
                     std::uint64_t seed, std::string preset = {});

// Interchange format: one JSON header line, then one CSV record per instance.
inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string dataset_to_string(const Dataset& ds);
/// Throws ParseError (with byte offset) on malformed content and SchemaError
/// when the header disagrees with `expected`.
Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<SdcDims>& expected = std::nullopt);
Dataset dataset_from_string(std::string_view text,
                            const std::optional<SdcDims>& expected = std::nullopt);

// Presets.

struct PresetInfo {
  std::string name;
  std::string description;
  std::size_t default_n;
  double default_test_fraction;
};

const std::vector<PresetInfo>& presets();
/// Throws ConfigError listing the known presets.
const PresetInfo& preset_info(std::string_view name);
SdcConfig preset_config(std::string_view name);

}  // namespace sdclab
