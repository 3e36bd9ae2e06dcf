#include "sdclab/sdc_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sdclab/error.hpp"

namespace sdclab {

// ------------------------------------------------------------- distributions

namespace {

void validate_gaussian(const Gaussian& g, std::size_t d) {
  if (g.mean.size() != d) {
    throw ConfigError("gaussian mean has dimension " + std::to_string(g.mean.size()) +
                      ", expected " + std::to_string(d));
  }
  if (!(g.stddev > 0.0) || !std::isfinite(g.stddev)) {
    throw ConfigError("gaussian stddev must be positive and finite");
  }
}

void draw_gaussian(const Gaussian& g, CounterRng& rng, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.mean[i] + g.stddev * rng.normal();
}

std::map<std::string, std::vector<std::vector<double>>> read_pool_file(
    const std::filesystem::path& path, std::size_t d) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open segment pool file " + path.string());
  std::map<std::string, std::vector<std::vector<double>>> pools;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tag;
    std::getline(ls, tag, ',');
    std::vector<double> v;
    std::string field;
    while (std::getline(ls, field, ',')) {
      double x = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw ParseError("bad number '" + field + "' in " + path.string(), line_start);
      }
      v.push_back(x);
    }
    if (v.size() != d) {
      throw ParseError("pool vector of dimension " + std::to_string(v.size()) + " in " +
                           path.string() + ", expected " + std::to_string(d),
                       line_start);
    }
    pools[tag].push_back(std::move(v));
  }
  return pools;
}

}  // namespace

void BaseDistributionSpec::validate(std::size_t d) const {
  std::visit(
      [d](const auto& spec) {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          validate_gaussian(spec, d);
        } else if constexpr (std::is_same_v<T, Mixture>) {
          if (spec.components.empty() || spec.components.size() != spec.weights.size()) {
            throw ConfigError("mixture needs one weight per component");
          }
          double total = 0.0;
          for (double w : spec.weights) {
            if (!(w >= 0.0)) throw ConfigError("mixture weights must be non-negative");
            total += w;
          }
          if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("mixture weights sum to " + std::to_string(total) + ", not 1");
          }
          for (const auto& c : spec.components) validate_gaussian(c, d);
        } else if constexpr (std::is_same_v<T, PointMass>) {
          if (spec.point.size() != d) throw ConfigError("point mass has wrong dimension");
        } else {
          if (spec.tags.empty()) throw ConfigError("file-backed distribution needs a class tag");
        }
      },
      kind);
}

void SdcConfig::validate() const {
  if (d < 1) throw ConfigError("segment dimension d must be >= 1");
  if (m < 1) throw ConfigError("segments per instance m must be >= 1");
  if (k < 2) throw ConfigError("number of classes k must be >= 2");
  if (foregrounds.size() != k) {
    throw ConfigError("expected " + std::to_string(k) + " foreground distributions, got " +
                      std::to_string(foregrounds.size()));
  }
  background.validate(d);
  for (const auto& fg : foregrounds) fg.validate(d);
}

// ------------------------------------------------------------------ sampling

MosaicSampler::MosaicSampler(SdcConfig config, std::uint64_t pool_seed)
    : config_(std::move(config)) {
  config_.validate();
  for (std::size_t s = 0; s <= config_.k; ++s) {
    const auto& spec = s == 0 ? config_.background : config_.foregrounds[s - 1];
    const auto* file = std::get_if<FromFile>(&spec.kind);
    if (file == nullptr) continue;
    const auto all = read_pool_file(file->path, config_.d);
    Pool pool;
    for (const auto& tag : file->tags) {
      if (auto it = all.find(tag); it != all.end()) {
        pool.vectors.insert(pool.vectors.end(), it->second.begin(), it->second.end());
      }
    }
    if (pool.vectors.empty()) {
      throw ConfigError("no vectors for the requested tags in " + file->path.string());
    }
    CounterRng shuffle(CounterRng::derive(pool_seed, {0x706F6F6Cull, s}));
    for (std::size_t i = pool.vectors.size(); i > 1; --i) {
      std::swap(pool.vectors[i - 1], pool.vectors[shuffle.uniform_index(i)]);
    }
    pools_.emplace(s, std::move(pool));
  }
}

void MosaicSampler::draw(std::size_t spec_index, CounterRng& rng, std::span<double> out) {
  const auto& spec = spec_index == 0 ? config_.background : config_.foregrounds[spec_index - 1];
  std::visit(
      [&](const auto& dist) {
        using T = std::decay_t<decltype(dist)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          draw_gaussian(dist, rng, out);
        } else if constexpr (std::is_same_v<T, Mixture>) {
          const double u = rng.uniform();
          double acc = 0.0;
          std::size_t c = dist.components.size() - 1;
          for (std::size_t i = 0; i < dist.weights.size(); ++i) {
            acc += dist.weights[i];
            if (u < acc) {
              c = i;
              break;
            }
          }
          draw_gaussian(dist.components[c], rng, out);
        } else if constexpr (std::is_same_v<T, PointMass>) {
          std::copy(dist.point.begin(), dist.point.end(), out.begin());
        } else {
          Pool& pool = pools_.at(spec_index);
          std::size_t pick = 0;
          if (config_.sample_with_replacement) {
            pick = rng.uniform_index(pool.vectors.size());
          } else {
            if (pool.cursor >= pool.vectors.size()) {
              throw PoolExhaustedError("segment pool for tags of " + dist.path.string() +
                                       " exhausted after " + std::to_string(pool.cursor) +
                                       " draws");
            }
            pick = pool.cursor++;
          }
          std::copy(pool.vectors[pick].begin(), pool.vectors[pick].end(), out.begin());
        }
      },
      spec.kind);
}

MosaicInstance MosaicSampler::sample(CounterRng& rng) {
  const std::size_t d = config_.d;
  const std::size_t m = config_.m;
  MosaicInstance inst;
  inst.d = d;
  inst.m = m;
  inst.segments.assign(d * m, 0.0);
  inst.fg_index = rng.uniform_index(m);
  inst.label = rng.uniform_index(config_.k);
  std::span<double> segs(inst.segments);
  for (std::size_t i = 0; i < m; ++i) {
    if (i != inst.fg_index) draw(0, rng, segs.subspan(i * d, d));
  }
  draw(inst.label + 1, rng, segs.subspan(inst.fg_index * d, d));
  return inst;
}

MosaicInstance sample_instance(const SdcConfig& config, CounterRng& rng) {
  MosaicSampler sampler(config);
  return sampler.sample(rng);
}

// ------------------------------------------------------------------- dataset

SdcDims TrainingView::dims() const noexcept { return ds_->dims(); }
std::span<const double> TrainingView::segments(std::size_t i) const {
  return ds_->instances()[begin_ + i].segments;
}
std::size_t TrainingView::label(std::size_t i) const { return ds_->instances()[begin_ + i].label; }

SdcDims EvaluationView::dims() const noexcept { return ds_->dims(); }
std::span<const double> EvaluationView::segments(std::size_t i) const {
  return ds_->instances()[begin_ + i].segments;
}
std::size_t EvaluationView::label(std::size_t i) const {
  return ds_->instances()[begin_ + i].label;
}
std::size_t EvaluationView::fg_index(std::size_t i) const {
  return ds_->instances()[begin_ + i].fg_index;
}

Dataset::Dataset(SdcDims dims, std::vector<MosaicInstance> instances, double test_fraction,
                 std::uint64_t seed, std::string preset, std::optional<SdcConfig> config)
    : dims_(dims),
      instances_(std::move(instances)),
      test_fraction_(test_fraction),
      seed_(seed),
      preset_(std::move(preset)),
      config_(std::move(config)) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
  n_test_ = static_cast<std::size_t>(
      std::floor(static_cast<double>(instances_.size()) * test_fraction));
  for (const auto& inst : instances_) {
    if (inst.d != dims_.d || inst.m != dims_.m || inst.segments.size() != dims_.d * dims_.m) {
      throw SchemaError("instance shape does not match dataset dimensions");
    }
    if (inst.label >= dims_.k || inst.fg_index >= dims_.m) {
      throw SchemaError("instance label or foreground index out of range");
    }
  }
}

std::pair<std::size_t, std::size_t> Dataset::range(Split split) const {
  switch (split) {
    case Split::train: return {0, n_train()};
    case Split::test: return {n_train(), size()};
    case Split::all: break;
  }
  return {0, size()};
}

TrainingView Dataset::training_view(Split split) const {
  const auto [b, e] = range(split);
  return TrainingView(this, b, e);
}

EvaluationView Dataset::evaluation_view(Split split) const {
  const auto [b, e] = range(split);
  return EvaluationView(this, b, e);
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.dims_ == b.dims_ && a.instances_ == b.instances_ && a.n_test_ == b.n_test_ &&
         a.test_fraction_ == b.test_fraction_ && a.seed_ == b.seed_ && a.preset_ == b.preset_;
}

Dataset make_dataset(const SdcConfig& config, std::size_t n, double test_fraction,
                     std::uint64_t seed, std::string preset) {
  if (n < 1) throw ConfigError("dataset needs at least one instance");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
  MosaicSampler sampler(config, seed);
  std::vector<MosaicInstance> instances;
  instances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(CounterRng::derive(seed, {i}));
    instances.push_back(sampler.sample(rng));
  }
  return Dataset(config.dims(), std::move(instances), test_fraction, seed, std::move(preset),
                 config);
}

// ------------------------------------------------------------- serialization

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

template <class T>
T parse_field(std::string_view field, std::size_t offset, std::string_view what) {
  T value{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError("invalid " + std::string(what) + " '" + std::string(field) + "'", offset);
  }
  return value;
}

}  // namespace

std::string dataset_to_string(const Dataset& ds) {
  nlohmann::ordered_json header;
  header["version"] = kDatasetFormatVersion;
  header["d"] = ds.dims().d;
  header["m"] = ds.dims().m;
  header["k"] = ds.dims().k;
  header["n"] = ds.size();
  header["seed"] = ds.seed();
  header["test_fraction"] = ds.test_fraction();
  if (!ds.preset().empty()) header["preset"] = ds.preset();
  std::string out = header.dump();
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& inst = ds.instances()[i];
    out += std::to_string(i);
    out += ',';
    out += std::to_string(inst.label);
    out += ',';
    out += std::to_string(inst.fg_index);
    for (double v : inst.segments) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << dataset_to_string(ds);
  if (!out) throw Error("failed writing " + path.string());
}

Dataset dataset_from_string(std::string_view text, const std::optional<SdcDims>& expected) {
  const std::size_t header_end = text.find('\n');
  if (header_end == std::string_view::npos) throw ParseError("missing dataset header line", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text.substr(0, header_end));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed dataset header: ") + e.what(), e.byte);
  }
  SdcDims dims;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  std::string preset;
  try {
    const int version = header.at("version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw SchemaError("unsupported dataset version " + std::to_string(version));
    }
    dims = {header.at("d").get<std::size_t>(), header.at("m").get<std::size_t>(),
            header.at("k").get<std::size_t>()};
    n = header.at("n").get<std::size_t>();
    seed = header.at("seed").get<std::uint64_t>();
    test_fraction = header.at("test_fraction").get<double>();
    if (header.contains("preset")) preset = header.at("preset").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("invalid dataset header: ") + e.what());
  }
  if (dims.d < 1 || dims.m < 1 || dims.k < 2) throw SchemaError("invalid dimensions in header");
  if (expected && *expected != dims) {
    throw SchemaError("dataset dimensions (d=" + std::to_string(dims.d) +
                      ", m=" + std::to_string(dims.m) + ", k=" + std::to_string(dims.k) +
                      ") do not match the expected (d=" + std::to_string(expected->d) +
                      ", m=" + std::to_string(expected->m) +
                      ", k=" + std::to_string(expected->k) + ")");
  }

  std::vector<MosaicInstance> instances;
  instances.reserve(n);
  std::size_t pos = header_end + 1;
  const std::size_t values = dims.d * dims.m;
  while (pos < text.size()) {
    const std::size_t line_end = text.find('\n', pos);
    if (line_end == std::string_view::npos) {
      throw ParseError("truncated record (missing newline)", pos);
    }
    const std::string_view line = text.substr(pos, line_end - pos);
    MosaicInstance inst;
    inst.d = dims.d;
    inst.m = dims.m;
    inst.segments.reserve(values);
    std::size_t field_index = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view field =
          line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      const std::size_t offset = pos + start;
      if (field_index == 0) {
        if (parse_field<std::size_t>(field, offset, "instance id") != instances.size()) {
          throw ParseError("instance ids must be consecutive from 0", offset);
        }
      } else if (field_index == 1) {
        inst.label = parse_field<std::size_t>(field, offset, "label");
        if (inst.label >= dims.k) throw ParseError("label out of range", offset);
      } else if (field_index == 2) {
        inst.fg_index = parse_field<std::size_t>(field, offset, "foreground index");
        if (inst.fg_index >= dims.m) throw ParseError("foreground index out of range", offset);
      } else {
        inst.segments.push_back(parse_field<double>(field, offset, "segment value"));
      }
      ++field_index;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (inst.segments.size() != values) {
      throw ParseError("record has " + std::to_string(inst.segments.size()) +
                           " segment values, expected " + std::to_string(values),
                       pos);
    }
    instances.push_back(std::move(inst));
    pos = line_end + 1;
  }
  if (instances.size() != n) {
    throw ParseError("header announces " + std::to_string(n) + " records, found " +
                         std::to_string(instances.size()),
                     text.size());
  }
  std::optional<SdcConfig> config;
  if (!preset.empty()) {
    if (auto it = std::find_if(presets().begin(), presets().end(),
                               [&](const PresetInfo& p) { return p.name == preset; });
        it != presets().end()) {
      config = preset_config(preset);
      if (config->dims() != dims) config.reset();
    }
  }
  return Dataset(dims, std::move(instances), test_fraction, seed, std::move(preset),
                 std::move(config));
}

Dataset load_dataset(const std::filesystem::path& path, const std::optional<SdcDims>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_string(buf.str(), expected);
}

// ------------------------------------------------------------------- presets

namespace {

Gaussian gauss(double x, double y, double stddev) { return Gaussian{{x, y}, stddev}; }

BaseDistributionSpec spec(Gaussian g) { return BaseDistributionSpec{std::move(g)}; }

BaseDistributionSpec equal_mixture(std::vector<Gaussian> components) {
  const std::size_t n = components.size();
  return BaseDistributionSpec{Mixture{std::move(components), std::vector<double>(n, 1.0 / n)}};
}

SdcConfig two_d(std::size_t k, BaseDistributionSpec background,
                std::vector<BaseDistributionSpec> foregrounds) {
  SdcConfig c;
  c.d = 2;
  c.m = 9;
  c.k = k;
  c.background = std::move(background);
  c.foregrounds = std::move(foregrounds);
  return c;
}

}  // namespace

const std::vector<PresetInfo>& presets() {
  static const std::vector<PresetInfo> kPresets = {
      {"synth-appdx-d", "d=2, m=9, k=3; three tight foreground clusters, 3-component background",
       6000, 0.5},
      {"em1", "error mode 1: one foreground class overlaps the background under x1+x2", 200, 0.0},
      {"em2", "error mode 2: background between the foreground clusters", 200, 0.0},
      {"em3", "error mode 3: k=6 classes separable after uniform averaging", 200, 0.0},
  };
  return kPresets;
}

const PresetInfo& preset_info(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

SdcConfig preset_config(std::string_view name) {
  const auto& info = preset_info(name);
  if (info.name == "synth-appdx-d") {
    constexpr double sd = 0.01;
    return two_d(3, equal_mixture({gauss(0, 0, sd), gauss(-3, -3, sd), gauss(0, 3, sd)}),
                 {spec(gauss(3, 3, sd)), spec(gauss(-3, 3, sd)), spec(gauss(3, -3, sd))});
  }
  if (info.name == "em1") {
    return two_d(3, spec(gauss(0, 0, 0.5)),
                 {spec(gauss(3, 1, 0.3)), spec(gauss(-1, 1, 0.3)), spec(gauss(1, 3, 0.3))});
  }
  if (info.name == "em2") {
    return two_d(3, spec(gauss(0, 0, 0.3)),
                 {spec(gauss(-3, 0, 0.3)), spec(gauss(3, 0, 0.3)), spec(gauss(0, 3, 0.3))});
  }
  // em3
  std::vector<BaseDistributionSpec> fgs;
  // A column of classes through the background, set off by a small x1 gap:
  // f = -x1 focuses perfectly, yet uniform averaging already separates them.
  for (int c = 0; c < 6; ++c) fgs.push_back(spec(gauss(-0.02, 6.0 * (c - 2.5), 0.002)));
  return two_d(6, spec(gauss(0, 0, 0.002)), std::move(fgs));
}

}  // namespace sdclab
