#include "sdclab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sdclab/error.hpp"

namespace sdclab {

// ------------------------------------------------------------------ variants

std::string Variant::mechanism() const {
  if (family == "SM") return "Softmax (SM)";
  if (family == "ER") return "Entropy reg.";
  if (family == "SpMax") return "Sparsemax";
  if (family == "SSM") return "Spherical SM";
  return "Hard attention";
}

Variant parse_variant(std::string_view code) {
  const auto dash = code.rfind('-');
  if (dash == std::string_view::npos || dash + 1 == code.size()) {
    throw ConfigError("variant '" + std::string(code) + "' is not FAMILY-LAYER (e.g. SM-0)");
  }
  Variant v;
  v.family = std::string(code.substr(0, dash));
  const auto digits = code.substr(dash + 1);
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v.averaging_layer);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) {
    throw ConfigError("variant '" + std::string(code) + "' has a non-numeric layer");
  }
  if (v.family == "SM") {
  } else if (v.family == "ER") {
    v.entropy_regularized = true;
  } else if (v.family == "SpMax") {
    v.activation = ActivationKind::sparsemax;
  } else if (v.family == "SSM") {
    v.activation = ActivationKind::spherical_softmax;
  } else if (v.family == "HA") {
    v.activation = ActivationKind::hard;
    v.mode = AttentionMode::hard;
  } else {
    throw ConfigError("unknown variant family '" + v.family + "' (known: SM, ER, SpMax, SSM, HA)");
  }
  return v;
}

std::vector<Variant> parse_variant_list(std::string_view codes) {
  std::vector<Variant> out;
  std::stringstream ss{std::string(codes)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(parse_variant(item));
  }
  if (out.empty()) throw ConfigError("empty variant list");
  return out;
}

std::vector<Variant> benchmark_variants() {
  std::vector<Variant> out;
  for (const char* layer : {"0", "2"}) {
    for (const char* family : {"SM", "ER", "SpMax", "SSM", "HA"}) {
      out.push_back(parse_variant(std::string(family) + "-" + layer));
    }
  }
  return out;
}

// ------------------------------------------------------------- architectures

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::mlp: return "mlp";
    case Architecture::linear: return "linear";
    case Architecture::linear_relu: return "linear-relu";
  }
  return "mlp";
}

Architecture parse_architecture(std::string_view name) {
  for (auto a : {Architecture::mlp, Architecture::linear, Architecture::linear_relu}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(name) +
                    "' (known: mlp, linear, linear-relu)");
}

Architecture default_architecture(std::string_view preset) {
  if (preset == "em1" || preset == "em2") return Architecture::linear;
  if (preset == "em3") return Architecture::linear_relu;
  return Architecture::mlp;
}

FcamConfig make_fcam_config(Architecture arch, const Variant& variant, const SdcDims& dims) {
  constexpr std::size_t kHidden = 50;
  FcamConfig c;
  c.activation = variant.activation;
  c.mode = variant.mode;
  c.averaging_layer = variant.averaging_layer;
  switch (arch) {
    case Architecture::mlp:
      c.focus = {{dims.d, kHidden, kHidden, 1}, Nonlinearity::relu, 1.0};
      break;
    case Architecture::linear:
    case Architecture::linear_relu:
      // Linear focus nets start at f = 0 (uniform attention).
      c.focus = {{dims.d, 1}, Nonlinearity::relu, 0.0};
      break;
  }
  const std::size_t width = c.feature_width();
  if (arch == Architecture::linear) {
    c.classify = {{width, dims.k}, Nonlinearity::relu, 1.0};
  } else {
    c.classify = {{width, kHidden, dims.k}, Nonlinearity::relu, 1.0};
  }
  c.validate(dims.d, dims.k);
  return c;
}

TrainConfig make_train_config(std::string_view preset, const Variant& variant,
                              std::uint64_t seed, const TrainOverrides& overrides) {
  TrainConfig t;
  t.seed = seed;
  t.variant = variant.name();
  if (preset == "em1" || preset == "em2" || preset == "em3") {
    t.epochs = 500;
    t.batch_size = 0;
    t.learning_rate = 0.003;
  }
  if (variant.entropy_regularized) t.lambda = kDefaultEntropyWeight;
  if (overrides.epochs) t.epochs = *overrides.epochs;
  if (overrides.learning_rate) t.learning_rate = *overrides.learning_rate;
  if (overrides.batch_size) t.batch_size = *overrides.batch_size;
  if (overrides.lambda && variant.entropy_regularized) t.lambda = *overrides.lambda;
  t.validate();
  return t;
}

// --------------------------------------------------------------- single run

RunOutcome run_experiment(const Dataset& dataset, const std::filesystem::path& dataset_path,
                          const Variant& variant, std::uint64_t seed,
                          const TrainOverrides& overrides,
                          std::optional<Architecture> architecture,
                          const std::filesystem::path& out_dir) {
  const Architecture arch = architecture.value_or(default_architecture(dataset.preset()));
  const FcamConfig fcam = make_fcam_config(arch, variant, dataset.dims());
  const TrainConfig train_config = make_train_config(dataset.preset(), variant, seed, overrides);

  std::filesystem::create_directories(out_dir);
  FcamModel model(fcam, dataset.dims(), seed);
  model.params().save(out_dir / "params.init.bin");

  RunOutcome outcome;
  outcome.variant = variant;
  outcome.seed = seed;
  auto result = train(model, dataset, train_config);
  outcome.log = std::move(result.log);
  outcome.stats = result.stats;
  model.save(out_dir);
  outcome.log.write_csv(out_dir / "dynamics.csv");

  const EvaluationView monitor =
      dataset.evaluation_view(dataset.n_test() > 0 ? Split::test : Split::train);
  const auto records = evaluate(model, monitor);
  const auto sparse = mean_sparsity(records);
  ReportRow& row = outcome.row;
  row.algorithm = variant.name();
  row.averaging_layer = variant.averaging_layer;
  row.attention_mechanism = variant.mechanism();
  row.seed = std::to_string(seed);
  row.accuracy = 100.0 * accuracy(records);
  row.ft = 100.0 * ft(records);
  row.nnz = sparse.nnz;
  row.dist = sparse.dist;
  row.ent = sparse.ent;
  append_metrics_row(out_dir / "metrics.csv", row);

  const auto grid = threshold_grid();
  outcome.threshold_fractions = threshold_curve(records, grid);
  {
    std::ofstream out(out_dir / "threshold.csv");
    out << "threshold,fraction\n";
    char line[64];
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g\n", grid[i], outcome.threshold_fractions[i]);
      out << line;
    }
  }
  {
    std::ofstream out(out_dir / "run.txt");
    char lr[64];
    std::snprintf(lr, sizeof(lr), "%.17g", train_config.learning_rate);
    out << "variant=" << variant.name() << "\n";
    out << "seed=" << seed << "\n";
    out << "dataset=" << std::filesystem::absolute(dataset_path).string() << "\n";
    out << "architecture=" << to_string(arch) << "\n";
    out << "epochs=" << train_config.epochs << "\n";
    out << "learning_rate=" << lr << "\n";
    out << "lambda=" << train_config.lambda << "\n";
    out << "batch_size=" << train_config.batch_size << "\n";
    out << "steps=" << outcome.stats.steps << "\n";
    out << "classifier_evals_per_instance=" << outcome.stats.classifier_evals_per_instance()
        << "\n";
  }
  return outcome;
}

// ---------------------------------------------------------- key/value config

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t number = 0;
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
  };
  while (std::getline(in, line)) {
    ++number;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + " is not key=value: " + t);
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_key_values(in);
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid value for '" + key + "': " + text);
  }
  return value;
}

Gaussian gaussian_from_json(const nlohmann::json& j) {
  return Gaussian{j.at("mean").get<std::vector<double>>(), j.at("stddev").get<double>()};
}

}  // namespace

BaseDistributionSpec parse_distribution(std::string_view json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (j.contains("gaussian")) return {gaussian_from_json(j.at("gaussian"))};
    if (j.contains("mixture")) {
      Mixture mix;
      for (const auto& c : j.at("mixture")) {
        mix.components.push_back(gaussian_from_json(c));
        mix.weights.push_back(c.at("weight").get<double>());
      }
      return {mix};
    }
    if (j.contains("point")) return {PointMass{j.at("point").get<std::vector<double>>()}};
    if (j.contains("file")) {
      const auto& f = j.at("file");
      return {FromFile{f.at("path").get<std::string>(), f.at("tags").get<std::vector<std::string>>()}};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid distribution: ") + e.what());
  }
  throw ConfigError("distribution must be one of gaussian, mixture, point, file");
}

SdcConfig sdc_config_from_keys(const std::map<std::string, std::string>& keys) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("config lacks required key '" + key + "'");
    return it->second;
  };
  SdcConfig c;
  c.d = parse_number<std::size_t>("d", get("d"));
  c.m = parse_number<std::size_t>("m", get("m"));
  c.k = parse_number<std::size_t>("k", get("k"));
  c.background = parse_distribution(get("background"));
  for (std::size_t y = 1; y <= c.k; ++y) {
    c.foregrounds.push_back(parse_distribution(get("foreground." + std::to_string(y))));
  }
  if (auto it = keys.find("sample_with_replacement"); it != keys.end()) {
    c.sample_with_replacement = it->second == "true" || it->second == "1";
  }
  c.validate();
  return c;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash != std::string::npos) {
      const auto lo = parse_number<std::uint64_t>("seeds", item.substr(0, dash));
      const auto hi = parse_number<std::uint64_t>("seeds", item.substr(dash + 1));
      if (hi < lo) throw ConfigError("empty seed range " + item);
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(parse_number<std::uint64_t>("seeds", item));
    }
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

void ExperimentConfig::validate() const {
  if (preset.empty() && dataset.empty()) throw ConfigError("experiment needs a preset or a dataset");
  if (!preset.empty()) preset_info(preset);
  if (variants.empty()) throw ConfigError("experiment needs at least one variant");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (out.empty()) throw ConfigError("experiment needs an output directory");
}

ExperimentConfig experiment_config_from_keys(const std::map<std::string, std::string>& keys) {
  static const std::vector<std::string> kKnown = {
      "preset", "dataset", "n", "dataset_seed", "variants", "seeds", "epochs",
      "lr", "lambda", "batch_size", "architecture", "out", "workers"};
  for (const auto& [key, value] : keys) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw ConfigError("unknown experiment key '" + key + "'");
    }
  }
  ExperimentConfig c;
  auto has = [&](const char* k) { return keys.contains(k); };
  if (has("preset")) c.preset = keys.at("preset");
  if (has("dataset")) c.dataset = keys.at("dataset");
  if (has("n")) c.n = parse_number<std::size_t>("n", keys.at("n"));
  if (has("dataset_seed")) c.dataset_seed = parse_number<std::uint64_t>("dataset_seed", keys.at("dataset_seed"));
  c.variants = has("variants") ? parse_variant_list(keys.at("variants")) : benchmark_variants();
  c.seeds = has("seeds") ? parse_seed_list(keys.at("seeds")) : std::vector<std::uint64_t>{0};
  if (has("epochs")) c.overrides.epochs = parse_number<std::size_t>("epochs", keys.at("epochs"));
  if (has("lr")) c.overrides.learning_rate = parse_number<double>("lr", keys.at("lr"));
  if (has("lambda")) c.overrides.lambda = parse_number<double>("lambda", keys.at("lambda"));
  if (has("batch_size")) c.overrides.batch_size = parse_number<std::size_t>("batch_size", keys.at("batch_size"));
  if (has("architecture")) c.architecture = parse_architecture(keys.at("architecture"));
  if (has("out")) c.out = keys.at("out");
  if (has("workers")) c.workers = parse_number<std::size_t>("workers", keys.at("workers"));
  return c;
}

// --------------------------------------------------------------------- sweep

std::filesystem::path materialize_dataset(const ExperimentConfig& config) {
  if (!config.dataset.empty()) return config.dataset;
  const auto& info = preset_info(config.preset);
  std::filesystem::create_directories(config.out);
  const auto path = config.out / "dataset.csv";
  const auto ds = make_dataset(preset_config(info.name), config.n.value_or(info.default_n),
                               info.default_test_fraction, config.dataset_seed, info.name);
  save_dataset(ds, path);
  return path;
}

SweepResult sweep(const ExperimentConfig& config) {
  config.validate();
  const auto dataset_path = materialize_dataset(config);
  const Dataset dataset = load_dataset(dataset_path);

  struct Job {
    const Variant* variant;
    std::uint64_t seed;
    ReportRow row;
  };
  std::vector<Job> jobs;
  for (const auto& v : config.variants) {
    for (auto s : config.seeds) jobs.push_back({&v, s, {}});
  }

  std::size_t workers = config.workers;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, jobs.size());

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      Job& job = jobs[i];
      const auto dir = config.out / job.variant->name() / ("seed-" + std::to_string(job.seed));
      try {
        std::filesystem::remove_all(dir);
        job.row = run_experiment(dataset, dataset_path, *job.variant, job.seed, config.overrides,
                                 config.architecture, dir)
                      .row;
      } catch (const std::exception& e) {
        ++failures;
        job.row = ReportRow{job.variant->name(), job.variant->averaging_layer,
                            job.variant->mechanism(), std::to_string(job.seed), true};
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "error.txt") << e.what() << "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<ReportRow> rows;
  for (auto& job : jobs) rows.push_back(std::move(job.row));
  SweepResult result{assemble_report(std::move(rows)), failures.load()};
  result.report.write_csv(config.out / "report.csv");
  return result;
}

}  // namespace sdclab
