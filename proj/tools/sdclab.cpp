// sdclab: dataset generation, training runs, sweeps, plots and reports for
// focus-classify attention models on selective dependence data.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sdclab/error.hpp"
#include "sdclab/experiment.hpp"
#include "sdclab/plot.hpp"
#include "sdclab/report.hpp"
#include "sdclab/sdc_data.hpp"

namespace fs = std::filesystem;
using namespace sdclab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

const char* const kConfigHelp = R"(
Configuration files are flat `key = value` lines; `#` starts a comment.

generate --config keys (dataset generator):
  d, m, k                  segment dimension, segments per instance, classes
  background               distribution of background segments
  foreground.1..k          distribution of the foreground segment per class
  sample_with_replacement  true|false, for file-backed pools (default false)
  Distributions are JSON:
    {"gaussian": {"mean": [0, 0], "stddev": 0.5}}
    {"mixture": [{"weight": 0.5, "mean": [0, 0], "stddev": 1}, ...]}
    {"point": [1, 2]}
    {"file": {"path": "pool.csv", "tags": ["cat", "dog"]}}   (lines: tag,v1,..,vd)

sweep --config keys (experiment):
  preset | dataset         dataset preset name or dataset file
  n, dataset_seed          size and seed when generating from a preset
  variants                 comma list, e.g. SM-0,HA-2 (default: all ten)
  seeds                    e.g. 0-4 or 0,2,3 (default 0)
  epochs, lr, lambda, batch_size   training overrides (batch_size 0 = full batch)
  architecture             mlp | linear | linear-relu
  out                      output directory
  workers                  parallel runs (0 = available cores)

Variants: SM (softmax), ER (softmax + entropy penalty), SpMax (sparsemax),
SSM (spherical softmax), HA (hard attention), each suffixed with the
averaging layer, e.g. SM-0 or SpMax-2.
Presets: synth-appdx-d, em1, em2, em3.
Plot kinds: dynamics, threshold, focus-heatmap, decision-boundary.
SDC_LAB_SEED sets the seed when --seed is absent.
Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
)";

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SDC_LAB_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SDC_LAB_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

struct Overrides {
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<std::size_t> batch_size;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--lambda", lambda, "Entropy weight for ER variants");
    cmd->add_option("--batch-size", batch_size, "Minibatch size (0 = full batch)");
  }
  void apply(TrainOverrides& t) const {
    if (epochs) t.epochs = epochs;
    if (lr) t.learning_rate = lr;
    if (lambda) t.lambda = lambda;
    if (batch_size) t.batch_size = batch_size;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Focus-classify attention models on selective dependence classification"};
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  // generate
  std::string gen_preset, gen_config, gen_out;
  std::optional<std::size_t> gen_n;
  std::optional<std::uint64_t> gen_seed;
  std::optional<double> gen_tf;
  auto* gen = app.add_subcommand("generate", "Sample a mosaic dataset");
  gen->add_option("--preset", gen_preset, "Dataset preset");
  gen->add_option("--config", gen_config, "Generator config file");
  gen->add_option("--n", gen_n, "Number of instances");
  gen->add_option("--seed", gen_seed, "Sampling seed");
  gen->add_option("--test-fraction", gen_tf, "Held-out fraction");
  gen->add_option("--out", gen_out, "Dataset file")->required();

  // run
  std::string run_dataset, run_preset, run_variant, run_out, run_arch;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> run_n;
  Overrides run_over;
  auto* run = app.add_subcommand("run", "Train one variant with one seed");
  run->add_option("--dataset", run_dataset, "Dataset file");
  run->add_option("--preset", run_preset, "Generate the dataset from a preset instead");
  run->add_option("--n", run_n, "Instances when generating from a preset");
  run->add_option("--variant", run_variant, "Variant code, e.g. SM-0")->required();
  run->add_option("--seed", run_seed, "Training seed");
  run->add_option("--out", run_out, "Run directory")->required();
  run->add_option("--architecture", run_arch, "mlp | linear | linear-relu");
  run_over.add(run);

  // sweep
  std::string sw_config, sw_preset, sw_dataset, sw_variants, sw_seeds, sw_out, sw_arch;
  std::optional<std::size_t> sw_n, sw_workers;
  Overrides sw_over;
  auto* sw = app.add_subcommand("sweep", "Train variants over seeds and write report.csv");
  sw->add_option("--config", sw_config, "Experiment config file");
  sw->add_option("--preset", sw_preset, "Dataset preset");
  sw->add_option("--dataset", sw_dataset, "Dataset file");
  sw->add_option("--n", sw_n, "Instances when generating from a preset");
  sw->add_option("--variant", sw_variants, "Comma list of variant codes");
  sw->add_option("--seeds", sw_seeds, "Seeds, e.g. 0-4");
  sw->add_option("--out", sw_out, "Output directory");
  sw->add_option("--workers", sw_workers, "Parallel runs (0 = available cores)");
  sw->add_option("--architecture", sw_arch, "mlp | linear | linear-relu");
  sw_over.add(sw);

  // plot
  std::string plot_dir, plot_kind, plot_stage = "final";
  auto* plot = app.add_subcommand("plot", "Write SVG figures for a run or sweep directory");
  plot->add_option("dir", plot_dir, "Run or sweep directory")->required();
  plot->add_option("--plot-kind", plot_kind, "dynamics | threshold | focus-heatmap | decision-boundary")
      ->required();
  plot->add_option("--stage", plot_stage, "final | init (spatial kinds)");

  // report
  std::string report_path;
  auto* rep = app.add_subcommand("report", "Print a report table");
  rep->add_option("path", report_path, "report.csv or sweep directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      if (gen_preset.empty() == gen_config.empty()) {
        throw ConfigError("generate needs exactly one of --preset or --config");
      }
      const std::uint64_t seed = resolve_seed(gen_seed);
      Dataset ds = [&] {
        if (!gen_preset.empty()) {
          const auto& info = preset_info(gen_preset);
          return make_dataset(preset_config(info.name), gen_n.value_or(info.default_n),
                              gen_tf.value_or(info.default_test_fraction), seed, info.name);
        }
        const auto config = sdc_config_from_keys(read_key_values(gen_config));
        if (!gen_n) throw ConfigError("generate --config needs --n");
        return make_dataset(config, *gen_n, gen_tf.value_or(0.5), seed);
      }();
      if (const auto parent = fs::path(gen_out).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
      }
      save_dataset(ds, gen_out);
      std::cout << "wrote " << ds.size() << " instances (d=" << ds.dims().d << ", m=" << ds.dims().m
                << ", k=" << ds.dims().k << ") to " << gen_out << "\n";
    } else if (*run) {
      if (run_dataset.empty() == run_preset.empty()) {
        throw ConfigError("run needs exactly one of --dataset or --preset");
      }
      const std::uint64_t seed = resolve_seed(run_seed);
      const Variant variant = parse_variant(run_variant);
      fs::path dataset_path = run_dataset;
      if (!run_preset.empty()) {
        ExperimentConfig ec;
        ec.preset = run_preset;
        ec.n = run_n;
        ec.dataset_seed = 0;
        ec.out = run_out;
        dataset_path = materialize_dataset(ec);
      }
      const Dataset ds = load_dataset(dataset_path);
      TrainOverrides over;
      run_over.apply(over);
      std::optional<Architecture> arch;
      if (!run_arch.empty()) arch = parse_architecture(run_arch);
      const auto outcome = run_experiment(ds, dataset_path, variant, seed, over, arch, run_out);
      std::cout << format_row(outcome.row) << "\n";
    } else if (*sw) {
      ExperimentConfig ec;
      if (!sw_config.empty()) ec = experiment_config_from_keys(read_key_values(sw_config));
      if (!sw_preset.empty()) ec.preset = sw_preset;
      if (!sw_dataset.empty()) ec.dataset = sw_dataset;
      if (sw_n) ec.n = sw_n;
      if (!sw_variants.empty()) ec.variants = parse_variant_list(sw_variants);
      if (ec.variants.empty()) ec.variants = benchmark_variants();
      if (!sw_seeds.empty()) ec.seeds = parse_seed_list(sw_seeds);
      if (ec.seeds.empty()) ec.seeds = {resolve_seed(std::nullopt)};
      if (!sw_out.empty()) ec.out = sw_out;
      if (sw_workers) ec.workers = *sw_workers;
      if (!sw_arch.empty()) ec.architecture = parse_architecture(sw_arch);
      sw_over.apply(ec.overrides);
      const auto result = sweep(ec);
      std::cout << result.report.format_table();
      if (result.failures > 0) {
        std::cerr << result.failures << " run(s) failed; see error.txt in their directories\n";
        return kExitRuntime;
      }
    } else if (*plot) {
      PlotStage stage;
      if (plot_stage == "final") {
        stage = PlotStage::final;
      } else if (plot_stage == "init") {
        stage = PlotStage::init;
      } else {
        throw ConfigError("--stage must be final or init");
      }
      for (const auto& f : plot_directory(plot_dir, parse_plot_kind(plot_kind), stage)) {
        std::cout << "wrote " << f.string() << "\n";
      }
    } else if (*rep) {
      fs::path path = report_path;
      if (fs::is_directory(path)) path /= "report.csv";
      std::cout << RunReport::parse_csv(path).format_table();
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UnsupportedPlotError& e) {
    std::cerr << "unsupported plot: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
