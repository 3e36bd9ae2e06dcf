#include "sdclab/fcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sdclab/error.hpp"

namespace sdclab {

std::string_view to_string(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "tanh"; }

std::string_view to_string(AttentionMode m) { return m == AttentionMode::soft ? "soft" : "hard"; }

std::size_t FcamConfig::feature_width() const {
  if (averaging_layer == 0) return focus.input_width();
  if (averaging_layer > focus.hidden_layers()) {
    throw ConfigError("averaging layer " + std::to_string(averaging_layer) +
                      " exceeds focus depth " + std::to_string(focus.hidden_layers()));
  }
  return focus.widths[averaging_layer];
}

void FcamConfig::validate(std::size_t d, std::size_t k) const {
  if (focus.widths.size() < 2 || classify.widths.size() < 2) {
    throw ConfigError("networks need at least input and output widths");
  }
  if (std::find(focus.widths.begin(), focus.widths.end(), 0) != focus.widths.end() ||
      std::find(classify.widths.begin(), classify.widths.end(), 0) != classify.widths.end()) {
    throw ConfigError("layer widths must be positive");
  }
  if (focus.input_width() != d) {
    throw ConfigError("focus input width " + std::to_string(focus.input_width()) +
                      " differs from segment dimension " + std::to_string(d));
  }
  if (focus.output_width() != 1) throw ConfigError("focus network must output one score");
  if (classify.output_width() != k) {
    throw ConfigError("classification output width " + std::to_string(classify.output_width()) +
                      " differs from class count " + std::to_string(k));
  }
  if (classify.input_width() != feature_width()) {
    throw ConfigError("classification input width " + std::to_string(classify.input_width()) +
                      " differs from averaged feature width " + std::to_string(feature_width()));
  }
  if (activation == ActivationKind::hard && mode != AttentionMode::hard) {
    throw ConfigError("hard activation requires hard attention mode");
  }
}

AttendedInput attended_input(const AttentionVector& alpha,
                             std::span<const std::vector<double>> features) {
  if (features.size() != alpha.size() || features.empty()) {
    throw DimensionError("attended_input: " + std::to_string(alpha.size()) + " weights for " +
                         std::to_string(features.size()) + " features");
  }
  AttendedInput out{std::vector<double>(features.front().size(), 0.0)};
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].size() != out.x.size()) throw DimensionError("ragged feature vectors");
    for (std::size_t i = 0; i < out.x.size(); ++i) out.x[i] += alpha[j] * features[j][i];
  }
  return out;
}

// ----------------------------------------------------------------------- Mlp

Mlp::Mlp(ad::ParamStore& store, const std::string& prefix, NetworkSpec spec, CounterRng& init)
    : spec_(std::move(spec)) {
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const std::size_t fan_in = spec_.widths[l];
    const std::size_t fan_out = spec_.widths[l + 1];
    const double bound =
        spec_.init_gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_out, fan_in});
    for (double& v : w.data()) v = bound * (2.0 * init.uniform() - 1.0);
    weights_.push_back(store.add(prefix + ".w" + std::to_string(l), std::move(w)));
    biases_.push_back(store.add(prefix + ".b" + std::to_string(l), Tensor({fan_out})));
  }
}

std::vector<ad::NodeId> Mlp::forward(ad::Tape& tape, ad::NodeId input,
                                     const std::vector<ad::NodeId>& weights,
                                     const std::vector<ad::NodeId>& biases,
                                     std::optional<std::size_t> last) const {
  const std::size_t layers = weights.size();
  const std::size_t stop = std::min(last.value_or(layers), layers);
  std::vector<ad::NodeId> acts{input};
  for (std::size_t l = 0; l < stop; ++l) {
    ad::NodeId h = ad::affine(tape, weights[l], biases[l], acts.back());
    if (l + 1 < layers) {
      h = spec_.hidden == Nonlinearity::relu ? ad::relu(tape, h) : ad::tanh(tape, h);
    }
    acts.push_back(h);
  }
  return acts;
}

// ------------------------------------------------------------------- attend

namespace ad {

NodeId attend(Tape& tape, NodeId alpha, NodeId features) {
  const Tensor& a = tape.value(alpha);
  const Tensor& f = tape.value(features);
  if (a.rows() * a.cols() != f.rows() || f.rank() != 2) {
    throw DimensionError("attend: alpha " + to_string(a.shape()) + " vs features " +
                         to_string(f.shape()));
  }
  return tape.record(
      "attend", {alpha, features},
      [](Inputs in) {
        const Tensor& a = *in[0];
        const Tensor& f = *in[1];
        const std::size_t m = a.cols();
        const std::size_t width = f.cols();
        Tensor out({a.rows(), width});
        for (std::size_t b = 0; b < a.rows(); ++b) {
          auto dst = out.row(b);
          for (std::size_t j = 0; j < m; ++j) {
            const double w = a.at(b, j);
            const auto src = f.row(b * m + j);
            for (std::size_t i = 0; i < width; ++i) dst[i] += w * src[i];
          }
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& gout, InputGrads gin) {
        const Tensor& a = *in[0];
        const Tensor& f = *in[1];
        const std::size_t m = a.cols();
        for (std::size_t b = 0; b < a.rows(); ++b) {
          const auto g = gout.row(b);
          for (std::size_t j = 0; j < m; ++j) {
            const auto src = f.row(b * m + j);
            if (gin[0] != nullptr) {
              double dot = 0.0;
              for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * src[i];
              gin[0]->at(b, j) += dot;
            }
            if (gin[1] != nullptr) {
              auto gf = gin[1]->row(b * m + j);
              const double w = a.at(b, j);
              for (std::size_t i = 0; i < g.size(); ++i) gf[i] += w * g[i];
            }
          }
        }
      });
}

}  // namespace ad

// ----------------------------------------------------------------- FcamModel

FcamModel::FcamModel(FcamConfig config, SdcDims dims, std::uint64_t seed)
    : config_(std::move(config)), dims_(dims), seed_(seed) {
  config_.validate(dims_.d, dims_.k);
  CounterRng init(CounterRng::derive(seed, {0x696E6974ull}));
  focus_ = Mlp(params_, "focus", config_.focus, init);
  classify_ = Mlp(params_, "classify", config_.classify, init);
}

FcamGraph FcamModel::build(ad::Tape& tape, Tensor segments, std::size_t batch, bool trainable) {
  return build_impl(tape, std::move(segments), batch, trainable ? &params_ : nullptr);
}

FcamGraph FcamModel::build(ad::Tape& tape, Tensor segments, std::size_t batch) const {
  return build_impl(tape, std::move(segments), batch, nullptr);
}

FcamGraph FcamModel::build_impl(ad::Tape& tape, Tensor segments, std::size_t batch,
                                ad::ParamStore* bind) const {
  const std::size_t m = dims_.m;
  if (segments.rank() != 2 || segments.rows() != batch * m || segments.cols() != dims_.d) {
    throw DimensionError("segments " + to_string(segments.shape()) + " for a batch of " +
                         std::to_string(batch) + " instances with m=" + std::to_string(m) +
                         ", d=" + std::to_string(dims_.d));
  }
  auto leaves = [&](const Mlp& net, std::vector<ad::NodeId>& w, std::vector<ad::NodeId>& b) {
    for (std::size_t l = 0; l < net.weight_ids().size(); ++l) {
      if (bind != nullptr) {
        w.push_back(tape.parameter(*bind, net.weight_ids()[l]));
        b.push_back(tape.parameter(*bind, net.bias_ids()[l]));
      } else {
        w.push_back(tape.constant(params_.value(net.weight_ids()[l])));
        b.push_back(tape.constant(params_.value(net.bias_ids()[l])));
      }
    }
  };
  std::vector<ad::NodeId> fw, fb, gw, gb;
  leaves(focus_, fw, fb);
  leaves(classify_, gw, gb);

  FcamGraph graph;
  graph.batch = batch;
  const ad::NodeId x = tape.constant(std::move(segments));
  const auto acts = focus_.forward(tape, x, fw, fb);
  graph.scores = ad::reshape(tape, acts.back(), {batch, m});
  graph.alpha = ad::attention(tape, graph.scores, config_.activation);
  graph.features = acts[config_.averaging_layer];
  if (config_.mode == AttentionMode::soft) {
    graph.attended = ad::attend(tape, graph.alpha, graph.features);
    graph.logits = classify_.forward(tape, *graph.attended, gw, gb).back();
    graph.classifier_rows = batch;
  } else {
    const ad::NodeId patches = ad::detach(tape, graph.features);
    graph.logits = classify_.forward(tape, patches, gw, gb).back();
    graph.classifier_rows = batch * m;
  }
  return graph;
}

std::vector<double> FcamModel::feature_map(std::span<const double> segment) const {
  if (segment.size() != dims_.d) throw DimensionError("feature_map: segment has wrong dimension");
  ad::Tape tape;
  std::vector<ad::NodeId> w, b;
  for (std::size_t l = 0; l < focus_.weight_ids().size(); ++l) {
    w.push_back(tape.constant(params_.value(focus_.weight_ids()[l])));
    b.push_back(tape.constant(params_.value(focus_.bias_ids()[l])));
  }
  const ad::NodeId x =
      tape.constant(Tensor::vector(std::vector<double>(segment.begin(), segment.end())));
  const auto acts = focus_.forward(tape, x, w, b, config_.averaging_layer);
  const auto out = tape.value(acts.back()).data();
  return {out.begin(), out.end()};
}

namespace {

Tensor segment_rows(std::span<const double> segments, std::size_t m, std::size_t d) {
  if (segments.size() != m * d) {
    throw DimensionError("instance has " + std::to_string(segments.size()) +
                         " values, expected m*d = " + std::to_string(m * d));
  }
  return Tensor({m, d}, std::vector<double>(segments.begin(), segments.end()));
}

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

std::vector<double> FcamModel::focus_scores(std::span<const double> segments) const {
  ad::Tape tape;
  const auto g = build(tape, segment_rows(segments, dims_.m, dims_.d), 1);
  return to_vector(tape.value(g.scores).data());
}

AttentionVector FcamModel::attention_vector(std::span<const double> segments) const {
  return activate(config_.activation, focus_scores(segments));
}

namespace {

Tensor run_constant(const Mlp& net, const ad::ParamStore& params, Tensor input) {
  ad::Tape tape;
  std::vector<ad::NodeId> w, b;
  for (std::size_t l = 0; l < net.weight_ids().size(); ++l) {
    w.push_back(tape.constant(params.value(net.weight_ids()[l])));
    b.push_back(tape.constant(params.value(net.bias_ids()[l])));
  }
  const ad::NodeId x = tape.constant(std::move(input));
  return tape.value(net.forward(tape, x, w, b).back());
}

}  // namespace

std::vector<double> FcamModel::segment_scores(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.cols() != dims_.d) {
    throw DimensionError("segment_scores: expected [n, " + std::to_string(dims_.d) + "], got " +
                         to_string(rows.shape()));
  }
  return to_vector(run_constant(focus_, params_, rows).data());
}

std::vector<double> FcamModel::classify(std::span<const double> feature) const {
  if (feature.size() != config_.classify.input_width()) {
    throw DimensionError("classify: feature has wrong dimension");
  }
  return to_vector(run_constant(classify_, params_, Tensor::vector(to_vector(feature))).data());
}

Tensor FcamModel::classify_rows(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.cols() != config_.classify.input_width()) {
    throw DimensionError("classify_rows: expected [n, " +
                         std::to_string(config_.classify.input_width()) + "], got " +
                         to_string(rows.shape()));
  }
  return run_constant(classify_, params_, rows);
}

std::vector<double> FcamModel::forward(std::span<const double> segments) const {
  ad::Tape tape;
  const auto g = build(tape, segment_rows(segments, dims_.m, dims_.d), 1);
  const Tensor& logits = tape.value(g.logits);
  std::vector<double> probs(dims_.k);
  if (config_.mode == AttentionMode::soft) {
    kernels::softmax(logits.row(0), probs);
  } else {
    kernels::softmax(logits.row(hard_select(tape.value(g.alpha).row(0))), probs);
  }
  return probs;
}

std::vector<Prediction> FcamModel::predict(const TrainingView& view,
                                           std::optional<std::uint64_t> sample_seed) const {
  if (view.dims() != dims_) throw ConfigError("dataset dimensions do not match the model");
  constexpr std::size_t kChunk = 256;
  const std::size_t m = dims_.m;
  const std::size_t d = dims_.d;
  std::vector<Prediction> out;
  out.reserve(view.size());
  for (std::size_t start = 0; start < view.size(); start += kChunk) {
    const std::size_t batch = std::min(kChunk, view.size() - start);
    Tensor segs({batch * m, d});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto src = view.segments(start + b);
      std::copy(src.begin(), src.end(), segs.data().begin() + b * m * d);
    }
    ad::Tape tape;
    const auto g = build(tape, std::move(segs), batch);
    const Tensor& alpha = tape.value(g.alpha);
    const Tensor& logits = tape.value(g.logits);
    for (std::size_t b = 0; b < batch; ++b) {
      Prediction p;
      p.alpha = to_vector(alpha.row(b));
      p.probabilities.resize(dims_.k);
      if (config_.mode == AttentionMode::soft) {
        kernels::softmax(logits.row(b), p.probabilities);
      } else {
        std::size_t j = hard_select(p.alpha);
        if (sample_seed) {
          CounterRng rng(CounterRng::derive(*sample_seed, {start + b}));
          const double u = rng.uniform();
          double acc = 0.0;
          j = m - 1;
          for (std::size_t i = 0; i < m; ++i) {
            acc += p.alpha[i];
            if (u < acc) {
              j = i;
              break;
            }
          }
        }
        p.selected = j;
        kernels::softmax(logits.row(b * m + j), p.probabilities);
      }
      p.predicted = hard_select(p.probabilities);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// --------------------------------------------------------------- checkpoint

namespace {

std::string join_widths(const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

std::vector<std::size_t> split_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "relu") return Nonlinearity::relu;
  if (s == "tanh") return Nonlinearity::tanh;
  throw SchemaError("unknown nonlinearity '" + s + "'");
}

}  // namespace

void FcamModel::save(const std::filesystem::path& dir, std::string_view params_file) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "model.txt");
  if (!out) throw Error("cannot write " + (dir / "model.txt").string());
  char gain[64];
  out << "format=sdclab-fcam\n";
  out << "version=1\n";
  out << "d=" << dims_.d << "\nm=" << dims_.m << "\nk=" << dims_.k << "\n";
  out << "seed=" << seed_ << "\n";
  for (const auto& [name, spec] : {std::pair<const char*, const NetworkSpec*>{"focus", &config_.focus},
                                   {"classify", &config_.classify}}) {
    std::snprintf(gain, sizeof(gain), "%.17g", spec->init_gain);
    out << name << ".widths=" << join_widths(spec->widths) << "\n";
    out << name << ".hidden=" << to_string(spec->hidden) << "\n";
    out << name << ".init_gain=" << gain << "\n";
  }
  out << "activation=" << to_string(config_.activation) << "\n";
  out << "averaging_layer=" << config_.averaging_layer << "\n";
  out << "mode=" << to_string(config_.mode) << "\n";
  out << "params=" << params_file << "\n";
  params_.save(dir / params_file);
}

FcamModel FcamModel::load(const std::filesystem::path& dir, std::string_view params_file) {
  std::ifstream in(dir / "model.txt");
  if (!in) throw Error("cannot open " + (dir / "model.txt").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw SchemaError("model manifest lacks '" + key + "'");
    return it->second;
  };
  if (get("format") != "sdclab-fcam" || get("version") != "1") {
    throw SchemaError("unsupported model manifest in " + dir.string());
  }
  FcamConfig config;
  config.focus = {split_widths(get("focus.widths")), parse_nonlinearity(get("focus.hidden")),
                  std::stod(get("focus.init_gain"))};
  config.classify = {split_widths(get("classify.widths")),
                     parse_nonlinearity(get("classify.hidden")),
                     std::stod(get("classify.init_gain"))};
  config.activation = parse_activation(get("activation"));
  config.averaging_layer = std::stoul(get("averaging_layer"));
  const auto& mode = get("mode");
  if (mode != "soft" && mode != "hard") throw SchemaError("unknown mode '" + mode + "'");
  config.mode = mode == "soft" ? AttentionMode::soft : AttentionMode::hard;
  const SdcDims dims{std::stoul(get("d")), std::stoul(get("m")), std::stoul(get("k"))};
  FcamModel model(std::move(config), dims, std::stoull(get("seed")));
  model.params_.load(dir / params_file);
  return model;
}

}  // namespace sdclab
