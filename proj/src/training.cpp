#include "sdclab/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "sdclab/error.hpp"

namespace sdclab {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("entropy weight lambda must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

// ---------------------------------------------------------------------- Adam

AdamState::AdamState(const ad::ParamStore& params) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    first.push_back(Tensor::zeros_like(params.value(ad::ParamId{p})));
    second.push_back(Tensor::zeros_like(params.value(ad::ParamId{p})));
  }
}

void adam_step(ad::ParamStore& params, AdamState& state, double learning_rate) {
  if (state.first.size() != params.size()) {
    throw ContractError("Adam state does not match the parameter store");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ad::ParamId id{p};
    if (!params.grad(id).all_finite()) {
      throw NumericalError("non-finite gradient in parameter '" + params.name(id) + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ad::ParamId id{p};
    auto value = params.value(id).data();
    const auto grad = params.grad(id).data();
    auto m1 = state.first[p].data();
    auto m2 = state.second[p].data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m1[i] = state.beta1 * m1[i] + (1.0 - state.beta1) * grad[i];
      m2[i] = state.beta2 * m2[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      const double mhat = m1[i] / c1;
      const double vhat = m2[i] / c2;
      value[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// --------------------------------------------------------------- dynamics log

void DynamicsLog::write_csv(std::ostream& out) const {
  out << kHeader << '\n';
  char line[512];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.epoch, r.train_acc, r.test_acc, r.ft, r.ftpt, r.ffpt, r.ftpf, r.ffpf, r.loss);
    out << line;
  }
}

void DynamicsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out);
}

DynamicsLog DynamicsLog::read_csv(std::istream& in) {
  DynamicsLog log;
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw ParseError("dynamics CSV header mismatch", 0);
  }
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    DynamicsRecord r;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(ss, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ParseError("bad dynamics value '" + field + "'", offset);
      }
    }
    if (values.size() != 9) throw ParseError("dynamics row needs 9 columns", offset);
    r.epoch = static_cast<std::size_t>(values[0]);
    r.train_acc = values[1];
    r.test_acc = values[2];
    r.ft = values[3];
    r.ftpt = values[4];
    r.ffpt = values[5];
    r.ftpf = values[6];
    r.ffpf = values[7];
    r.loss = values[8];
    log.records.push_back(r);
    offset += line.size() + 1;
  }
  return log;
}

DynamicsLog DynamicsLog::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in);
}

// -------------------------------------------------------------------- losses

Batch make_batch(const TrainingView& view, std::span<const std::size_t> indices) {
  const auto dims = view.dims();
  Batch batch{Tensor({indices.size() * dims.m, dims.d}), {}};
  batch.labels.reserve(indices.size());
  auto dst = batch.segments.data().begin();
  for (std::size_t i : indices) {
    const auto src = view.segments(i);
    dst = std::copy(src.begin(), src.end(), dst);
    batch.labels.push_back(view.label(i));
  }
  return batch;
}

ad::NodeId soft_loss(ad::Tape& tape, const FcamGraph& graph, std::span<const std::size_t> labels,
                     double lambda) {
  const ad::NodeId ce = ad::mean(
      tape, ad::cross_entropy_rows(tape, graph.logits, {labels.begin(), labels.end()}));
  if (lambda == 0.0) return ce;
  const ad::NodeId ent = ad::mean(tape, ad::entropy_rows(tape, graph.alpha));
  return ad::add(tape, ce, ad::scale(tape, ent, lambda));
}

ad::NodeId hard_loss(ad::Tape& tape, const FcamGraph& graph, std::span<const std::size_t> labels,
                     std::size_t m) {
  std::vector<std::size_t> patch_labels;
  patch_labels.reserve(labels.size() * m);
  for (std::size_t y : labels) patch_labels.insert(patch_labels.end(), m, y);
  const ad::NodeId ce = ad::cross_entropy_rows(tape, graph.logits, std::move(patch_labels));
  const ad::NodeId per_patch = ad::reshape(tape, ce, {labels.size(), m});
  const ad::NodeId weighted = ad::mul(tape, graph.alpha, per_patch);
  return ad::mean(tape, ad::sum_rows(tape, weighted));
}

ad::NodeId training_loss(ad::Tape& tape, FcamModel& model, const Batch& batch, double lambda,
                         std::size_t* classifier_rows) {
  const auto graph = model.build(tape, batch.segments, batch.size(), true);
  if (classifier_rows != nullptr) *classifier_rows += graph.classifier_rows;
  if (model.config().mode == AttentionMode::hard) {
    return hard_loss(tape, graph, batch.labels, model.dims().m);
  }
  return soft_loss(tape, graph, batch.labels, lambda);
}

namespace {

Tensor single_instance(const FcamModel& model, std::span<const double> segments) {
  const auto dims = model.dims();
  if (segments.size() != dims.m * dims.d) throw DimensionError("instance has wrong size");
  return Tensor({dims.m, dims.d}, std::vector<double>(segments.begin(), segments.end()));
}

}  // namespace

double loss_soft(const FcamModel& model, std::span<const double> segments, std::size_t label,
                 double lambda) {
  if (model.config().mode != AttentionMode::soft) {
    throw ContractError("loss_soft requires a soft-mode model");
  }
  ad::Tape tape;
  const auto graph = model.build(tape, single_instance(model, segments), 1);
  const std::size_t labels[] = {label};
  return tape.value(soft_loss(tape, graph, labels, lambda)).item();
}

double loss_hard(const FcamModel& model, std::span<const double> segments, std::size_t label) {
  if (model.config().mode != AttentionMode::hard) {
    throw ContractError("loss_hard requires a hard-mode model");
  }
  ad::Tape tape;
  const auto graph = model.build(tape, single_instance(model, segments), 1);
  const std::size_t labels[] = {label};
  return tape.value(hard_loss(tape, graph, labels, model.dims().m)).item();
}

// ---------------------------------------------------------------- evaluation

std::vector<EvalRecord> evaluate(const FcamModel& model, const EvaluationView& view) {
  const auto predictions = model.predict(view.without_foreground());
  std::vector<EvalRecord> records;
  records.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    records.push_back(make_record(predictions[i].predicted, view.label(i),
                                  predictions[i].alpha, view.fg_index(i)));
  }
  return records;
}

// ------------------------------------------------------------------ training

namespace {

// Subnormal gradients late in training cost far more than they contribute;
// flush them to zero for the duration of a run.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace

TrainResult train(FcamModel& model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const FlushDenormals ftz;
  if (dataset.dims() != model.dims()) {
    throw ConfigError("dataset dimensions (d=" + std::to_string(dataset.dims().d) +
                      ", m=" + std::to_string(dataset.dims().m) +
                      ", k=" + std::to_string(dataset.dims().k) + ") do not match the model");
  }
  if (dataset.n_train() == 0) throw ConfigError("dataset has an empty training split");

  const TrainingView train_view = dataset.training_view(Split::train);
  const EvaluationView monitor =
      dataset.evaluation_view(dataset.n_test() > 0 ? Split::test : Split::train);
  const std::size_t n = train_view.size();
  const std::size_t batch_size = config.batch_size == 0 ? n : std::min(config.batch_size, n);

  AdamState adam(model.params());
  TrainResult result;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle(CounterRng::derive(config.seed, {0x73687566ull, epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t count = std::min(batch_size, n - start);
      const Batch batch = make_batch(train_view, std::span(order).subspan(start, count));
      model.params().zero_grad();
      ad::Tape tape;
      const ad::NodeId loss =
          training_loss(tape, model, batch, config.lambda, &result.stats.classifier_rows);
      const double value = tape.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += value * static_cast<double>(count);
      tape.backward(loss);
      adam_step(model.params(), adam, config.learning_rate);
      result.stats.instance_visits += count;
      ++result.stats.steps;
    }

    DynamicsRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(n);
    const auto train_predictions = model.predict(train_view);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += train_predictions[i].predicted == train_view.label(i);
    record.train_acc = static_cast<double>(hits) / static_cast<double>(n);
    const auto records = evaluate(model, monitor);
    const auto q = quadrants(records);
    record.test_acc = accuracy(records);
    record.ft = ft(records);
    record.ftpt = q.ftpt;
    record.ffpt = q.ffpt;
    record.ftpf = q.ftpf;
    record.ffpf = q.ffpf;
    result.log.records.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace sdclab
