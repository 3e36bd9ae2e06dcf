#include "sdclab/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "sdclab/error.hpp"

namespace sdclab::ad {

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(std::string name, Tensor value) {
  if (name.empty() || std::any_of(name.begin(), name.end(), [](char c) {
        return std::isspace(static_cast<unsigned char>(c));
      })) {
    throw ContractError("parameter name must be non-empty without whitespace: '" + name + "'");
  }
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Tensor grad = Tensor::zeros_like(value);
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return ParamId{entries_.size() - 1};
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

namespace {

constexpr std::string_view kParamMagic = "sdclab-params";
constexpr int kParamVersion = 1;

void write_f64_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  out.write(bytes, 8);
}

double read_f64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) {
    throw ParseError("truncated parameter payload", static_cast<std::size_t>(in.tellg()));
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

struct ManifestEntry {
  std::string name;
  Shape shape;
};

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  auto offset = [&] { return static_cast<std::size_t>(std::max<std::streamoff>(0, in.tellg())); };
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing parameter header", 0);
  {
    std::istringstream header(line);
    std::string magic;
    int version = 0;
    header >> magic >> version;
    if (magic != kParamMagic) throw ParseError("not a parameter file", 0);
    if (version != kParamVersion) {
      throw SchemaError("unsupported parameter file version " + std::to_string(version));
    }
  }
  std::size_t count = 0;
  {
    if (!std::getline(in, line)) throw ParseError("missing parameter count", offset());
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key >> count) || key != "count") {
      throw ParseError("malformed parameter count line", offset());
    }
  }
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated parameter manifest", offset());
    std::istringstream ls(line);
    std::string key;
    ManifestEntry entry;
    std::size_t rank = 0;
    if (!(ls >> key >> entry.name >> rank) || key != "param") {
      throw ParseError("malformed manifest entry '" + line + "'", offset());
    }
    entry.shape.resize(rank);
    for (auto& extent : entry.shape) {
      if (!(ls >> extent)) throw ParseError("malformed shape in '" + line + "'", offset());
    }
    entries.push_back(std::move(entry));
  }
  if (!std::getline(in, line) || line != "data") {
    throw ParseError("missing data marker", offset());
  }
  return entries;
}

}  // namespace

void ParamStore::save(std::ostream& out) const {
  out << kParamMagic << ' ' << kParamVersion << '\n';
  out << "count " << entries_.size() << '\n';
  for (const auto& e : entries_) {
    out << "param " << e.name << ' ' << e.value.rank();
    for (auto extent : e.value.shape()) out << ' ' << extent;
    out << '\n';
  }
  out << "data\n";
  for (const auto& e : entries_) {
    for (double v : e.value.data()) write_f64_le(out, v);
  }
}

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save(out);
  if (!out) throw Error("failed writing " + path.string());
}

ParamStore ParamStore::read(std::istream& in) {
  ParamStore store;
  for (auto& entry : read_manifest(in)) {
    Tensor value(entry.shape);
    for (double& v : value.data()) v = read_f64_le(in);
    store.add(entry.name, std::move(value));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing bytes after parameter payload", static_cast<std::size_t>(in.tellg()));
  }
  return store;
}

void ParamStore::load(std::istream& in) {
  ParamStore loaded = read(in);
  if (loaded.size() != size()) {
    throw SchemaError("parameter count mismatch: file has " + std::to_string(loaded.size()) +
                      ", model has " + std::to_string(size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& src = loaded.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.value.shape() != dst.value.shape()) {
      throw SchemaError("parameter mismatch: file has " + src.name + " " +
                        to_string(src.value.shape()) + ", model has " + dst.name + " " +
                        to_string(dst.value.shape()));
    }
    dst.value = src.value;
  }
}

void ParamStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  load(in);
}

// ---------------------------------------------------------------------- Tape

NodeId Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::parameter(ParamStore& store, ParamId id) {
  Node node;
  node.op = "parameter";
  node.value = store.value(id);
  node.requires_grad = true;
  node.store = &store;
  node.param = id;
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

std::vector<const Tensor*> Tape::input_values(const Node& node) const {
  std::vector<const Tensor*> values;
  values.reserve(node.inputs.size());
  for (NodeId in : node.inputs) values.push_back(&nodes_[in.index].value);
  return values;
}

NodeId Tape::record(std::string_view op, std::vector<NodeId> inputs, ForwardFn forward,
                    BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  for (NodeId in : inputs) {
    if (in.index >= nodes_.size()) {
      throw ContractError("operation '" + node.op + "' consumes a node not on this tape");
    }
    node.requires_grad = node.requires_grad || nodes_[in.index].requires_grad;
  }
  // Without a backward rule the node is a gradient sink.
  if (!backward) node.requires_grad = false;
  node.inputs = std::move(inputs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  const auto values = input_values(node);
  node.value = node.forward(values);
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

Tensor Tape::grad(NodeId id) const {
  const Node& node = nodes_.at(id.index);
  return node.has_grad ? node.grad : Tensor::zeros_like(node.value);
}

void Tape::backward(NodeId root) {
  if (root.index >= nodes_.size()) throw ContractError("backward root not on this tape");
  if (nodes_[root.index].value.size() != 1) {
    throw ContractError("backward root must be a scalar, got shape " +
                        to_string(nodes_[root.index].value.shape()));
  }
  for (auto& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  Node& top = nodes_[root.index];
  top.grad = Tensor::zeros_like(top.value);
  top.grad[0] = 1.0;
  top.has_grad = true;

  std::vector<Tensor*> slots;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.store != nullptr) {
      auto g = node.store->grad(node.param).data();
      const auto src = node.grad.data();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
      continue;
    }
    if (!node.backward) continue;
    slots.clear();
    for (NodeId in : node.inputs) {
      Node& input = nodes_[in.index];
      if (!input.requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (!input.has_grad) {
        input.grad = Tensor::zeros_like(input.value);
        input.has_grad = true;
      }
      slots.push_back(&input.grad);
    }
    const auto values = input_values(node);
    node.backward(values, node.value, node.grad, slots);
  }
}

void Tape::replay() {
  for (auto& node : nodes_) {
    if (node.store != nullptr) {
      node.value = node.store->value(node.param);
    } else if (node.forward) {
      node.value = node.forward(input_values(node));
    }
  }
}

// ---------------------------------------------------------------- primitives

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class F, class G>
NodeId elementwise(Tape& tape, std::string_view op, NodeId x, F value_fn, G slope_fn) {
  return tape.record(
      op, {x},
      [value_fn](Inputs in) {
        Tensor out = *in[0];
        for (double& v : out.data()) v = value_fn(v);
        return out;
      },
      [slope_fn](Inputs in, const Tensor& out, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        auto g = gin[0]->data();
        const auto x = in[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * slope_fn(x[i], out[i]);
      });
}

}  // namespace

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-major views; rank-1 tensors are a single row.
Eigen::Map<RowMatrix> as_matrix(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
Eigen::Map<Eigen::RowVectorXd> as_row(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.size())};
}
Eigen::Map<const Eigen::RowVectorXd> as_row(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.size())};
}

}  // namespace

NodeId affine(Tape& tape, NodeId weight, NodeId bias, NodeId x) {
  const Tensor& w = tape.value(weight);
  const Tensor& b = tape.value(bias);
  const Tensor& xv = tape.value(x);
  if (w.rank() != 2 || b.rank() != 1 || (xv.rank() != 1 && xv.rank() != 2) ||
      w.shape()[1] != xv.cols() || b.shape()[0] != w.shape()[0]) {
    throw DimensionError("affine: W " + to_string(w.shape()) + ", b " + to_string(b.shape()) +
                         ", x " + to_string(xv.shape()));
  }
  return tape.record(
      "affine", {weight, bias, x},
      [](Inputs in) {
        const Tensor& w = *in[0];
        const Tensor& x = *in[2];
        const std::size_t n_out = w.shape()[0];
        Tensor out(x.rank() == 1 ? Shape{n_out} : Shape{x.rows(), n_out});
        auto o = as_matrix(out);
        o.noalias() = as_matrix(x) * as_matrix(w).transpose();
        o.rowwise() += as_row(*in[1]);
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& gout, InputGrads gin) {
        const auto g = as_matrix(gout);
        if (gin[0] != nullptr) as_matrix(*gin[0]).noalias() += g.transpose() * as_matrix(*in[2]);
        if (gin[1] != nullptr) as_row(*gin[1]) += g.colwise().sum();
        if (gin[2] != nullptr) as_matrix(*gin[2]).noalias() += g * as_matrix(*in[0]);
      });
}

NodeId relu(Tape& tape, NodeId x) {
  return elementwise(
      tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

NodeId tanh(Tape& tape, NodeId x) {
  return elementwise(
      tape, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

NodeId add(Tape& tape, NodeId a, NodeId b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  return tape.record(
      "add", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        auto o = out.data();
        const auto r = in[1]->data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += r[i];
        return out;
      },
      [](Inputs, const Tensor&, const Tensor& gout, InputGrads gin) {
        for (Tensor* g : gin) {
          if (g == nullptr) continue;
          auto gd = g->data();
          for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += gout[i];
        }
      });
}

NodeId mul(Tape& tape, NodeId a, NodeId b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  return tape.record(
      "mul", {a, b},
      [](Inputs in) {
        Tensor out = *in[0];
        auto o = out.data();
        const auto r = in[1]->data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] *= r[i];
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& gout, InputGrads gin) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (gin[k] == nullptr) continue;
          auto gd = gin[k]->data();
          const auto other = in[1 - k]->data();
          for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += gout[i] * other[i];
        }
      });
}

NodeId scale(Tape& tape, NodeId x, double factor) {
  return elementwise(
      tape, "scale", x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

NodeId sum(Tape& tape, NodeId x) {
  return tape.record(
      "sum", {x},
      [](Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](Inputs, const Tensor&, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        for (double& g : gin[0]->data()) g += gout[0];
      });
}

NodeId mean(Tape& tape, NodeId x) {
  const double n = static_cast<double>(tape.value(x).size());
  return scale(tape, sum(tape, x), 1.0 / n);
}

NodeId sum_rows(Tape& tape, NodeId x) {
  return tape.record(
      "sum_rows", {x},
      [](Inputs in) {
        const Tensor& x = *in[0];
        Tensor out(Shape{x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double s = 0.0;
          for (double v : x.row(r)) s += v;
          out[r] = s;
        }
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        const std::size_t cols = in[0]->cols();
        auto g = gin[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i / cols];
      });
}

NodeId reshape(Tape& tape, NodeId x, Shape shape) {
  if (element_count(shape) != tape.value(x).size()) {
    throw DimensionError("reshape: " + to_string(tape.value(x).shape()) + " to " +
                         to_string(shape));
  }
  return tape.record(
      "reshape", {x}, [shape](Inputs in) { return in[0]->reshaped(shape); },
      [](Inputs, const Tensor&, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        auto g = gin[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
      });
}

NodeId detach(Tape& tape, NodeId x) {
  return tape.record("detach", {x}, [](Inputs in) { return *in[0]; }, nullptr);
}

double log_sum_exp(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

NodeId cross_entropy_rows(Tape& tape, NodeId logits, std::vector<std::size_t> labels) {
  const Tensor& z = tape.value(logits);
  if (labels.size() != z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + to_string(z.shape()));
  }
  for (std::size_t label : labels) {
    if (label >= z.cols()) {
      throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(z.cols()) + ")");
    }
  }
  return tape.record(
      "cross_entropy", {logits},
      [labels](Inputs in) {
        const Tensor& z = *in[0];
        Tensor out(Shape{z.rows()});
        for (std::size_t r = 0; r < z.rows(); ++r) {
          out[r] = log_sum_exp(z.row(r)) - z.row(r)[labels[r]];
        }
        return out;
      },
      [labels](Inputs in, const Tensor& out, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        const Tensor& z = *in[0];
        for (std::size_t r = 0; r < z.rows(); ++r) {
          const auto zr = z.row(r);
          auto gr = gin[0]->row(r);
          const double lse = zr[labels[r]] + out[r];
          for (std::size_t c = 0; c < zr.size(); ++c) {
            const double p = std::exp(zr[c] - lse);
            gr[c] += gout[r] * (p - (c == labels[r] ? 1.0 : 0.0));
          }
        }
      });
}

NodeId cross_entropy(Tape& tape, NodeId logits, std::size_t label) {
  if (tape.value(logits).rank() != 1) {
    throw DimensionError("cross_entropy expects a logit vector, got " +
                         to_string(tape.value(logits).shape()));
  }
  return reshape(tape, cross_entropy_rows(tape, logits, {label}), {});
}

// ----------------------------------------------------------------- gradcheck

GradCheckResult grad_check(const ScalarGraph& function, ParamStore& params, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check step must be positive");

  params.zero_grad();
  {
    Tape tape;
    const NodeId root = function(tape, params);
    if (!std::isfinite(tape.value(root).item())) {
      throw NumericalError("grad_check: non-finite value at the unperturbed point");
    }
    tape.backward(root);
  }

  auto evaluate = [&] {
    Tape tape;
    return tape.value(function(tape, params)).item();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ParamId id{p};
    auto values = params.value(id).data();
    const auto analytic = params.grad(id).data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate();
      values[i] = saved - step;
      const double down = evaluate();
      values[i] = saved;
      const std::string coordinate = params.name(id) + "[" + std::to_string(i) + "]";
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("grad_check: non-finite evaluation when perturbing " + coordinate);
      }
      const double numeric = (up - down) / (2.0 * step);
      // Cancellation in (up - down) leaves noise of a few ulps of f / step;
      // vanishing gradients are judged against that instead of against zero.
      const double noise = 1e5 * std::numeric_limits<double>::epsilon() *
                           std::max({1.0, std::abs(up), std::abs(down)}) / step;
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({1e-8, noise, std::abs(analytic[i]) + std::abs(numeric)});
      if (err > result.max_relative_error || result.worst_coordinate.empty()) {
        result.max_relative_error = err;
        result.worst_coordinate = coordinate;
      }
    }
  }
  return result;
}

}  // namespace sdclab::ad
