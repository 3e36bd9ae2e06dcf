#include "sdclab/attention.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "sdclab/error.hpp"

namespace sdclab {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::softmax: return "softmax";
    case ActivationKind::sparsemax: return "sparsemax";
    case ActivationKind::spherical_softmax: return "spherical_softmax";
    case ActivationKind::hard: return "hard";
  }
  return "unknown";
}

ActivationKind parse_activation(std::string_view name) {
  for (auto kind : {ActivationKind::softmax, ActivationKind::sparsemax,
                    ActivationKind::spherical_softmax, ActivationKind::hard}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

namespace kernels {

void softmax(std::span<const double> z, std::span<double> out) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    out[j] = std::exp(z[j] - top);
    total += out[j];
  }
  for (double& v : out) v /= total;
}

double sparsemax(std::span<const double> z, std::span<double> out) {
  std::vector<double> sorted(z.begin(), z.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double prefix = 0.0;
  double support_sum = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    prefix += sorted[j];
    const double k = static_cast<double>(j + 1);
    if (sorted[j] > (prefix - 1.0) / k) {
      support = j + 1;
      support_sum = prefix;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(support);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::max(0.0, z[j] - tau);
  return tau;
}

bool spherical_softmax(std::span<const double> z, std::span<double> out) {
  double norm2 = 0.0;
  for (double v : z) norm2 += v * v;
  const double floor = kSphericalEpsilon / static_cast<double>(z.size());
  const double denom = norm2 + kSphericalEpsilon;
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = (z[j] * z[j] + floor) / denom;
  return norm2 <= kSphericalEpsilon;
}

void softmax_vjp(std::span<const double> alpha, std::span<const double> grad_alpha,
                 std::span<double> grad_z) {
  double dot = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) dot += alpha[j] * grad_alpha[j];
  for (std::size_t j = 0; j < alpha.size(); ++j) grad_z[j] += alpha[j] * (grad_alpha[j] - dot);
}

void sparsemax_vjp(std::span<const double> alpha, std::span<const double> grad_alpha,
                   std::span<double> grad_z) {
  double support_sum = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (alpha[j] > 0.0) {
      support_sum += grad_alpha[j];
      ++support;
    }
  }
  const double mean = support_sum / static_cast<double>(support);
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (alpha[j] > 0.0) grad_z[j] += grad_alpha[j] - mean;
  }
}

void spherical_softmax_vjp(std::span<const double> z, std::span<const double> alpha,
                           std::span<const double> grad_alpha, std::span<double> grad_z) {
  double norm2 = 0.0;
  double dot = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    norm2 += z[j] * z[j];
    dot += alpha[j] * grad_alpha[j];
  }
  const double denom = norm2 + kSphericalEpsilon;
  for (std::size_t j = 0; j < z.size(); ++j) {
    grad_z[j] += 2.0 * z[j] / denom * (grad_alpha[j] - dot);
  }
}

void entropy_vjp(std::span<const double> alpha, double grad_out, std::span<double> grad_alpha) {
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (alpha[j] > 0.0) grad_alpha[j] += -grad_out * (std::log(alpha[j]) + 1.0);
  }
}

}  // namespace kernels

namespace {

void require_nonempty(std::span<const double> z) {
  if (z.empty()) throw DimensionError("attention over an empty score vector");
}

}  // namespace

AttentionVector softmax(std::span<const double> z) {
  require_nonempty(z);
  AttentionVector a{std::vector<double>(z.size())};
  kernels::softmax(z, a.weights);
  return a;
}

AttentionVector sparsemax(std::span<const double> z) {
  require_nonempty(z);
  AttentionVector a{std::vector<double>(z.size())};
  kernels::sparsemax(z, a.weights);
  return a;
}

AttentionVector spherical_softmax(std::span<const double> z) {
  require_nonempty(z);
  AttentionVector a{std::vector<double>(z.size())};
  a.degenerate = kernels::spherical_softmax(z, a.weights);
  return a;
}

AttentionVector activate(ActivationKind kind, std::span<const double> z) {
  switch (kind) {
    case ActivationKind::sparsemax: return sparsemax(z);
    case ActivationKind::spherical_softmax: return spherical_softmax(z);
    case ActivationKind::softmax:
    case ActivationKind::hard: return softmax(z);
  }
  return softmax(z);
}

double entropy(std::span<const double> alpha) {
  double h = 0.0;
  for (double a : alpha) {
    if (a > 0.0) h -= a * std::log(a);
  }
  return h;
}

std::size_t hard_select(std::span<const double> alpha) {
  require_nonempty(alpha);
  return static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
}

bool is_probability_vector(std::span<const double> alpha, double tol) {
  if (alpha.empty()) return false;
  double total = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a)) return false;
    total += a;
  }
  return std::abs(total - 1.0) <= tol;
}

namespace ad {

NodeId attention(Tape& tape, NodeId scores, ActivationKind kind) {
  const Tensor& z = tape.value(scores);
  if (z.rank() == 0 || z.rank() > 2 || z.cols() == 0) {
    throw DimensionError("attention expects scores [n, m] or [m], got " + to_string(z.shape()));
  }
  switch (kind) {
    case ActivationKind::sparsemax:
      return tape.record(
          "sparsemax", {scores},
          [](Inputs in) {
            Tensor out = Tensor::zeros_like(*in[0]);
            for (std::size_t r = 0; r < out.rows(); ++r) kernels::sparsemax(in[0]->row(r), out.row(r));
            return out;
          },
          [](Inputs, const Tensor& out, const Tensor& gout, InputGrads gin) {
            if (gin[0] == nullptr) return;
            for (std::size_t r = 0; r < out.rows(); ++r)
              kernels::sparsemax_vjp(out.row(r), gout.row(r), gin[0]->row(r));
          });
    case ActivationKind::spherical_softmax:
      return tape.record(
          "spherical_softmax", {scores},
          [](Inputs in) {
            Tensor out = Tensor::zeros_like(*in[0]);
            for (std::size_t r = 0; r < out.rows(); ++r)
              kernels::spherical_softmax(in[0]->row(r), out.row(r));
            return out;
          },
          [](Inputs in, const Tensor& out, const Tensor& gout, InputGrads gin) {
            if (gin[0] == nullptr) return;
            for (std::size_t r = 0; r < out.rows(); ++r)
              kernels::spherical_softmax_vjp(in[0]->row(r), out.row(r), gout.row(r),
                                             gin[0]->row(r));
          });
    case ActivationKind::softmax:
    case ActivationKind::hard:
      break;
  }
  return tape.record(
      "softmax", {scores},
      [](Inputs in) {
        Tensor out = Tensor::zeros_like(*in[0]);
        for (std::size_t r = 0; r < out.rows(); ++r) kernels::softmax(in[0]->row(r), out.row(r));
        return out;
      },
      [](Inputs, const Tensor& out, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        for (std::size_t r = 0; r < out.rows(); ++r)
          kernels::softmax_vjp(out.row(r), gout.row(r), gin[0]->row(r));
      });
}

NodeId entropy_rows(Tape& tape, NodeId alpha) {
  return tape.record(
      "entropy", {alpha},
      [](Inputs in) {
        const Tensor& a = *in[0];
        Tensor out(Shape{a.rows()});
        for (std::size_t r = 0; r < a.rows(); ++r) out[r] = entropy(a.row(r));
        return out;
      },
      [](Inputs in, const Tensor&, const Tensor& gout, InputGrads gin) {
        if (gin[0] == nullptr) return;
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          kernels::entropy_vjp(in[0]->row(r), gout[r], gin[0]->row(r));
      });
}

}  // namespace ad

}  // namespace sdclab
