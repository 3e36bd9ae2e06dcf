#pragma once

// Gradient checks for every training loss. Hard-mode training detaches the
// patch features, so for averaging layers above zero the analytic gradient
// is that of the loss with features frozen at the current point; the check
// compares finite differences of that frozen-feature loss, and separately
// confirms the training loss produces the same analytic gradient.

#include <algorithm>
#include <cmath>
#include <string>

#include "sdclab/autodiff.hpp"
#include "sdclab/fcam.hpp"
#include "sdclab/training.hpp"

namespace sdclab::testing {

inline ad::NodeId frozen_feature_hard_loss(ad::Tape& t, FcamModel& model, const Tensor& features,
                                           const Batch& batch) {
  auto bind = [&](const Mlp& net, std::vector<ad::NodeId>& w, std::vector<ad::NodeId>& b) {
    for (std::size_t l = 0; l < net.weight_ids().size(); ++l) {
      w.push_back(t.parameter(model.params(), net.weight_ids()[l]));
      b.push_back(t.parameter(model.params(), net.bias_ids()[l]));
    }
  };
  std::vector<ad::NodeId> fw, fb, gw, gb;
  bind(model.focus(), fw, fb);
  bind(model.classifier(), gw, gb);
  const std::size_t m = model.dims().m;
  FcamGraph g;
  g.batch = batch.size();
  const auto acts = model.focus().forward(t, t.constant(batch.segments), fw, fb);
  g.scores = ad::reshape(t, acts.back(), {batch.size(), m});
  g.alpha = ad::attention(t, g.scores, model.config().activation);
  g.features = t.constant(features);
  g.logits = model.classifier().forward(t, g.features, gw, gb).back();
  return hard_loss(t, g, batch.labels, m);
}

inline std::vector<double> analytic_gradient(FcamModel& model,
                                             const std::function<ad::NodeId(ad::Tape&)>& loss) {
  model.params().zero_grad();
  ad::Tape t;
  t.backward(loss(t));
  std::vector<double> out;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto g = model.params().grad(ad::ParamId{p}).data();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

struct LossCheck {
  double max_relative_error = 0.0;
  std::string worst_coordinate;
};

/// Finite-difference check of the training loss of `model` on `batch`.
inline LossCheck check_training_loss(FcamModel& model, const Batch& batch, double lambda,
                                     double step = 1e-5) {
  const bool frozen = model.config().mode == AttentionMode::hard && model.config().averaging_layer > 0;
  if (!frozen) {
    auto r = ad::grad_check(
        [&](ad::Tape& t, ad::ParamStore&) { return training_loss(t, model, batch, lambda); },
        model.params(), step);
    return {r.max_relative_error, r.worst_coordinate};
  }
  ad::Tape ft;
  const auto fg = model.build(ft, batch.segments, batch.size(), false);
  const Tensor features = ft.value(fg.features);
  auto surrogate = [&](ad::Tape& t) { return frozen_feature_hard_loss(t, model, features, batch); };
  auto r = ad::grad_check([&](ad::Tape& t, ad::ParamStore&) { return surrogate(t); },
                          model.params(), step);
  LossCheck out{r.max_relative_error, r.worst_coordinate};
  const auto a = analytic_gradient(model, [&](ad::Tape& t) { return training_loss(t, model, batch, lambda); });
  const auto b = analytic_gradient(model, surrogate);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double err = std::abs(a[i] - b[i]) / std::max(1e-8, std::abs(a[i]) + std::abs(b[i]));
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_coordinate = "training vs frozen-feature gradient #" + std::to_string(i);
    }
  }
  return out;
}

}  // namespace sdclab::testing
