#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "sdclab/attention.hpp"
#include "sdclab/error.hpp"

using namespace sdclab;

namespace {

// Projection onto the simplex by enumerating every candidate support: on a
// support S the KKT point is z_S - (sum z_S - 1)/|S|; keep the feasible
// candidate closest to z.
std::vector<double> brute_force_projection(const std::vector<double>& z) {
  const std::size_t m = z.size();
  std::vector<double> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (mask >> j & 1) {
        s += z[j];
        ++count;
      }
    const double shift = (s - 1.0) / static_cast<double>(count);
    std::vector<double> p(m, 0.0);
    bool feasible = true;
    for (std::size_t j = 0; j < m; ++j)
      if (mask >> j & 1) {
        p[j] = z[j] - shift;
        if (p[j] < 0.0) feasible = false;
      }
    if (!feasible) continue;
    double dist = 0.0;
    for (std::size_t j = 0; j < m; ++j) dist += (p[j] - z[j]) * (p[j] - z[j]);
    if (dist < best_dist) {
      best_dist = dist;
      best = p;
    }
  }
  return best;
}

std::vector<double> normal_vector(std::size_t m, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> z(m);
  for (double& v : z) v = n(gen);
  return z;
}

double activation_grad_error(ActivationKind kind, const std::vector<double>& z,
                             const std::vector<double>& r, bool with_entropy) {
  ad::ParamStore store;
  const ad::ParamId id = store.add("z", Tensor::vector(z));
  return ad::grad_check(
             [&](ad::Tape& t, ad::ParamStore& s) {
               const ad::NodeId a = ad::attention(t, t.parameter(s, id), kind);
               const ad::NodeId proj = ad::sum(t, ad::mul(t, a, t.constant(Tensor::vector(r))));
               if (!with_entropy) return proj;
               return ad::add(t, proj, ad::sum(t, ad::entropy_rows(t, a)));
             },
             store, 1e-5)
      .max_relative_error;
}

}  // namespace

TEST_CASE("softmax closed forms and shift invariance") {
  const auto u = softmax(std::vector<double>(9, 0.0));
  for (double a : u.weights) CHECK(a == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  const auto two = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  std::mt19937_64 gen(1);
  for (int i = 0; i < 100; ++i) {
    auto z = normal_vector(7, gen, 3.0);
    auto shifted = z;
    for (double& v : shifted) v += 123.456;
    const auto a = softmax(z), b = softmax(shifted);
    for (std::size_t j = 0; j < z.size(); ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-12);
  }
}

TEST_CASE("sparsemax closed forms") {
  auto p = sparsemax(std::vector<double>{0.6, 0.4});
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.4).epsilon(1e-15));
  p = sparsemax(std::vector<double>{1.0, 1.0});
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
  p = sparsemax(std::vector<double>{2.0, 0.0});
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);
}

TEST_CASE("sparsemax agrees with a brute-force simplex projection") {
  std::mt19937_64 gen(2);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 1 + gen() % 5;
    const auto z = normal_vector(m, gen, 1.5);
    const auto got = sparsemax(z);
    const auto expect = brute_force_projection(z);
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(got[j] - expect[j]));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("sparsemax of a scaled vector approaches one-hot") {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 100; ++i) {
    auto z = normal_vector(6, gen);
    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    for (double& v : z) v *= 1e6;
    const auto p = sparsemax(z);
    for (std::size_t j = 0; j < z.size(); ++j) CHECK(std::abs(p[j] - (j == top ? 1.0 : 0.0)) <= 1e-9);
  }
}

TEST_CASE("spherical softmax closed forms and the zero input") {
  auto p = spherical_softmax(std::vector<double>{1, 1, 1});
  for (double a : p.weights) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  p = spherical_softmax(std::vector<double>{2, 0, 0});
  CHECK(std::abs(p[0] - 1.0) <= 1e-12);
  CHECK(std::abs(p[1]) <= 1e-12);
  p = spherical_softmax(std::vector<double>{1, -1});
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_FALSE(p.degenerate);
  p = spherical_softmax(std::vector<double>(4, 0.0));
  CHECK(p.degenerate);
  for (double a : p.weights) CHECK(a == 0.25);
}

TEST_CASE("every activation yields a probability vector") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> scale(-8, 8);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t m = 1 + gen() % 12;
    const auto z = normal_vector(m, gen, std::pow(10.0, scale(gen) / 2));
    for (auto kind : {ActivationKind::softmax, ActivationKind::sparsemax,
                      ActivationKind::spherical_softmax, ActivationKind::hard}) {
      const auto a = activate(kind, z);
      CHECK(is_probability_vector(a.weights));
    }
  }
}

TEST_CASE("entropy and hard selection") {
  CHECK(entropy(std::vector<double>{0, 1, 0}) == 0.0);
  CHECK(entropy(std::vector<double>(9, 1.0 / 9.0)) == doctest::Approx(std::log(9.0)).epsilon(1e-14));
  CHECK(entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(hard_select(std::vector<double>{0.1, 0.8, 0.1}) == 1);
  CHECK(hard_select(std::vector<double>(5, 0.2)) == 0);
  CHECK(hard_select(std::vector<double>{0, 0, 0, 1}) == 3);
}

TEST_CASE("activation names round-trip") {
  for (auto kind : {ActivationKind::softmax, ActivationKind::sparsemax,
                    ActivationKind::spherical_softmax, ActivationKind::hard}) {
    CHECK(parse_activation(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_activation("relu"), ConfigError);
}

TEST_CASE("activation and entropy gradients match central differences") {
  std::mt19937_64 gen(5);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t m = 2 + gen() % 8;
    const auto r = normal_vector(m, gen);
    worst = std::max(worst, activation_grad_error(ActivationKind::softmax, normal_vector(m, gen, 2), r, true));
    worst = std::max(worst, activation_grad_error(ActivationKind::spherical_softmax, normal_vector(m, gen, 2), r, false));
    // Sparsemax away from support changes.
    std::vector<double> z;
    for (;;) {
      z = normal_vector(m, gen);
      std::vector<double> out(m);
      const double tau = kernels::sparsemax(z, out);
      if (std::all_of(z.begin(), z.end(), [&](double v) { return std::abs(v - tau) >= 1e-3; })) break;
    }
    worst = std::max(worst, activation_grad_error(ActivationKind::sparsemax, z, r, false));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("batched attention applies the activation row by row") {
  const Tensor scores = Tensor::matrix(2, 3, {0, 0, 0, 2, 0, 0});
  ad::Tape tape;
  const auto a = ad::attention(tape, tape.constant(scores), ActivationKind::sparsemax);
  CHECK(tape.value(a) == Tensor::matrix(2, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3, 1, 0, 0}));
}

TEST_CASE("sparsemax is sparser and lower-entropy than softmax on random scores") {
  std::mt19937_64 gen(6);
  int lower = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const auto z = normal_vector(9, gen);
    const auto sp = sparsemax(z), sm = softmax(z);
    const auto nnz = [](const AttentionVector& a) {
      return std::count_if(a.weights.begin(), a.weights.end(), [](double v) { return v > 0; });
    };
    CHECK(nnz(sp) <= nnz(sm));
    if (entropy(sp.weights) <= entropy(sm.weights)) ++lower;
  }
  CHECK(lower >= trials * 95 / 100);
}
