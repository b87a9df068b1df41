#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "headbench/error.hpp"
#include "headbench/objective.hpp"

using namespace headbench;

namespace {

CountVector counts_of(std::vector<long> c) { return CountVector{std::move(c)}; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Independent soft-target cross-entropy: -sum q log softmax(y), computed with log-sum-exp.
double reference_ce(std::span<const double> y, std::span<const double> q) {
  double m = y[0];
  for (double v : y) m = std::max(m, v);
  double z = 0.0;
  for (double v : y) z += std::exp(v - m);
  const double lse = m + std::log(z);
  double loss = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) loss -= q[k] * (y[k] - lse);
  return loss;
}

}  // namespace

TEST_CASE("focal alpha") {
  SUBCASE("equal counts give unit weights") {
    for (double a : focal_alpha(counts_of({7, 7, 7, 7}))) CHECK(a == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("counts [100, 25] give [2/3, 4/3]") {
    const auto a = focal_alpha(counts_of({100, 25}));
    CHECK(a[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("scale invariant, mean one, monotone") {
    const auto a = focal_alpha(counts_of({400, 90, 3, 17}));
    const auto b = focal_alpha(counts_of({800, 180, 6, 34}));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
    CHECK(std::abs(mean(a) - 1.0) <= 1e-12);
    CHECK(a[2] > a[3]);
    CHECK(a[3] > a[1]);
    CHECK(a[1] > a[0]);
  }
  SUBCASE("zero-count classes take the largest weight") {
    const auto a = focal_alpha(counts_of({100, 0, 4}));
    CHECK(a[1] == a[2]);
    CHECK(a[1] > a[0]);
    CHECK_THROWS_AS(focal_alpha(counts_of({0, 0})), ValidationError);
  }
}

TEST_CASE("effective-number weights") {
  SUBCASE("n = 1 gives raw weight 1 and beta = 0 is uniform") {
    const auto w = effective_number_weights(counts_of({1, 1}), 0.9);
    CHECK(w[0] == doctest::Approx(1.0));
    for (double x : effective_number_weights(counts_of({1, 50, 1000}), 0.0)) CHECK(x == doctest::Approx(1.0));
  }
  SUBCASE("beta 0.9, n = 2 has raw weight 0.1 / 0.19") {
    // With a one-sample class alongside, normalized weights keep the raw ratio.
    const auto w = effective_number_weights(counts_of({2, 1}), 0.9);
    const double raw = 0.1 / 0.19;
    CHECK(raw == doctest::Approx(0.52632).epsilon(1e-5));
    CHECK(w[0] / w[1] == doctest::Approx(raw).epsilon(1e-14));
    CHECK(w[0] == doctest::Approx(2.0 * raw / (raw + 1.0)).epsilon(1e-14));
  }
  SUBCASE("monotone and mean one") {
    const auto w = effective_number_weights(counts_of({5000, 300, 20, 2}), 0.999);
    CHECK(std::abs(mean(w) - 1.0) <= 1e-12);
    CHECK(w[3] >= w[2]);
    CHECK(w[2] >= w[1]);
    CHECK(w[1] >= w[0]);
  }
  SUBCASE("beta must lie in [0, 1)") {
    CHECK_THROWS_AS(effective_number_weights(counts_of({1, 2}), 1.0), ValidationError);
    CHECK_THROWS_AS(effective_number_weights(counts_of({1, 2}), -0.1), ValidationError);
  }
}

TEST_CASE("label smoothing") {
  const auto one_hot = smooth_targets(3, 0.0, 13);
  for (int k = 0; k < 13; ++k) CHECK(one_hot[static_cast<std::size_t>(k)] == (k == 3 ? 1.0 : 0.0));
  const auto q = smooth_targets(0, 0.1, 13);
  CHECK(q[0] == doctest::Approx(0.907692).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(0.0076923).epsilon(1e-5));
  CHECK(std::abs(std::accumulate(q.begin(), q.end(), 0.0) - 1.0) <= 1e-12);
  CHECK_THROWS_AS(smooth_targets(0, 1.0, 13), ValidationError);
}

TEST_CASE("focal loss values") {
  SUBCASE("two classes, zero logits, gamma 2") {
    Matrix y(1, 2), q(1, 2);
    q(0, 0) = 1.0;
    const std::vector<double> alpha{1.0, 1.0};
    CHECK(focal_loss(y, q, alpha, 2.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-14));
    CHECK(focal_loss(y, q, alpha, 2.0) == doctest::Approx(0.173287).epsilon(1e-6));
  }
  SUBCASE("confident correct prediction has zero loss at gamma 0") {
    Matrix y(1, 3), q(1, 3);
    y(0, 1) = 800.0;
    q(0, 1) = 1.0;
    const std::vector<double> alpha(3, 1.0);
    CHECK(focal_loss(y, q, alpha, 0.0) == 0.0);
  }
  SUBCASE("gamma 0, alpha 1 equals cross-entropy on random soft targets") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 4.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::vector<double> alpha(13, 1.0);
    for (int t = 0; t < 20; ++t) {
      Matrix y(8, 13), q(8, 13);
      double expected = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 13; ++k) {
          y(i, k) = normal(rng);
          q(i, k) = unit(rng);
          s += q(i, k);
        }
        for (std::size_t k = 0; k < 13; ++k) q(i, k) /= s;
        expected += reference_ce(y.row(i), q.row(i));
      }
      expected /= 8.0;
      CHECK(std::abs(focal_loss(y, q, alpha, 0.0) - expected) <= 1e-12);
    }
  }
  SUBCASE("non-finite logits are rejected") {
    Matrix y(1, 2), q(1, 2);
    y(0, 0) = std::nan("");
    q(0, 0) = 1.0;
    const std::vector<double> alpha{1.0, 1.0};
    CHECK_THROWS_AS(focal_loss(y, q, alpha, 2.0), NumericError);
  }
}

TEST_CASE("weighted cross-entropy") {
  SUBCASE("uniform logits, one-hot target, weight 2 gives 2 ln C") {
    Matrix y(1, 13), q(1, 13);
    q(0, 4) = 1.0;
    std::vector<double> w(13, 1.0);
    w[4] = 2.0;
    CHECK(weighted_cross_entropy(y, q, w) == doctest::Approx(2.0 * std::log(13.0)).epsilon(1e-14));
  }
  SUBCASE("p = q gives the entropy of q") {
    const std::vector<double> p{0.5, 0.25, 0.25};
    Matrix y(1, 3), q(1, 3);
    for (std::size_t k = 0; k < 3; ++k) {
      y(0, k) = std::log(p[k]);
      q(0, k) = p[k];
    }
    const double entropy = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
    CHECK(weighted_cross_entropy(y, q, std::vector<double>(3, 1.0)) == doctest::Approx(entropy).epsilon(1e-14));
  }
  SUBCASE("scaling weights scales the loss") {
    Matrix y(2, 3), q(2, 3);
    y(0, 0) = 1.0;
    y(1, 2) = -2.0;
    q(0, 1) = 1.0;
    q(1, 2) = 1.0;
    const std::vector<double> w{0.5, 1.5, 2.0};
    std::vector<double> w4 = w;
    for (auto& x : w4) x *= 4.0;
    CHECK(weighted_cross_entropy(y, q, w4) == doctest::Approx(4.0 * weighted_cross_entropy(y, q, w)).epsilon(1e-15));
  }
}

TEST_CASE("sample loss gradient matches finite differences") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::uniform_real_distribution<double> unit(0.1, 2.0);
  for (double gamma : {0.0, 1.0, 2.0, 3.5}) {
    LossSpec spec{gamma, {}};
    for (int k = 0; k < 6; ++k) spec.alpha.push_back(unit(rng));
    std::vector<double> y(6);
    for (auto& v : y) v = normal(rng);
    const auto q = smooth_targets(2, 0.1, 6);
    std::vector<double> g(6);
    sample_loss(y, q, spec, g);
    for (std::size_t j = 0; j < 6; ++j) {
      const double h = 1e-6;
      auto yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      const double fd = (sample_loss(yp, q, spec) - sample_loss(ym, q, spec)) / (2 * h);
      CHECK(g[j] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("mixup") {
  Matrix x(2, 3), q(2, 2);
  x(0, 0) = 1.0;
  x(1, 1) = 4.0;
  q(0, 0) = 1.0;
  q(1, 1) = 1.0;
  SUBCASE("lambda 1 is the identity") {
    const auto r = mix_pairs(x, q, 1.0, {1, 0});
    CHECK(r.features == x);
    CHECK(r.targets == q);
  }
  SUBCASE("lambda 0.5 splits two one-hot targets evenly") {
    const auto r = mix_pairs(x, q, 0.5, {1, 0});
    CHECK(r.targets(0, 0) == 0.5);
    CHECK(r.targets(0, 1) == 0.5);
    CHECK(r.features(0, 1) == 2.0);
  }
  SUBCASE("mixed targets stay on the simplex and runs are reproducible") {
    std::mt19937_64 a(4), b(4);
    int applied = 0;
    for (int t = 0; t < 200; ++t) {
      Matrix xs(5, 2), qs = smooth_targets(std::vector<ClassId>{0, 1, 2, 1, 0}, 0.1, 3);
      const auto r1 = mixup(xs, qs, 0.5, 0.2, a);
      const auto r2 = mixup(xs, qs, 0.5, 0.2, b);
      CHECK(r1.targets == r2.targets);
      applied += r1.applied;
      for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          CHECK(r1.targets(i, k) >= 0.0);
          s += r1.targets(i, k);
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
    CHECK(applied > 60);
    CHECK(applied < 140);
  }
  SUBCASE("probability zero never mixes, tiny batches are flagged") {
    std::mt19937_64 rng(1);
    CHECK_FALSE(mixup(x, q, 0.0, 0.2, rng).applied);
    Matrix one(1, 3), t(1, 2);
    t(0, 0) = 1.0;
    const auto r = mixup(one, t, 1.0, 0.2, rng);
    CHECK_FALSE(r.applied);
    CHECK(r.skipped_small_batch);
  }
}

TEST_CASE("loss config") {
  LossConfig cfg;
  CHECK(cfg.gamma == 2.0);
  CHECK(cfg.smoothing == 0.1);
  CHECK(cfg.mixup_prob == 0.1);
  nlohmann::json j = cfg;
  CHECK(j.get<LossConfig>().effective_beta == cfg.effective_beta);
  const auto spec = resolve_loss(LossConfig::decoupled(), counts_of({10, 1000}));
  CHECK(spec.gamma == 0.0);
  CHECK(spec.alpha[0] > spec.alpha[1]);
  cfg.smoothing = 1.0;
  CHECK_THROWS_AS(cfg.validate(2), ValidationError);
}
