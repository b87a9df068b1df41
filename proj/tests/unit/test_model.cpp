#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "../common/gradcheck.hpp"
#include "headbench/error.hpp"
#include "headbench/model.hpp"
#include "support.hpp"

using namespace headbench;
using test_support::TempDir;

namespace {

ModelConfig config(HeadFamily family, std::size_t d, std::size_t C) {
  ModelConfig c;
  c.family = family;
  c.dim = d;
  c.num_classes = C;
  return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.5) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.data) v = normal(rng);
  return m;
}

Matrix random_targets(std::size_t n, int C, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> label(0, C - 1);
  std::vector<ClassId> y(n);
  for (auto& v : y) v = label(rng);
  return smooth_targets(y, 0.1, C);
}

}  // namespace

TEST_CASE("layer norm") {
  const std::vector<double> ones(4, 1.0), zeros(4, 0.0);
  SUBCASE("constant input gives zeros") {
    for (double v : layer_norm(std::vector<double>(4, 3.5), ones, zeros, 1e-5)) CHECK(v == 0.0);
  }
  SUBCASE("[1, -1] stays [1, -1] as eps -> 0") {
    const std::vector<double> g{1.0, 1.0}, b{0.0, 0.0};
    const auto out = layer_norm(std::vector<double>{1.0, -1.0}, g, b, 1e-15);
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("gamma 0 returns beta") {
    const std::vector<double> beta{5.0, 5.0, -2.0, 0.5};
    CHECK(layer_norm(std::vector<double>{1, 2, 3, 9}, zeros, beta, 1e-5) == beta);
  }
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(1);
  const std::vector<double> z{1.0, -2.0, 3.0};
  CHECK(dropout(z, 0.0, rng, true) == z);
  CHECK(dropout(z, 0.7, rng, false) == z);

  std::mt19937_64 a(42), b(42);
  CHECK(dropout(z, 0.5, a, true) == dropout(z, 0.5, b, true));

  std::mt19937_64 r(3);
  const std::vector<double> one{1.0};
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double v = dropout(one, 0.5, r, true)[0];
    CHECK((v == 0.0 || v == 2.0));
    sum += v;
  }
  CHECK(std::abs(sum / draws - 1.0) <= 0.02);
}

TEST_CASE("softmax") {
  const auto u = softmax(std::vector<double>(5, 0.3));
  for (double p : u) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
  const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const std::vector<double> y{0.5, -3.0, 2.25, 7.0};
  std::vector<double> shifted = y;
  for (auto& v : shifted) v += 1024.0;
  CHECK(softmax(y) == softmax(shifted));
  const auto s = softmax(y);
  CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0) <= 1e-12);
}

TEST_CASE("head forward examples") {
  SUBCASE("cosine of (3,4) and (4,3) is 0.96") {
    auto m = HeadModel::create(config(HeadFamily::cosine, 2, 2), 1);
    m.param("stem.gamma").values = {0.0, 0.0};
    m.param("stem.beta").values = {3.0, 4.0};
    m.param("head.weight").values = {4.0, 3.0, 3.0, 4.0};
    const auto y = forward(m, std::vector<double>{0.1, 0.2}, Mode::eval);
    CHECK(y[0] == doctest::Approx(0.96).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("cosine logits are bounded by the scale and degenerate z gives zeros") {
    std::mt19937_64 rng(2);
    auto m = HeadModel::create(config(HeadFamily::cosine, 6, 13), 2);
    test_support::randomize(m, rng, 1.0);
    const auto x = random_matrix(50, 6, rng, 5.0);
    for (double v : predict_logits(m, x).data) CHECK(std::abs(v) <= 1.0 + 1e-15);
    m.param("stem.gamma").values.assign(6, 0.0);
    m.param("stem.beta").values.assign(6, 0.0);
    for (double v : forward(m, x.row(0), Mode::eval)) CHECK(v == 0.0);
  }
  SUBCASE("linear head with W = 0 returns b") {
    auto m = HeadModel::create(config(HeadFamily::linear, 4, 3), 1);
    m.param("head.weight").values.assign(12, 0.0);
    m.param("head.bias").values = {1.0, -2.0, 0.5};
    CHECK(forward(m, std::vector<double>{3, 1, 4, 1}, Mode::eval) == m.param("head.bias").values);
  }
  SUBCASE("mlp hidden layer uses exact GELU") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(gelu(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
    const double h = 1e-6;
    for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0})
      CHECK(gelu_derivative(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-8));
  }
}

TEST_CASE("identity trunk matches a model without trunk") {
  std::mt19937_64 rng(5);
  for (auto family : {HeadFamily::linear, HeadFamily::cosine, HeadFamily::mlp}) {
    auto with = config(family, 8, 13);
    auto without = with;
    without.use_trunk = false;
    const auto a = HeadModel::create(with, 9);
    const auto b = HeadModel::create(without, 9);
    const auto x = random_matrix(20, 8, rng);
    CHECK(predict_logits(a, x) == predict_logits(b, x));
  }
}

TEST_CASE("eval forward is pure and train forward depends only on the rng") {
  auto m = HeadModel::create(config(HeadFamily::mlp, 5, 4), 3);
  std::mt19937_64 rng(1);
  const auto x = random_matrix(1, 5, rng);
  CHECK(forward(m, x.row(0), Mode::eval) == forward(m, x.row(0), Mode::eval));
  std::mt19937_64 a(8), b(8);
  CHECK(forward(m, x.row(0), Mode::train, &a) == forward(m, x.row(0), Mode::train, &b));
}

TEST_CASE("backward") {
  SUBCASE("gradients match central differences for every family") {
    std::mt19937_64 rng(17);
    for (auto family : {HeadFamily::linear, HeadFamily::cosine, HeadFamily::mlp}) {
      auto m = HeadModel::create(config(family, 5, 13), 4);
      test_support::randomize(m, rng);
      const auto x = random_matrix(6, 5, rng);
      const auto q = random_targets(6, 13, rng);
      CountVector counts{{50, 30, 20, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1}};
      const LossSpec spec{2.0, focal_alpha(counts)};
      std::vector<DropoutMask> masks;
      for (int i = 0; i < 6; ++i) masks.push_back(sample_dropout_mask(m, rng));
      for (const bool use_masks : {false, true}) {
        const auto r = test_support::check_gradients(m, x, q, spec, use_masks ? std::span<const DropoutMask>(masks)
                                                                               : std::span<const DropoutMask>());
        INFO(to_string(family), " worst ", r.worst_param);
        CHECK(r.max_rel_error <= 1e-5);
      }
    }
  }
  SUBCASE("loss equals the objective evaluated on the logits") {
    std::mt19937_64 rng(2);
    auto m = HeadModel::create(config(HeadFamily::mlp, 4, 13), 1);
    const auto x = random_matrix(7, 4, rng);
    const auto q = random_targets(7, 13, rng);
    const std::vector<double> alpha(13, 1.3);
    const auto g = backward(m, x, q, LossSpec{2.0, alpha});
    CHECK(g.loss == doctest::Approx(focal_loss(predict_logits(m, x), q, alpha, 2.0)).epsilon(1e-14));
  }
  SUBCASE("zero linear head, uniform targets: bias gradient is zero") {
    auto m = HeadModel::create(config(HeadFamily::linear, 3, 4), 1);
    m.param("head.weight").values.assign(12, 0.0);
    Matrix x(2, 3), q(2, 4);
    x(0, 0) = 1.0;
    x(1, 0) = -1.0;
    for (auto& v : q.data) v = 0.25;
    const auto g = backward(m, x, q, LossSpec{0.0, std::vector<double>(4, 1.0)});
    std::size_t bias = 0;
    while (m.params()[bias].name != "head.bias") ++bias;
    for (double v : g.grads.values[bias]) CHECK(std::abs(v) <= 1e-17);
  }
  SUBCASE("duplicated sample doubles the summed gradient") {
    std::mt19937_64 rng(4);
    auto m = HeadModel::create(config(HeadFamily::cosine, 4, 3), 1);
    const auto x1 = random_matrix(1, 4, rng);
    const auto q1 = random_targets(1, 3, rng);
    Matrix x2(2, 4), q2(2, 3);
    for (std::size_t r = 0; r < 2; ++r) {
      std::copy(x1.data.begin(), x1.data.end(), x2.row(r).begin());
      std::copy(q1.data.begin(), q1.data.end(), q2.row(r).begin());
    }
    const LossSpec spec{2.0, std::vector<double>(3, 1.0)};
    auto one = Gradients::zeros_like(m), two = Gradients::zeros_like(m);
    accumulate_gradients(m, x1, q1, spec, {}, one);
    accumulate_gradients(m, x2, q2, spec, {}, two);
    for (std::size_t p = 0; p < one.values.size(); ++p)
      for (std::size_t i = 0; i < one.values[p].size(); ++i) CHECK(two.values[p][i] == 2.0 * one.values[p][i]);
  }
  SUBCASE("non-finite intermediates name the parameter") {
    auto m = HeadModel::create(config(HeadFamily::linear, 3, 2), 1);
    m.param("head.weight").values[0] = std::numeric_limits<double>::infinity();
    Matrix x(1, 3), q(1, 2);
    x(0, 0) = 1.0;
    x(0, 1) = 2.0;
    q(0, 0) = 1.0;
    CHECK_THROWS_AS(backward(m, x, q, LossSpec{0.0, {1.0, 1.0}}), NumericError);
  }
}

TEST_CASE("parameter layout") {
  const auto m = HeadModel::create(config(HeadFamily::mlp, 4, 3), 1);
  std::vector<std::string> names;
  for (const auto& t : m.params()) names.push_back(t.name);
  CHECK(names == std::vector<std::string>{"trunk.weight", "trunk.bias", "stem.gamma", "stem.beta", "head.fc1.weight",
                                          "head.fc1.bias", "head.fc2.weight", "head.fc2.bias"});
  CHECK(m.param("trunk.weight").group == ParamGroup::trunk);
  CHECK(m.param("stem.gamma").group == ParamGroup::stem);
  CHECK_FALSE(m.param("stem.gamma").decay);
  CHECK_FALSE(m.param("head.fc1.bias").decay);
  CHECK(m.param("head.fc1.weight").decay);
  CHECK_THROWS_AS(m.param("nope"), ValidationError);
  ModelConfig bad = config(HeadFamily::cosine, 4, 3);
  bad.cosine_scale = 0.0;
  CHECK_THROWS_AS(HeadModel::create(bad, 1), ValidationError);
}

TEST_CASE("checkpoints") {
  TempDir dir("ckpt");
  std::mt19937_64 rng(6);
  for (auto family : {HeadFamily::linear, HeadFamily::cosine, HeadFamily::mlp}) {
    auto m = HeadModel::create(config(family, 6, 13), 12);
    test_support::randomize(m, rng);
    m.params()[0].values[0] = -0.0;
    m.params()[0].values[1] = std::numeric_limits<double>::denorm_min();
    m.stage_tag = "S2";
    save_checkpoint(m, dir / "m.hfck");
    const auto back = load_checkpoint(dir / "m.hfck");
    CHECK(back.stage_tag == "S2");
    CHECK(back.config() == m.config());
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t p = 0; p < m.params().size(); ++p)
      CHECK(std::memcmp(back.params()[p].values.data(), m.params()[p].values.data(),
                        m.params()[p].values.size() * sizeof(double)) == 0);
    save_checkpoint(back, dir / "again.hfck");
    CHECK(test_support::slurp(dir / "m.hfck") == test_support::slurp(dir / "again.hfck"));
  }
  SUBCASE("corrupt files are rejected") {
    const auto m = HeadModel::create(config(HeadFamily::linear, 2, 2), 1);
    save_checkpoint(m, dir / "m.hfck");
    std::string bytes = test_support::slurp(dir / "m.hfck");
    CHECK(bytes.substr(0, 4) == "HFCK");
    std::ofstream(dir / "short.hfck", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS(load_checkpoint(dir / "short.hfck"));
    std::ofstream(dir / "long.hfck", std::ios::binary) << bytes << "x";
    CHECK_THROWS(load_checkpoint(dir / "long.hfck"));
    bytes[0] = 'X';
    std::ofstream(dir / "magic.hfck", std::ios::binary) << bytes;
    CHECK_THROWS(load_checkpoint(dir / "magic.hfck"));
  }
}
