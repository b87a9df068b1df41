#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "../common/oracles.hpp"
#include "headbench/error.hpp"
#include "headbench/metrics.hpp"

using namespace headbench;

namespace {

ConfusionMatrix matrix2(long a, long b, long c, long d) {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = a;
  cm.at(0, 1) = b;
  cm.at(1, 0) = c;
  cm.at(1, 1) = d;
  return cm;
}

}  // namespace

TEST_CASE("confusion matrix") {
  const std::vector<ClassId> t{0, 0, 1}, p{0, 1, 1};
  CHECK(confusion(t, p, 2) == matrix2(1, 1, 0, 1));
  CHECK(confusion(t, t, 2) == matrix2(2, 0, 0, 1));
  const std::vector<ClassId> none;
  CHECK(confusion(none, none, 3).total() == 0);
  const std::vector<ClassId> shorter{0};
  CHECK_THROWS_AS(confusion(t, shorter, 2), ValidationError);
  const std::vector<ClassId> bad{0, 2, 1};
  CHECK_THROWS_AS(confusion(t, bad, 2), ValidationError);
}

TEST_CASE("per-class scores and macro F1") {
  const auto cm = matrix2(1, 1, 0, 2);
  const auto s = per_class_prf(cm);
  CHECK(s[0].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s[1].f1 == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(macro_f1(cm) == doctest::Approx(0.73333).epsilon(1e-5));

  ConfusionMatrix absent(3);
  absent.at(0, 0) = 4;
  absent.at(1, 1) = 2;
  const auto a = per_class_prf(absent);
  CHECK(a[2].precision == 0.0);
  CHECK(a[2].recall == 0.0);
  CHECK(a[2].f1 == 0.0);
  CHECK(a[0].f1 == 1.0);
  CHECK(a[1].f1 == 1.0);
}

TEST_CASE("tail metrics") {
  CHECK(tail_composite(0.8, 0.6) == doctest::Approx(0.7).epsilon(1e-15));
  const auto cm = matrix2(3, 1, 2, 5);
  const std::vector<ClassId> all{0, 1};
  CHECK(tail_macro_f1(cm, all) == macro_f1(cm));
  const std::vector<ClassId> none;
  CHECK_THROWS_AS(tail_macro_f1(cm, none), ValidationError);
  const std::vector<ClassId> out_of_range{5};
  CHECK_THROWS_AS(tail_macro_f1(cm, out_of_range), ValidationError);
}

TEST_CASE("metrics agree with a brute-force recomputation") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> label(0, 12);
  ClassRegistry registry;
  const auto tail = resolve_present(registry, wbc_tail_names());
  for (int draw = 0; draw < 200; ++draw) {
    std::vector<ClassId> t(200), p(200);
    for (auto& v : t) v = label(rng);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng() % 3 == 0 ? t[i] : label(rng);
    const auto cm = confusion(t, p, 13);
    const auto f1 = test_support::brute_f1(t, p, 13);
    const auto scores = per_class_prf(cm);
    for (std::size_t c = 0; c < 13; ++c) CHECK(scores[c].f1 == f1[c]);
    CHECK(macro_f1(cm) == test_support::brute_macro(t, p, 13));
    CHECK(tail_macro_f1(cm, tail) == test_support::brute_mean(f1, tail));
    const auto report = evaluate(cm, registry);
    CHECK(report.tail_composite == (report.macro_f1 + report.tail_macro_f1) / 2.0);
    for (int c = 0; c < 13; ++c) {
      CHECK(cm.row_sum(c) == std::count(t.begin(), t.end(), c));
      CHECK(cm.col_sum(c) == std::count(p.begin(), p.end(), c));
    }
    // Order of samples does not matter.
    std::vector<std::size_t> perm(t.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ClassId> ts, ps;
    for (auto i : perm) {
      ts.push_back(t[i]);
      ps.push_back(p[i]);
    }
    CHECK(confusion(ts, ps, 13) == cm);
  }
}

TEST_CASE("report export") {
  ClassRegistry registry({"A", "B"});
  const auto cm = matrix2(1, 1, 0, 2);
  const std::vector<ClassId> tail{1};
  const auto j = to_json(evaluate(cm, registry, tail));
  CHECK(j["macro_f1"].get<double>() == doctest::Approx(0.733333333));
  CHECK(j["tail_macro_f1"].get<double>() == doctest::Approx(0.8));
  CHECK(j["per_class"]["A"]["f1"].get<double>() == doctest::Approx(2.0 / 3.0));
  CHECK(j["tail_set"] == nlohmann::json::array({"B"}));
  std::ostringstream os;
  write_confusion_csv(os, cm, registry);
  CHECK(os.str() == "true\\pred,A,B\nA,1,1\nB,0,2\n");
}

TEST_CASE("boundary report") {
  const ClassId a = 0, b = 1;
  SUBCASE("true [a,a,b], pred [a,b,b]") {
    const std::vector<ClassId> t{a, a, b}, p{a, b, b};
    const auto r = boundary_report(t, p, a, b);
    CHECK(r.f1_a == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.f1_b == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.mean_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.a_as_b == 1);
    CHECK(r.b_as_a == 0);
  }
  SUBCASE("perfect subset and full swap") {
    const std::vector<ClassId> t{a, b, 2, b}, p{a, b, 0, b};
    CHECK(boundary_report(t, p, a, b).mean_f1 == 1.0);
    const std::vector<ClassId> ts{a, b}, ps{b, a};
    const auto r = boundary_report(ts, ps, a, b);
    CHECK(r.f1_a == 0.0);
    CHECK(r.f1_b == 0.0);
  }
  SUBCASE("out-of-pair predictions count as errors") {
    const std::vector<ClassId> t{a, a, b}, p{a, 2, b};
    const auto r = boundary_report(t, p, a, b);
    CHECK(r.f1_a == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1_b == 1.0);
  }
  SUBCASE("empty subset and a == b are errors") {
    const std::vector<ClassId> t{2, 2}, p{2, 2};
    CHECK_THROWS_AS(boundary_report(t, p, a, b), ValidationError);
    CHECK_THROWS_AS(boundary_report(t, p, a, a), ValidationError);
  }
  SUBCASE("default pairs") {
    ClassRegistry r;
    const auto pairs = default_boundary_pairs(r);
    REQUIRE(pairs.size() == 3);
    CHECK(r.name(pairs[0].first) == "BNE");
    CHECK(r.name(pairs[0].second) == "SNE");
    CHECK(r.name(pairs[2].first) == "PMY");
  }
}
