#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "../common/oracles.hpp"
#include "headbench/ensemble.hpp"
#include "headbench/error.hpp"
#include "headbench/metrics.hpp"
#include "support.hpp"

using namespace headbench;
using test_support::brute_macro;
using test_support::brute_override;

namespace {

PredictionSet set_of(std::vector<std::string> ids, std::size_t C, std::vector<double> values, std::string source = "s") {
  PredictionSet s;
  s.ids = std::move(ids);
  s.logits = Matrix(s.ids.size(), C);
  s.logits.data = std::move(values);
  s.source = std::move(source);
  return s;
}

// One-hot-ish logits whose argmax is the given label.
PredictionSet from_labels(const std::vector<ClassId>& labels, std::size_t C, double hot = 2.0) {
  std::vector<std::string> ids;
  std::vector<double> values;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ids.push_back("s" + std::to_string(i));
    for (std::size_t c = 0; c < C; ++c) values.push_back(static_cast<ClassId>(c) == labels[i] ? hot : 0.0);
  }
  return set_of(ids, C, values);
}

std::vector<std::string> ids_for(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

}  // namespace

TEST_CASE("logit averaging") {
  const auto a = set_of({"x"}, 2, {0.0, 2.0}, "a");
  const auto b = set_of({"x"}, 2, {2.0, 0.0}, "b");
  const std::vector<PredictionSet> sets{a, b};
  const std::vector<double> equal{1.0, 1.0};
  const auto avg = average_logits(sets, equal);
  CHECK(avg.logits.data == std::vector<double>{1.0, 1.0});

  const std::vector<double> skew{3.0, 1.0};
  CHECK(average_logits(sets, skew).logits.data == std::vector<double>{0.5, 1.5});

  const std::vector<PredictionSet> one{a};
  const std::vector<double> w{0.7};
  CHECK(average_logits(one, w).logits.data == a.logits.data);

  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(average_logits(sets, zero), ValidationError);
  const std::vector<double> negative{1.0, -1.0};
  CHECK_THROWS_AS(average_logits(sets, negative), ValidationError);
  const std::vector<PredictionSet> misaligned{a, set_of({"y"}, 2, {0.0, 0.0})};
  CHECK_THROWS_AS(average_logits(misaligned, equal), ValidationError);
}

TEST_CASE("jitter views") {
  Matrix f(2, 3);
  f.data = {1, 2, 3, 4, 5, 6};
  const auto same = jitter_views(f, 3, 0.0, 1);
  REQUIRE(same.size() == 3);
  for (const auto& v : same) CHECK(v.data == f.data);
  CHECK(jitter_views(f, 2, 0.1, 5)[1].data == jitter_views(f, 2, 0.1, 5)[1].data);
  CHECK(jitter_views(f, 2, 0.1, 5)[0].data != f.data);
  CHECK_THROWS_AS(jitter_views(f, 0, 0.1, 5), ValidationError);
}

TEST_CASE("gated override rule") {
  const auto reg = ClassRegistry();
  const auto pairs = default_pairs(reg);
  const ClassId BNE = reg.index_of("BNE"), SNE = reg.index_of("SNE"), LY = reg.index_of("LY"),
                BL = reg.index_of("BL"), MO = reg.index_of("MO"), VLY = reg.index_of("VLY");
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  const std::vector<ClassId> primary{BNE, SNE, BNE, LY, MO};
  const std::vector<ClassId> a1{SNE, BNE, SNE, BL, VLY};
  const std::vector<ClassId> a2{SNE, BNE, BL, BL, LY};
  const auto r = gated_override(primary, a1, a2, ids, pairs);
  CHECK(r.labels[0] == SNE);  // agreed and in the pair set
  CHECK(r.labels[1] == SNE);  // pairs are ordered
  CHECK(r.labels[2] == BNE);  // advisors disagree
  CHECK(r.labels[3] == BL);
  CHECK(r.labels[4] == MO);
  REQUIRE(r.log.records.size() == 2);
  CHECK(r.log.records[0].id == "a");
  CHECK(r.log.records[1].id == "d");
  CHECK(r.log.total == 5);
  CHECK(r.log.rate() == doctest::Approx(0.4));

  const auto twice = gated_override(r.labels, a1, a2, ids, pairs);
  CHECK(twice.labels == r.labels);

  const std::vector<ClassId> shorter{BNE};
  CHECK_THROWS_AS(gated_override(shorter, a1, a2, ids, pairs), ValidationError);
}

TEST_CASE("gated override matches an independent rule on random draws") {
  const auto reg = ClassRegistry();
  const auto pairs = default_pairs(reg);
  std::vector<test_support::PairRule> rules;
  for (const auto& p : pairs.pairs) rules.push_back({p.from, p.to});
  std::mt19937_64 rng(17);
  // Bias draws toward the pair classes so the gate fires often.
  std::vector<ClassId> pool;
  for (const auto& p : pairs.pairs) {
    pool.push_back(p.from);
    pool.push_back(p.to);
  }
  for (int c = 0; c < reg.size(); ++c) pool.push_back(c);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  long fired = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 40;
    std::vector<ClassId> p(n), x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = pool[pick(rng)];
      x[i] = pool[pick(rng)];
      z[i] = rng() % 2 ? x[i] : pool[pick(rng)];
    }
    const auto r = gated_override(p, x, z, ids_for(n), pairs);
    const auto expected = brute_override(p, x, z, rules);
    CHECK(r.labels == expected);
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < n; ++i) diffs += r.labels[i] != p[i];
    CHECK(diffs == r.log.records.size());
    fired += static_cast<long>(diffs);
  }
  CHECK(fired > 0);
}

TEST_CASE("pair discovery") {
  SUBCASE("identical advisors and primary give no pairs") {
    const std::vector<ClassId> p{0, 1, 2, 1}, y{0, 0, 2, 1};
    CHECK(discover_pairs(p, p, p, y, 3).pairs.empty());
  }
  SUBCASE("override fixing two errors is kept") {
    // primary says 0 where the truth is 1 on two samples; both advisors say 1.
    const std::vector<ClassId> y{1, 1, 0, 0, 1, 2};
    const std::vector<ClassId> p{0, 0, 0, 0, 1, 2};
    const std::vector<ClassId> a{1, 1, 0, 0, 1, 2};
    const auto ps = discover_pairs(p, a, a, y, 3);
    REQUIRE(ps.pairs.size() == 1);
    CHECK(ps.pairs[0].from == 0);
    CHECK(ps.pairs[0].to == 1);
    CHECK(ps.pairs[0].support == 2);
    std::vector<ClassId> fixed = p;
    fixed[0] = fixed[1] = 1;
    CHECK(ps.pairs[0].delta == doctest::Approx(brute_macro(y, fixed, 3) - brute_macro(y, p, 3)).epsilon(1e-12));
    CHECK(ps.pairs[0].delta > 0.0);
  }
  SUBCASE("harmful or unsupported pairs are dropped; thresholds apply") {
    const std::vector<ClassId> y{0, 0, 1, 1};
    const std::vector<ClassId> p{0, 0, 1, 1};
    const std::vector<ClassId> a{1, 0, 1, 1};
    CHECK(discover_pairs(p, a, a, y, 2).pairs.empty());
    const std::vector<ClassId> y2{1, 1, 0};
    const std::vector<ClassId> p2{0, 1, 0};
    const std::vector<ClassId> a2{1, 1, 0};
    CHECK(discover_pairs(p2, a2, a2, y2, 2).pairs.size() == 1);
    CHECK(discover_pairs(p2, a2, a2, y2, 2, {0.0, 2}).pairs.empty());
    CHECK(discover_pairs(p2, a2, a2, y2, 2, {0.9, 1}).pairs.empty());
  }
  SUBCASE("exhaustive recomputation on random fixtures") {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 100; ++t) {
      const int C = 4;
      const std::size_t n = 50;
      std::uniform_int_distribution<int> u(0, C - 1);
      std::vector<ClassId> y(n), p(n), a1(n), a2(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = u(rng);
        p[i] = rng() % 2 ? y[i] : u(rng);
        a1[i] = rng() % 2 ? y[i] : u(rng);
        a2[i] = rng() % 3 ? a1[i] : u(rng);
      }
      const double base = brute_macro(y, p, C);
      std::vector<ConfusionPair> expected;
      for (ClassId f = 0; f < C; ++f)
        for (ClassId to = 0; to < C; ++to) {
          if (f == to) continue;
          const auto applied = brute_override(p, a1, a2, {{f, to}});
          long support = 0;
          for (std::size_t i = 0; i < n; ++i) support += applied[i] != p[i];
          const double delta = brute_macro(y, applied, C) - base;
          if (support >= 1 && delta > 0.0) expected.push_back({f, to, delta, support});
        }
      const auto got = discover_pairs(p, a1, a2, y, C);
      REQUIRE(got.pairs.size() == expected.size());
      for (const auto& e : expected) {
        const auto it = std::find_if(got.pairs.begin(), got.pairs.end(),
                                     [&](const ConfusionPair& g) { return g.from == e.from && g.to == e.to; });
        REQUIRE(it != got.pairs.end());
        CHECK(it->support == e.support);
        CHECK(it->delta == doctest::Approx(e.delta).epsilon(1e-12));
      }
      for (std::size_t k = 1; k < got.pairs.size(); ++k) CHECK(got.pairs[k - 1].delta >= got.pairs[k].delta);
    }
  }
}

TEST_CASE("per-pair gains need not add up") {
  // Two pairs, each positive alone, whose joint application lowers MacroF1.
  const std::vector<ClassId> y{2, 1, 0, 2, 0, 2};
  const std::vector<ClassId> p{1, 1, 0, 0, 0, 0};
  const std::vector<ClassId> a{0, 2, 2, 1, 2, 1};
  const auto ps = discover_pairs(p, a, a, y, 3);
  REQUIRE(ps.pairs.size() == 2);
  CHECK(ps.pairs[0].from == 1);
  CHECK(ps.pairs[0].to == 0);
  CHECK(ps.pairs[1].from == 0);
  CHECK(ps.pairs[1].to == 1);
  const auto joint = gated_override(p, a, a, ids_for(y.size()), ps);
  CHECK(brute_macro(y, p, 3) == doctest::Approx(4.0 / 9.0));
  CHECK(brute_macro(y, joint.labels, 3) == doctest::Approx(13.0 / 30.0));
}

TEST_CASE("head-diverse pipeline") {
  const auto reg = ClassRegistry();
  const auto pairs = default_pairs(reg);
  const auto C = static_cast<std::size_t>(reg.size());
  const ClassId BNE = reg.index_of("BNE"), SNE = reg.index_of("SNE"), MY = reg.index_of("MY");
  SUBCASE("identical sets never override") {
    const auto s = from_labels({BNE, SNE, MY}, C);
    const auto r = head_diverse_pipeline(s, s, s, pairs);
    CHECK(r.log.records.empty());
    CHECK(r.override_rate == 0.0);
    CHECK(r.final.logits.data == s.logits.data);
  }
  SUBCASE("overridden rows carry advisor logits and labels match the gate") {
    const auto primary = from_labels({BNE, SNE, MY}, C);
    const auto cosine = from_labels({SNE, BNE, MY}, C, 5.0);
    const auto decoupled = from_labels({SNE, BNE, SNE}, C);
    const auto r = head_diverse_pipeline(primary, cosine, decoupled, pairs);
    const auto g = gated_override(primary, cosine, decoupled, pairs);
    CHECK(r.labels == g.labels);
    CHECK(r.final.top1() == r.labels);
    CHECK(r.labels == std::vector<ClassId>{SNE, SNE, MY});
    CHECK(r.override_rate == doctest::Approx(1.0 / 3.0));
    const auto row0 = r.final.logits.row(0);
    CHECK(std::vector<double>(row0.begin(), row0.end()) ==
          std::vector<double>(cosine.logits.row(0).begin(), cosine.logits.row(0).end()));
  }
}

TEST_CASE("ensemble files") {
  test_support::TempDir dir("ensemble");
  const auto reg = ClassRegistry();
  const auto C = static_cast<std::size_t>(reg.size());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 10.0);
  std::vector<double> values(4 * C);
  for (auto& v : values) v = normal(rng);
  values[0] = 0.1;
  values[1] = -1e-300;
  values[2] = 1.0 / 3.0;
  const auto set = set_of({"a", "b", "c", "d"}, C, values);

  write_logits_csv(dir / "l.csv", set, reg);
  const auto back = read_logits_csv(dir / "l.csv", reg);
  CHECK(back.ids == set.ids);
  CHECK(back.logits.data == set.logits.data);
  write_logits_csv(dir / "l2.csv", back, reg);
  CHECK(test_support::slurp(dir / "l.csv") == test_support::slurp(dir / "l2.csv"));

  const std::vector<ClassId> pred{0, 1, 2, 3}, truth{0, 2, 2, 12};
  write_predictions_csv(dir / "p.csv", set.ids, pred, reg, std::span<const ClassId>(truth));
  const auto table = read_predictions_csv(dir / "p.csv", reg);
  CHECK(table.ids == set.ids);
  CHECK(table.predicted == pred);
  CHECK(table.truth == truth);
  write_predictions_csv(dir / "q.csv", set.ids, pred, reg);
  CHECK(read_predictions_csv(dir / "q.csv", reg).truth.empty());

  const auto pairs = default_pairs(reg);
  const auto j = to_json(pairs, reg);
  CHECK(j[0]["from"] == "BNE");
  CHECK(j[0]["to"] == "SNE");
  CHECK(pairs_from_json(j, reg) == pairs);
  auto dup = j;
  dup.push_back(j[0]);
  CHECK_THROWS_AS(pairs_from_json(dup, reg), ValidationError);

  OverrideLog log;
  log.records.push_back({"a", reg.index_of("BNE"), reg.index_of("SNE")});
  write_override_log(dir / "o.jsonl", log, reg);
  CHECK(test_support::slurp(dir / "o.jsonl") == "{\"from\":\"BNE\",\"id\":\"a\",\"pair\":\"BNE->SNE\",\"to\":\"SNE\"}\n");

  std::ofstream(dir / "bad.csv") << "id,A,B\nx,1,2\n";
  CHECK_THROWS_AS(read_logits_csv(dir / "bad.csv", reg), IoError);
  CHECK_THROWS_AS(read_logits_csv(dir / "missing.csv", reg), IoError);
}
