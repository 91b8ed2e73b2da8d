#include <doctest.h>

#include <random>

#include "loco/pseudo.hpp"

using namespace loco;

namespace {

ProbMap<double> random_probs(std::mt19937_64& rng, Index k, Index n, Index h, Index w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProbMap<double> p(k, n, h, w);
  for (Index c = 0; c < p.pixels(); ++c) {
    double s = 0.0;
    for (Index j = 0; j < k; ++j) s += p.data(j, c) = std::pow(u(rng), 3.0);
    p.data.col(c) /= s;
  }
  return p;
}

// Independent per-pixel rule: scan for the first maximum, compare to its threshold.
Label oracle_pixel(const std::vector<double>& probs, const std::vector<double>& t) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c)
    if (probs[c] > probs[best]) best = c;
  return probs[best] >= t[best] ? Label(best) : kIgnore;
}

}  // namespace

TEST_CASE("initial state uses t_init_global and 1/K locals") {
  const CdfConfig cfg{0.999, 0.25, 0.85, 4};
  const auto s = ThresholdState::initial(cfg);
  CHECK(s.t_global == 0.85);
  CHECK(s.step == 0);
  for (double v : s.t_local) CHECK(v == 0.25);
}

TEST_CASE("class confidence averages max-probabilities per argmax class") {
  ProbMap<double> p(3, 1, 1, 3);
  p.data.col(0) << 0.05, 0.9, 0.05;
  p.data.col(1) << 0.1, 0.8, 0.1;
  p.data.col(2) << 0.7, 0.2, 0.1;
  const auto c = class_confidence(p);
  CHECK(*c.local[1] == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(*c.local[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK_FALSE(c.local[2].has_value());
  CHECK(*c.global == doctest::Approx(0.775).epsilon(1e-12));

  ProbMap<double> empty(3, 0, 4, 4);
  CHECK_FALSE(class_confidence(empty).global.has_value());
}

TEST_CASE("threshold EMA degenerate momenta and hand case") {
  ClassConfidence conf;
  conf.global = 0.95;
  conf.local = {0.9, std::nullopt, 0.6};
  ThresholdState s;
  s.t_global = 0.85;
  s.t_local = {0.5, 0.4, 0.3};

  const auto keep = update_thresholds(s, conf, {1.0, 0.25, 0.85, 3});
  CHECK(keep.t_global == s.t_global);
  CHECK(keep.t_local == s.t_local);
  CHECK(keep.step == 1);

  const auto copy = update_thresholds(s, conf, {0.0, 0.25, 0.85, 3});
  CHECK(copy.t_global == 0.95);
  CHECK(copy.t_local[0] == 0.9);
  CHECK(copy.t_local[1] == 0.4);
  CHECK(copy.t_local[2] == 0.6);

  const auto hand = update_thresholds(s, conf, {0.9, 0.25, 0.85, 3});
  CHECK(hand.t_global == doctest::Approx(0.86).epsilon(1e-12));
}

TEST_CASE("global threshold converges geometrically to a constant confidence") {
  const CdfConfig cfg{0.9, 0.25, 0.5, 2};
  auto s = ThresholdState::initial(cfg);
  ClassConfidence conf;
  conf.global = 0.8;
  conf.local = {0.8, 0.8};
  for (int t = 1; t <= 50; ++t) {
    s = update_thresholds(s, conf, cfg);
    CHECK(s.t_global - 0.8 == doctest::Approx((0.5 - 0.8) * std::pow(0.9, t)).epsilon(1e-9));
  }
}

TEST_CASE("effective threshold algebra") {
  ThresholdState s;
  s.t_global = 0.8;
  s.t_local = {0.9, 0.45};
  const auto t = effective_threshold(s, {0.999, 0.25, 0.85, 2});
  CHECK(std::abs(t[0] - 0.8) < 1e-9);
  CHECK(std::abs(t[1] - 0.8 * std::pow(0.5, 0.25)) < 1e-9);
  CHECK(std::abs(t[1] - 0.6727) < 1e-4);

  for (double v : effective_threshold(s, {0.999, 0.0, 0.85, 2})) CHECK(v == 0.8);
  s.t_local = {0.3, 0.3};
  for (double v : effective_threshold(s, {0.999, 0.25, 0.85, 2})) CHECK(v == 0.8);
  s.t_local = {0.0, 0.0};
  CHECK_THROWS_AS(effective_threshold(s, {0.999, 0.25, 0.85, 2}), DegenerateState);
}

TEST_CASE("effective threshold is dominated by the global value") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    ThresholdState s;
    s.t_global = u(rng);
    const Index k = 2 + trial % 4;
    for (Index c = 0; c < k; ++c) s.t_local.push_back(u(rng));
    const double gamma = u(rng);
    const auto t = effective_threshold(s, {0.999, gamma, 0.85, k});
    const auto top = std::max_element(s.t_local.begin(), s.t_local.end()) - s.t_local.begin();
    for (Index c = 0; c < k; ++c) CHECK(t[std::size_t(c)] <= s.t_global);
    CHECK(t[std::size_t(top)] == s.t_global);
  }
}

TEST_CASE("filter examples") {
  ProbMap<double> p(3, 1, 1, 2);
  p.data.col(0) << 0.97, 0.02, 0.01;
  p.data.col(1) << 1.0 / 3, 1.0 / 3, 1.0 / 3;
  const auto f = filter_pseudo_labels(p, {0.9, 0.9, 0.9});
  CHECK(f.values(0) == 0);
  CHECK(f.values(1) == kIgnore);
  const auto all = filter_pseudo_labels(p, {0.0, 0.0, 0.0});
  CHECK((all.values != kIgnore).all());
  CHECK(all.values(1) == 0);
  CHECK_THROWS_AS(filter_pseudo_labels(p, {0.5, 0.5}), ShapeError);
}

TEST_CASE("filter matches a per-pixel brute-force oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index k = 2 + trial % 3;
    const Index h = 1 + trial % 16, w = 16 - trial % 7;
    auto p = random_probs(rng, k, 2, h, w);
    // duplicate some columns' maxima to exercise ties
    for (Index c = 0; c < p.pixels(); c += 7) p.data(1, c) = p.data(0, c);
    std::vector<double> t(static_cast<std::size_t>(k));
    for (auto& v : t) v = u(rng);
    const auto f = filter_pseudo_labels(p, t);
    Index mismatches = 0;
    for (Index c = 0; c < p.pixels(); ++c) {
      std::vector<double> col;
      for (Index j = 0; j < k; ++j) col.push_back(p.data(j, c));
      mismatches += f.values(c) != oracle_pixel(col, t);
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("raising a kept pixel's max-probability keeps it") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_probs(rng, 3, 1, 8, 8);
    const std::vector<double> t{0.5, 0.6, 0.4};
    const auto before = filter_pseudo_labels(p, t);
    auto q = p;
    for (Index c = 0; c < q.pixels(); ++c) {
      Index best;
      q.data.col(c).maxCoeff(&best);
      // move half the remaining mass onto the argmax class
      const double gain = 0.5 * (1.0 - q.data(best, c));
      for (Index j = 0; j < 3; ++j)
        q.data(j, c) = j == best ? q.data(j, c) + gain : q.data(j, c) * 0.5;
    }
    const auto after = filter_pseudo_labels(q, t);
    for (Index c = 0; c < p.pixels(); ++c)
      if (before.values(c) != kIgnore) CHECK(after.values(c) == before.values(c));
  }
}

TEST_CASE("utilization counting") {
  PseudoLabelMap pseudo(1, 1, 6, kIgnore);
  LabelMap ref(1, 1, 6, 1);
  ref.values(4) = 0;
  ref.values(5) = kIgnore;
  pseudo.values(0) = 1;
  pseudo.values(1) = 1;
  pseudo.values(2) = 1;
  const auto u = utilization(pseudo, ref, 3);
  CHECK(*u[1] == 0.75);
  CHECK(*u[0] == 0.0);
  CHECK_FALSE(u[2].has_value());

  UtilizationCounter counter(3);
  counter.add(pseudo, ref);
  counter.add(pseudo, ref);
  CHECK(*counter.rates()[1] == 0.75);

  std::mt19937_64 rng(2);
  const auto p = random_probs(rng, 3, 2, 8, 8);
  const auto am = argmax(p);
  for (auto v : utilization(filter_pseudo_labels(p, {0.0, 0.0, 0.0}), am, 3))
    if (v) CHECK(*v == 1.0);
  const double over = 1.0 + 1e-9;
  for (auto v : utilization(filter_pseudo_labels(p, {over, over, over}), am, 3))
    if (v) CHECK(*v == 0.0);
}
