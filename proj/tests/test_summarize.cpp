#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "tsumm/rng.hpp"
#include "tsumm/summarize.hpp"

using namespace tsumm;

namespace {

// Exhaustive knapsack: every subset, best value, lexicographically smallest
// index set among optima.
std::pair<double, std::vector<int>> knapsack_brute(const std::vector<int>& lengths,
                                                   const std::vector<double>& values, int budget) {
  const int k = int(lengths.size());
  double best = 0.0;
  std::vector<int> best_set;
  for (int mask = 0; mask < (1 << k); ++mask) {
    int weight = 0;
    double value = 0.0;
    std::vector<int> set;
    for (int i = 0; i < k; ++i)
      if (mask & (1 << i)) {
        weight += lengths[size_t(i)];
        value += values[size_t(i)];
        set.push_back(i);
      }
    if (weight > budget) continue;
    if (value > best ||
        (value == best && std::lexicographical_compare(set.begin(), set.end(), best_set.begin(),
                                                       best_set.end()))) {
      best = value;
      best_set = set;
    }
  }
  return {best, best_set};
}

double direct_scatter(const std::vector<float>& f, int dim, int lo, int hi) {
  std::vector<double> mean(size_t(dim), 0.0);
  for (int i = lo; i < hi; ++i)
    for (int d = 0; d < dim; ++d) mean[size_t(d)] += double(f[size_t(i) * dim + d]);
  for (auto& m : mean) m /= double(hi - lo);
  double total = 0.0;
  for (int i = lo; i < hi; ++i)
    for (int d = 0; d < dim; ++d) {
      const double dv = double(f[size_t(i) * dim + d]) - mean[size_t(d)];
      total += dv * dv;
    }
  return total;
}

// Brute-force partition search with the same tie rule as the DP: fewer shots
// first, then lexicographically earliest boundaries, strict improvement only.
std::pair<double, std::vector<int>> kts_brute(const std::vector<float>& f, int n, int dim,
                                              int max_shots, double penalty) {
  double best = 1e300;
  std::vector<int> best_bounds;
  std::vector<int> bounds;
  const double logn = std::log(double(n));
  std::function<void(int, int)> rec = [&](int next, int remaining) {
    if (remaining == 0) {
      double cost = double(bounds.size()) * penalty * logn;
      int prev = 0;
      for (int b : bounds) {
        cost += direct_scatter(f, dim, prev, b);
        prev = b;
      }
      cost += direct_scatter(f, dim, prev, n);
      if (cost < best) {
        best = cost;
        best_bounds = bounds;
      }
      return;
    }
    for (int b = next; b < n; ++b) {
      bounds.push_back(b);
      rec(b + 1, remaining - 1);
      bounds.pop_back();
    }
  };
  for (int m = 1; m <= max_shots; ++m) rec(1, m - 1);
  return {best, best_bounds};
}

std::vector<float> random_features(Rng& rng, int n, int dim) {
  std::vector<float> f(size_t(n) * size_t(dim));
  for (auto& v : f) v = float(rng.uniform(-1.0, 1.0));
  return f;
}

}  // namespace

TEST_CASE("shot partition validation and shot access") {
  ShotPartition p;
  p.n_frames = 10;
  p.boundaries = {3, 7};
  p.validate();
  CHECK(p.shot_count() == 3);
  CHECK(p.shot(0) == std::pair<int, int>{0, 3});
  CHECK(p.shot(1) == std::pair<int, int>{3, 7});
  CHECK(p.shot(2) == std::pair<int, int>{7, 10});
  p.boundaries = {7, 3};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.boundaries = {0};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("kts trivial structure") {
  // constant features with positive penalty: one segment
  std::vector<float> flat(size_t(20) * 4, 0.7f);
  auto p = kts_segment(flat, 20, 4, 6, 1.0);
  CHECK(p.boundaries.empty());

  // clean step signal: exactly one boundary at the step
  std::vector<float> step(size_t(20) * 2);
  for (int i = 0; i < 20; ++i)
    for (int d = 0; d < 2; ++d) step[size_t(i) * 2 + d] = i < 10 ? 0.f : 2.f;
  auto ps = kts_segment(step, 20, 2, 5, 0.5);
  CHECK(ps.boundaries == std::vector<int>{10});

  // max_shots = 1 caps regardless of content
  auto p1 = kts_segment(step, 20, 2, 1, 0.0);
  CHECK(p1.boundaries.empty());

  // single frame
  auto pn = kts_segment({1.f, 2.f}, 1, 2, 3, 1.0);
  CHECK(pn.boundaries.empty());
  CHECK(pn.n_frames == 1);
}

TEST_CASE("kts equals brute-force partition search") {
  Rng rng(314);
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 4 + int(rng.next_below(20));
    const int dim = 1 + int(rng.next_below(3));
    const int max_shots = 1 + int(rng.next_below(4));
    const double penalty = rng.uniform(0.0, 2.0);
    auto f = random_features(rng, n, dim);
    auto dp = kts_segment(f, n, dim, max_shots, penalty);
    auto [bcost, bbounds] = kts_brute(f, n, dim, max_shots, penalty);
    CHECK(dp.boundaries == bbounds);
    // recompute the DP partition's cost with the oracle's scatter
    double cost = double(dp.boundaries.size()) * penalty * std::log(double(n));
    int prev = 0;
    for (int b : dp.boundaries) {
      cost += direct_scatter(f, dim, prev, b);
      prev = b;
    }
    cost += direct_scatter(f, dim, prev, n);
    CHECK(cost == doctest::Approx(bcost).epsilon(1e-9));
  }
}

TEST_CASE("shot_scores") {
  ShotPartition whole;
  whole.n_frames = 4;
  auto global = shot_scores({0.f, 1.f, 1.f, 0.f}, whole);
  CHECK(global.size() == 1);
  CHECK(global[0] == doctest::Approx(0.5));

  ShotPartition split;
  split.n_frames = 4;
  split.boundaries = {2};
  auto two = shot_scores({1.f, 1.f, 0.f, 0.f}, split);
  CHECK(two[0] == doctest::Approx(1.0));
  CHECK(two[1] == doctest::Approx(0.0));

  Rng rng(555);
  std::vector<float> s(17);
  for (auto& v : s) v = float(rng.uniform());
  ShotPartition p;
  p.n_frames = 17;
  p.boundaries = {5, 9, 16};
  auto means = shot_scores(s, p);
  for (int shot = 0; shot < p.shot_count(); ++shot) {
    auto [lo, hi] = p.shot(shot);
    double acc = 0;
    for (int i = lo; i < hi; ++i) acc += double(s[size_t(i)]);
    CHECK(means[size_t(shot)] == doctest::Approx(acc / (hi - lo)).epsilon(1e-12));
  }
}

TEST_CASE("knapsack hand cases") {
  CHECK(knapsack_select({3, 4, 2}, {0.9, 0.5, 0.8}, 0).empty());
  CHECK(knapsack_select({3, 4, 2}, {0.9, 0.5, 0.8}, 5) == std::vector<int>{0, 2});
  CHECK(knapsack_select({3, 4, 2}, {0.9, 0.5, 0.8}, 9) == std::vector<int>{0, 1, 2});

  // lexicographic tie rules
  CHECK(knapsack_select({2, 2}, {0.5, 0.5}, 2) == std::vector<int>{0});      // earlier shot wins
  CHECK(knapsack_select({1, 1}, {0.5, 0.0}, 2) == std::vector<int>{0});      // drop worthless tail
  CHECK(knapsack_select({1, 1, 2}, {0.25, 0.25, 0.5}, 2) == std::vector<int>{0, 1});

  CHECK_THROWS_AS(knapsack_select({0}, {1.0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(knapsack_select({1}, {1.0, 2.0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(knapsack_select({1}, {1.0}, -1), std::invalid_argument);
}

TEST_CASE("knapsack equals subset enumeration (dyadic values)") {
  Rng rng(8080);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = 1 + int(rng.next_below(10));
    std::vector<int> lengths(static_cast<size_t>(k));
    std::vector<double> values(static_cast<size_t>(k));
    int total = 0;
    for (int i = 0; i < k; ++i) {
      lengths[size_t(i)] = 1 + int(rng.next_below(12));
      values[size_t(i)] = double(rng.next_below(1025)) / 1024.0;  // exactly representable
      total += lengths[size_t(i)];
    }
    const int budget = int(rng.next_below(uint64_t(total) + 2));
    auto got = knapsack_select(lengths, values, budget);
    auto [best, best_set] = knapsack_brute(lengths, values, budget);
    double got_value = 0;
    int got_weight = 0;
    for (int i : got) {
      got_value += values[size_t(i)];
      got_weight += lengths[size_t(i)];
    }
    CHECK(got_weight <= budget);
    CHECK(got_value == best);  // exact: dyadic sums
    CHECK(got == best_set);
  }
}

TEST_CASE("generate_summary") {
  Rng rng(4242);

  // tiny video: floor(0.15*6) = 0 -> empty summary, no crash
  {
    std::vector<float> scores = {0.9f, 0.1f, 0.5f, 0.3f, 0.8f, 0.2f};
    auto f = random_features(rng, 6, 3);
    auto sel = generate_summary(scores, f, 3);
    CHECK(sel.budget_frames == 0);
    CHECK(sel.selected.empty());
    for (auto m : sel.frame_mask) CHECK(m == 0);
  }

  // uniform scores over two equal shots: the earlier shot is selected
  {
    const int n = 20;
    std::vector<float> scores(size_t(n), 0.5f);
    std::vector<float> f(size_t(n) * 2);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) f[size_t(i) * 2 + d] = i < 10 ? 0.f : 2.f;
    SummaryOptions opts;
    opts.budget_fraction = 0.5;  // budget 10: exactly one of the two 10-frame shots
    opts.max_shots = 4;
    opts.penalty = 0.5;
    auto sel = generate_summary(scores, f, 2, opts);
    CHECK(sel.partition.boundaries == std::vector<int>{10});
    CHECK(sel.selected == std::vector<int>{0});
    for (int i = 0; i < n; ++i) CHECK(sel.frame_mask[size_t(i)] == (i < 10 ? 1 : 0));
  }

  // end-to-end toy case equals the manual pipeline composition
  {
    const int n = 40;
    std::vector<float> scores(static_cast<size_t>(n));
    for (auto& s : scores) s = float(rng.uniform());
    auto f = random_features(rng, n, 4);
    SummaryOptions opts;
    auto sel = generate_summary(scores, f, 4, opts);

    auto part = kts_segment(f, n, 4, (n + 9) / 10, opts.penalty);
    auto means = shot_scores(scores, part);
    std::vector<int> lengths;
    for (int s = 0; s < part.shot_count(); ++s) {
      auto [lo, hi] = part.shot(s);
      lengths.push_back(hi - lo);
    }
    const int budget = int(std::floor(0.15 * n + 1e-9));
    auto manual = knapsack_select(lengths, means, budget);
    CHECK(sel.partition.boundaries == part.boundaries);
    CHECK(sel.selected == manual);
    CHECK(sel.budget_frames == budget);

    // budget invariant and mask consistency
    int mask_count = 0;
    for (auto m : sel.frame_mask) mask_count += m;
    int sel_len = 0;
    for (int s : sel.selected) {
      auto [lo, hi] = sel.partition.shot(s);
      sel_len += hi - lo;
    }
    CHECK(mask_count == sel_len);
    CHECK(sel_len <= budget);
  }
}

TEST_CASE("selected frames never exceed the budget floor") {
  Rng rng(999);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 7 + int(rng.next_below(120));
    std::vector<float> scores(static_cast<size_t>(n));
    for (auto& s : scores) s = float(rng.uniform());
    auto f = random_features(rng, n, 3);
    auto sel = generate_summary(scores, f, 3);
    int frames = 0;
    for (auto m : sel.frame_mask) frames += m;
    CHECK(frames <= int(std::floor(0.15 * n + 1e-9)));
  }
}

TEST_CASE("positive rescaling of scores keeps a unique selection") {
  Rng rng(31337);
  int checked = 0;
  for (int rep = 0; rep < 20 && checked < 10; ++rep) {
    const int n = 30 + int(rng.next_below(40));
    std::vector<float> scores(static_cast<size_t>(n));
    for (auto& s : scores) s = float(rng.uniform(0.05, 0.95));
    auto f = random_features(rng, n, 3);
    auto base = generate_summary(scores, f, 3);
    if (base.selected.empty()) continue;
    std::vector<float> scaled(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) scaled[i] = 0.37f * scores[i];
    auto rescaled = generate_summary(scaled, f, 3);
    CHECK(rescaled.selected == base.selected);
    CHECK(rescaled.partition.boundaries == base.partition.boundaries);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("summary json") {
  std::vector<float> scores = {0.9f, 0.8f, 0.1f, 0.2f, 0.7f, 0.6f, 0.1f};
  Rng rng(1);
  auto f = random_features(rng, 7, 2);
  auto sel = generate_summary(scores, f, 2);
  auto json = sel.to_json("clip42");
  CHECK(json.find("\"clip42\"") != std::string::npos);
  CHECK(json.find("\"frame_mask\"") != std::string::npos);
  CHECK(json.find("\"budget_frames\"") != std::string::npos);
}
