#include "tsumm/summarize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "tsumm/tensor.hpp"

namespace tsumm {

void ShotPartition::validate() const {
  check_arg(n_frames >= 1, "partition: empty");
  int prev = 0;
  for (int b : boundaries) {
    check_arg(b > prev && b < n_frames, "partition: boundaries must be sorted inside (0, N)");
    prev = b;
  }
}

double kts_segment_scatter(const std::vector<float>& features, int dim, int start, int end) {
  double sq = 0.0;
  std::vector<double> mean(size_t(dim), 0.0);
  for (int i = start; i < end; ++i) {
    const float* row = features.data() + size_t(i) * dim;
    for (int d = 0; d < dim; ++d) {
      sq += double(row[d]) * double(row[d]);
      mean[size_t(d)] += double(row[d]);
    }
  }
  double norm2 = 0.0;
  for (int d = 0; d < dim; ++d) norm2 += mean[size_t(d)] * mean[size_t(d)];
  return sq - norm2 / double(end - start);
}

ShotPartition kts_segment(const std::vector<float>& features, int n_frames, int dim,
                          int max_shots, double penalty) {
  check_arg(n_frames >= 1, "kts: empty sequence");
  check_arg(dim >= 1, "kts: feature dim must be positive");
  check_arg(int(features.size()) == n_frames * dim, "kts: feature extent mismatch");
  check_arg(max_shots >= 1, "kts: max_shots must be >= 1");
  max_shots = std::min(max_shots, n_frames);

  // Prefix sums make every segment scatter O(D).
  std::vector<double> sq_prefix(size_t(n_frames) + 1, 0.0);
  std::vector<double> vec_prefix((size_t(n_frames) + 1) * size_t(dim), 0.0);
  for (int i = 0; i < n_frames; ++i) {
    const float* row = features.data() + size_t(i) * dim;
    double sq = 0.0;
    double* prev = vec_prefix.data() + size_t(i) * dim;
    double* next = vec_prefix.data() + (size_t(i) + 1) * dim;
    for (int d = 0; d < dim; ++d) {
      sq += double(row[d]) * double(row[d]);
      next[d] = prev[d] + double(row[d]);
    }
    sq_prefix[size_t(i) + 1] = sq_prefix[size_t(i)] + sq;
  }
  auto scatter = [&](int s, int e) {
    double norm2 = 0.0;
    const double* ps = vec_prefix.data() + size_t(s) * dim;
    const double* pe = vec_prefix.data() + size_t(e) * dim;
    for (int d = 0; d < dim; ++d) {
      const double v = pe[d] - ps[d];
      norm2 += v * v;
    }
    return (sq_prefix[size_t(e)] - sq_prefix[size_t(s)]) - norm2 / double(e - s);
  };

  const double kInf = std::numeric_limits<double>::infinity();
  const int n = n_frames;
  // dp[m][t]: best cost splitting [0, t) into m segments; first minimum kept,
  // so ties prefer the earliest split.
  std::vector<std::vector<double>> dp(size_t(max_shots) + 1,
                                      std::vector<double>(size_t(n) + 1, kInf));
  std::vector<std::vector<int>> back(size_t(max_shots) + 1, std::vector<int>(size_t(n) + 1, -1));
  for (int t = 1; t <= n; ++t) dp[1][size_t(t)] = scatter(0, t);
  for (int m = 2; m <= max_shots; ++m) {
    for (int t = m; t <= n; ++t) {
      for (int s = m - 1; s < t; ++s) {
        if (dp[size_t(m) - 1][size_t(s)] == kInf) continue;
        const double cost = dp[size_t(m) - 1][size_t(s)] + scatter(s, t);
        if (cost < dp[size_t(m)][size_t(t)]) {
          dp[size_t(m)][size_t(t)] = cost;
          back[size_t(m)][size_t(t)] = s;
        }
      }
    }
  }

  const double log_n = std::log(double(n));
  int best_m = 1;
  double best_cost = dp[1][size_t(n)];
  for (int m = 2; m <= max_shots; ++m) {
    if (dp[size_t(m)][size_t(n)] == kInf) continue;
    const double cost = dp[size_t(m)][size_t(n)] + penalty * double(m - 1) * log_n;
    if (cost < best_cost) {
      best_cost = cost;
      best_m = m;
    }
  }

  ShotPartition part;
  part.n_frames = n;
  int t = n;
  for (int m = best_m; m >= 2; --m) {
    const int s = back[size_t(m)][size_t(t)];
    part.boundaries.push_back(s);
    t = s;
  }
  std::reverse(part.boundaries.begin(), part.boundaries.end());
  part.validate();
  return part;
}

std::vector<double> shot_scores(const std::vector<float>& scores, const ShotPartition& partition) {
  partition.validate();
  check_arg(int(scores.size()) == partition.n_frames, "shot_scores: score length mismatch");
  std::vector<double> means;
  means.reserve(size_t(partition.shot_count()));
  for (int s = 0; s < partition.shot_count(); ++s) {
    auto [lo, hi] = partition.shot(s);
    double acc = 0.0;
    for (int i = lo; i < hi; ++i) acc += double(scores[size_t(i)]);
    means.push_back(acc / double(hi - lo));
  }
  return means;
}

std::vector<int> knapsack_select(const std::vector<int>& lengths, const std::vector<double>& values,
                                 int budget) {
  check_arg(lengths.size() == values.size(), "knapsack: lengths/values size mismatch");
  check_arg(budget >= 0, "knapsack: negative budget");
  const int k = int(lengths.size());
  for (int l : lengths) check_arg(l > 0, "knapsack: lengths must be positive integers");
  for (double v : values) check_arg(v >= 0.0, "knapsack: values must be nonnegative");

  // opt[i][w]: best achievable value using items i..k-1 under capacity w.
  std::vector<std::vector<double>> opt(size_t(k) + 1, std::vector<double>(size_t(budget) + 1, 0.0));
  for (int i = k - 1; i >= 0; --i) {
    for (int w = 0; w <= budget; ++w) {
      double best = opt[size_t(i) + 1][size_t(w)];
      if (lengths[size_t(i)] <= w) {
        const double with = values[size_t(i)] + opt[size_t(i) + 1][size_t(w - lengths[size_t(i)])];
        if (with > best) best = with;
      }
      opt[size_t(i)][size_t(w)] = best;
    }
  }

  // Lexicographically smallest optimal index set: on a value tie, include the
  // item when the remaining optimum is positive (any optimal completion is
  // then nonempty and starts later), and skip it when the remaining optimum
  // is zero (the empty completion is smaller than any set containing i).
  std::vector<int> chosen;
  int w = budget;
  for (int i = 0; i < k; ++i) {
    const double skip = opt[size_t(i) + 1][size_t(w)];
    if (lengths[size_t(i)] > w) continue;
    const double take = values[size_t(i)] + opt[size_t(i) + 1][size_t(w - lengths[size_t(i)])];
    if (take > skip || (take == skip && skip > 0.0)) {
      chosen.push_back(i);
      w -= lengths[size_t(i)];
    }
  }
  return chosen;
}

SummarySelection generate_summary(const std::vector<float>& scores,
                                  const std::vector<float>& features, int dim,
                                  const SummaryOptions& opts) {
  const int n = int(scores.size());
  check_arg(n >= 1, "summary: empty video");
  check_arg(int(features.size()) == n * dim, "summary: scores/features misaligned");
  const int max_shots = opts.max_shots > 0 ? opts.max_shots : (n + 9) / 10;

  SummarySelection sel;
  sel.partition = kts_segment(features, n, dim, max_shots, opts.penalty);
  sel.shot_means = shot_scores(scores, sel.partition);
  sel.budget_frames = int(std::floor(opts.budget_fraction * double(n) + 1e-9));

  std::vector<int> lengths;
  for (int s = 0; s < sel.partition.shot_count(); ++s) {
    auto [lo, hi] = sel.partition.shot(s);
    lengths.push_back(hi - lo);
  }
  sel.selected = knapsack_select(lengths, sel.shot_means, sel.budget_frames);

  sel.frame_mask.assign(size_t(n), 0);
  for (int s : sel.selected) {
    auto [lo, hi] = sel.partition.shot(s);
    for (int i = lo; i < hi; ++i) sel.frame_mask[size_t(i)] = 1;
  }
  return sel;
}

std::string SummarySelection::to_json(const std::string& id) const {
  nlohmann::json j;
  j["id"] = id;
  j["n_frames"] = partition.n_frames;
  j["budget_frames"] = budget_frames;
  j["boundaries"] = partition.boundaries;
  j["shot_scores"] = shot_means;
  j["selected"] = selected;
  std::vector<int> mask(frame_mask.begin(), frame_mask.end());
  j["frame_mask"] = mask;
  return j.dump(2);
}

}  // namespace tsumm
