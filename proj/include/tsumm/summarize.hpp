#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tsumm {

// Contiguous partition of [0, N): `boundaries` are the interior split points,
// sorted and strictly inside (0, N). k boundaries define k+1 shots.
struct ShotPartition {
  int n_frames = 0;
  std::vector<int> boundaries;

  int shot_count() const { return int(boundaries.size()) + 1; }
  // [start, end) of one shot
  std::pair<int, int> shot(int s) const {
    const int start = s == 0 ? 0 : boundaries[size_t(s) - 1];
    const int end = s == shot_count() - 1 ? n_frames : boundaries[size_t(s)];
    return {start, end};
  }
  void validate() const;
};

struct SummarySelection {
  ShotPartition partition;
  std::vector<int> selected;       // shot indices, ascending
  std::vector<uint8_t> frame_mask; // [N], true exactly on selected shots
  int budget_frames = 0;
  std::vector<double> shot_means;

  std::string to_json(const std::string& id) const;
};

// Kernel temporal segmentation with a linear kernel: choose change points
// minimizing total within-segment scatter plus penalty * k * log(N), solved
// exactly by dynamic programming; at most `max_shots` segments.
ShotPartition kts_segment(const std::vector<float>& features, int n_frames, int dim,
                          int max_shots, double penalty);

// Within-segment scatter of [start, end) under the linear kernel.
double kts_segment_scatter(const std::vector<float>& features, int dim, int start, int end);

std::vector<double> shot_scores(const std::vector<float>& scores, const ShotPartition& partition);

// Exact 0/1 knapsack; among equal-value optima returns the lexicographically
// smallest index set.
std::vector<int> knapsack_select(const std::vector<int>& lengths, const std::vector<double>& values,
                                 int budget);

struct SummaryOptions {
  double budget_fraction = 0.15;
  int max_shots = 0;       // 0: ceil(N / 10)
  double penalty = 1.0;
};

SummarySelection generate_summary(const std::vector<float>& scores,
                                  const std::vector<float>& features, int dim,
                                  const SummaryOptions& opts = {});

}  // namespace tsumm
