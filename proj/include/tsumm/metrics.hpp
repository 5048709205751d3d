#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tsumm {

// Tie-corrected Kendall tau-b over all frame pairs. Returns nullopt when
// either side is constant (undefined denominator); callers exclude such
// videos from means.
std::optional<double> kendall_tau(const std::vector<float>& pred, const std::vector<float>& gt);

// Spearman rho: Pearson correlation of mid-ranks (average ranks over ties).
std::optional<double> spearman_rho(const std::vector<float>& pred, const std::vector<float>& gt);

// Average precision of predicted segment ranking against the top-`fraction`
// ground-truth segments. Frames are grouped into segments of `seg_len`
// (the last may be short), scored by mean, and ranked descending with ties
// resolved toward the earlier segment.
double segment_map(const std::vector<float>& pred, const std::vector<float>& gt, double fraction,
                   int seg_len = 5);

struct ScoredVideo {
  std::string id;
  std::vector<float> pred;
  std::vector<float> gt;
};

struct VideoMetrics {
  std::string id;
  int n_frames = 0;
  std::optional<double> tau;
  std::optional<double> rho;
  std::optional<double> map50;
  std::optional<double> map15;
};

struct EvalReport {
  std::vector<VideoMetrics> per_video;
  std::optional<double> mean_tau;
  std::optional<double> mean_rho;
  std::optional<double> mean_map50;
  std::optional<double> mean_map15;
  int video_count = 0;
  int skipped_correlation = 0;  // constant pred or gt
  int skipped_map = 0;          // shorter than one segment

  std::string to_json() const;
  std::string to_csv() const;
};

EvalReport evaluate_scores(const std::vector<ScoredVideo>& videos);

}  // namespace tsumm
