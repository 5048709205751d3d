#include "tsumm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace tsumm {

namespace {

int64_t tie_pairs(const std::vector<double>& sorted) {
  int64_t total = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const int64_t t = int64_t(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

// Stable merge sort counting strict inversions.
int64_t count_inversions(std::vector<double>& v, std::vector<double>& scratch, size_t lo,
                         size_t hi) {
  if (hi - lo < 2) return 0;
  const size_t mid = (lo + hi) / 2;
  int64_t inv = count_inversions(v, scratch, lo, mid) + count_inversions(v, scratch, mid, hi);
  size_t a = lo, b = mid, out = lo;
  while (a < mid && b < hi) {
    if (v[b] < v[a]) {
      inv += int64_t(mid - a);
      scratch[out++] = v[b++];
    } else {
      scratch[out++] = v[a++];
    }
  }
  while (a < mid) scratch[out++] = v[a++];
  while (b < hi) scratch[out++] = v[b++];
  std::copy(scratch.begin() + long(lo), scratch.begin() + long(hi), v.begin() + long(lo));
  return inv;
}

std::vector<double> midranks(const std::vector<float>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    const double r = (double(i + 1) + double(j)) / 2.0;  // average of 1-based positions
    for (size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(n);
  mb /= double(n);
  double cab = 0, caa = 0, cbb = 0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cab += da * db;
    caa += da * da;
    cbb += db * db;
  }
  if (caa == 0.0 || cbb == 0.0) return std::nullopt;
  return cab / std::sqrt(caa * cbb);
}

void check_lengths(const std::vector<float>& pred, const std::vector<float>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("correlation: length mismatch");
  if (pred.size() < 2) throw std::invalid_argument("correlation: need at least two frames");
}

}  // namespace

std::optional<double> kendall_tau(const std::vector<float>& pred, const std::vector<float>& gt) {
  check_lengths(pred, gt);
  const size_t n = pred.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pred[a] != pred[b]) return pred[a] < pred[b];
    return gt[a] < gt[b];
  });

  // Tie counts on x, y, and jointly.
  int64_t n1 = 0, n3 = 0;
  {
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j < n && pred[order[j]] == pred[order[i]]) ++j;
      const int64_t t = int64_t(j - i);
      n1 += t * (t - 1) / 2;
      size_t k = i;
      while (k < j) {
        size_t l = k;
        while (l < j && gt[order[l]] == gt[order[k]]) ++l;
        const int64_t u = int64_t(l - k);
        n3 += u * (u - 1) / 2;
        k = l;
      }
      i = j;
    }
  }
  std::vector<double> ys(n);
  for (size_t i = 0; i < n; ++i) ys[i] = double(gt[order[i]]);
  std::vector<double> scratch(n);
  const int64_t dis = count_inversions(ys, scratch, 0, n);
  std::sort(ys.begin(), ys.end());
  const int64_t n2 = tie_pairs(ys);

  const int64_t n0 = int64_t(n) * int64_t(n - 1) / 2;
  if (n0 == n1 || n0 == n2) return std::nullopt;  // one side constant-dominated
  const int64_t con_minus_dis = n0 - n1 - n2 + n3 - 2 * dis;
  return double(con_minus_dis) / std::sqrt(double(n0 - n1) * double(n0 - n2));
}

std::optional<double> spearman_rho(const std::vector<float>& pred, const std::vector<float>& gt) {
  check_lengths(pred, gt);
  return pearson(midranks(pred), midranks(gt));
}

double segment_map(const std::vector<float>& pred, const std::vector<float>& gt, double fraction,
                   int seg_len) {
  if (pred.size() != gt.size()) throw std::invalid_argument("segment_map: length mismatch");
  const int n = int(pred.size());
  if (seg_len < 1) throw std::invalid_argument("segment_map: segment length must be positive");
  if (n < seg_len) throw std::invalid_argument("segment_map: video shorter than one segment");
  const int m = (n + seg_len - 1) / seg_len;

  std::vector<double> pred_seg(static_cast<size_t>(m)), gt_seg(static_cast<size_t>(m));
  for (int s = 0; s < m; ++s) {
    const int lo = s * seg_len;
    const int hi = std::min(n, lo + seg_len);
    double ps = 0, gs = 0;
    for (int i = lo; i < hi; ++i) {
      ps += double(pred[size_t(i)]);
      gs += double(gt[size_t(i)]);
    }
    pred_seg[size_t(s)] = ps / double(hi - lo);
    gt_seg[size_t(s)] = gs / double(hi - lo);
  }

  const int n_pos = int(std::ceil(fraction * double(m) - 1e-9));
  std::vector<int> by_gt(static_cast<size_t>(m)), by_pred(static_cast<size_t>(m));
  std::iota(by_gt.begin(), by_gt.end(), 0);
  std::iota(by_pred.begin(), by_pred.end(), 0);
  auto desc = [](const std::vector<double>& score) {
    return [&score](int a, int b) {
      if (score[size_t(a)] != score[size_t(b)]) return score[size_t(a)] > score[size_t(b)];
      return a < b;  // ties toward the earlier segment
    };
  };
  std::sort(by_gt.begin(), by_gt.end(), desc(gt_seg));
  std::sort(by_pred.begin(), by_pred.end(), desc(pred_seg));

  std::vector<uint8_t> positive(size_t(m), 0);
  for (int i = 0; i < n_pos; ++i) positive[size_t(by_gt[size_t(i)])] = 1;

  double ap = 0;
  int hits = 0;
  for (int rank = 0; rank < m; ++rank) {
    if (positive[size_t(by_pred[size_t(rank)])]) {
      ++hits;
      ap += double(hits) / double(rank + 1);
    }
  }
  return n_pos > 0 ? ap / double(n_pos) : 0.0;
}

EvalReport evaluate_scores(const std::vector<ScoredVideo>& videos) {
  if (videos.empty()) throw std::invalid_argument("evaluate: empty split");
  EvalReport report;
  double sum_tau = 0, sum_rho = 0, sum_m50 = 0, sum_m15 = 0;
  int n_corr = 0, n_map = 0;
  for (const auto& v : videos) {
    if (v.gt.empty()) throw std::invalid_argument("evaluate: video '" + v.id + "' has no ground truth");
    VideoMetrics vm;
    vm.id = v.id;
    vm.n_frames = int(v.pred.size());
    vm.tau = kendall_tau(v.pred, v.gt);
    vm.rho = spearman_rho(v.pred, v.gt);
    if (vm.tau && vm.rho) {
      sum_tau += *vm.tau;
      sum_rho += *vm.rho;
      ++n_corr;
    } else {
      ++report.skipped_correlation;
    }
    if (int(v.pred.size()) >= 5) {
      vm.map50 = segment_map(v.pred, v.gt, 0.50);
      vm.map15 = segment_map(v.pred, v.gt, 0.15);
      sum_m50 += *vm.map50;
      sum_m15 += *vm.map15;
      ++n_map;
    } else {
      ++report.skipped_map;
    }
    report.per_video.push_back(std::move(vm));
  }
  report.video_count = int(videos.size());
  if (n_corr > 0) {
    report.mean_tau = sum_tau / n_corr;
    report.mean_rho = sum_rho / n_corr;
  }
  if (n_map > 0) {
    report.mean_map50 = sum_m50 / n_map;
    report.mean_map15 = sum_m15 / n_map;
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j["video_count"] = video_count;
  j["skipped_correlation"] = skipped_correlation;
  j["skipped_map"] = skipped_map;
  j["mean"] = {{"tau", opt(mean_tau)},
               {"rho", opt(mean_rho)},
               {"map50", opt(mean_map50)},
               {"map15", opt(mean_map15)}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : per_video) {
    rows.push_back({{"id", v.id},
                    {"n_frames", v.n_frames},
                    {"tau", opt(v.tau)},
                    {"rho", opt(v.rho)},
                    {"map50", opt(v.map50)},
                    {"map15", opt(v.map15)}});
  }
  j["per_video"] = rows;
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::string out = "id,n_frames,tau,rho,map50,map15\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    snprintf(buf, sizeof(buf), "%.10g", *v);
    return std::string(buf);
  };
  for (const auto& v : per_video) {
    out += v.id + "," + std::to_string(v.n_frames) + "," + cell(v.tau) + "," + cell(v.rho) + "," +
           cell(v.map50) + "," + cell(v.map15) + "\n";
  }
  return out;
}

}  // namespace tsumm
