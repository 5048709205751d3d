// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one [PASS]/[FAIL] line per criterion. Optional arguments select
// a subset by number. Exit code 0 iff every executed criterion passed.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "tsumm/data.hpp"
#include "tsumm/metrics.hpp"
#include "tsumm/model.hpp"
#include "tsumm/summarize.hpp"
#include "tsumm/train.hpp"

using namespace tsumm;
using namespace tsumm::testutil;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return buf;
}

// ---- criterion 1: parameter count ----

Outcome criterion_parameter_count() {
  const double t0 = now_s();
  const size_t n = count_parameters(ModelConfig{});
  const double elapsed = now_s() - t0;
  const bool in_band = n >= size_t(1.37e6 * 0.9) && n <= size_t(1.37e6 * 1.1);
  return {in_band && elapsed < 1.0,
          fmt("default config has %zu parameters (target 1.37M +-10%%), %.3f s", n, elapsed)};
}

// ---- criterion 2: global-window equivalence with a dense reference ----

Outcome criterion_wsa_equivalence() {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.heads = 4;
  cfg.layers = 1;
  cfg.mst_blocks = 1;
  cfg.cmf_blocks = 1;
  cfg.window_schedule = {kGlobalWindow};
  cfg.head_hidden = 16;
  cfg.input_dims = {8, 8, 8};
  Rng rng(20250815);
  double worst = 0.0;
  ForwardOptions<float> opts;
  for (int rep = 0; rep < 100; ++rep) {
    auto params = init_params(cfg, 1000 + uint64_t(rep));
    const auto& bp = params.mst[0][0];
    const int n = 2 + int(rng.next_below(63));
    std::vector<float> x(size_t(n) * 32);
    for (auto& v : x) v = float(rng.uniform(-1.0, 1.0));
    Graph<float> g;
    auto out = mst_block(g, g.input({n, 32}, x), kGlobalWindow, bp, cfg, opts);
    std::vector<double> xd(x.begin(), x.end());
    auto ref = ref_mst_block(xd, n, 32, cfg.heads, kGlobalWindow, bp, cfg.resolved_ffn_hidden());
    for (size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::fabs(double(out.data()[i]) - ref[i]));
  }
  return {worst < 1e-5, fmt("max abs diff vs dense reference block: %.3g (limit 1e-5)", worst)};
}

// ---- criterion 3: tiny-model gradient audit ----

Outcome criterion_gradient_audit() {
  ModelConfig cfg = tiny_config(8, 1, 1, 1);
  cfg.heads = 2;
  cfg.window_schedule = {3};
  VideoRecord rec = random_record(cfg.input_dims, 6, 99);

  auto params32 = init_params(cfg, 17);
  auto rep32 = model_grad_audit<float>(cfg, rec, params32, 1e-3, 1e-5);

  // Key-projection biases have exactly-zero true gradients (softmax rows are
  // invariant to a uniform logit shift), so the FD side is pure rounding of
  // order eps*|loss|/2h ~ 1e-11; the absolute floor must sit above that.
  auto params64 = cast_params<double>(cfg, params32);
  auto rep64 = model_grad_audit<double>(cfg, rec, params64, 1e-5, 1e-4);

  const bool pass = rep32.max_rel_err < 1e-3 && rep64.max_rel_err < 1e-6;
  return {pass, fmt("32-bit max rel err %.3g (<1e-3, worst %s); 64-bit %.3g (<1e-6, worst %s)",
                    rep32.max_rel_err, rep32.worst_param.c_str(), rep64.max_rel_err,
                    rep64.worst_param.c_str())};
}

// ---- criterion 4: knapsack vs subset enumeration ----

Outcome criterion_knapsack() {
  Rng rng(777);
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = 1 + int(rng.next_below(15));
    std::vector<int> lengths(static_cast<size_t>(k));
    std::vector<double> values(static_cast<size_t>(k));
    int total = 0;
    for (int i = 0; i < k; ++i) {
      lengths[size_t(i)] = 1 + int(rng.next_below(20));
      values[size_t(i)] = double(rng.next_below(1025)) / 1024.0;  // dyadic: sums are exact
      total += lengths[size_t(i)];
    }
    const int budget = int(rng.next_below(uint64_t(total) + 2));
    auto got = knapsack_select(lengths, values, budget);
    double got_value = 0.0;
    int got_weight = 0;
    for (int i : got) {
      got_value += values[size_t(i)];
      got_weight += lengths[size_t(i)];
    }
    double best = 0.0;
    for (int mask = 0; mask < (1 << k); ++mask) {
      int w = 0;
      double v = 0.0;
      for (int i = 0; i < k; ++i)
        if (mask & (1 << i)) {
          w += lengths[size_t(i)];
          v += values[size_t(i)];
        }
      if (w <= budget && v > best) best = v;
    }
    if (got_weight > budget || got_value != best)
      return {false, fmt("instance %d: value %.10f vs enumeration %.10f", rep, got_value, best)};
  }
  return {true, "1000 random instances, exact value equality with subset enumeration"};
}

// ---- criterion 5: KTS vs brute-force partition search ----

double direct_scatter(const std::vector<float>& f, int dim, int lo, int hi) {
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
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

Outcome criterion_kts() {
  Rng rng(4321);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 4 + int(rng.next_below(37));  // up to 40
    const int dim = 1 + int(rng.next_below(4));
    const int max_shots = 1 + int(rng.next_below(4));
    const double penalty = rng.uniform(0.0, 2.0);
    std::vector<float> f(size_t(n) * size_t(dim));
    for (auto& v : f) v = float(rng.uniform(-1.0, 1.0));

    auto dp = kts_segment(f, n, dim, max_shots, penalty);

    double best = 1e300;
    std::vector<int> best_bounds, bounds;
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

    if (dp.boundaries != best_bounds)
      return {false, fmt("case %d (n=%d, shots<=%d): partition differs from brute force", rep, n,
                         max_shots)};
  }
  return {true, "200 random cases, N<=40, max_shots<=4: exact partition equality"};
}

// ---- criterion 6: metric oracles ----

Outcome criterion_metrics() {
  Rng rng(2468);
  double worst = 0.0;
  for (int rep = 0; rep < 120; ++rep) {
    const int n = 2 + int(rng.next_below(199));
    const int levels = rep % 3 == 0 ? 4 : (rep % 3 == 1 ? 32 : 0);
    std::vector<float> x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
    for (auto& v : x)
      v = levels ? float(rng.next_below(uint64_t(levels))) / levels : float(rng.uniform());
    for (auto& v : y)
      v = levels ? float(rng.next_below(uint64_t(levels))) / levels : float(rng.uniform());

    auto tau = kendall_tau(x, y);
    auto rho = spearman_rho(x, y);
    if (!tau || !rho) continue;

    long long con = 0, dis = 0, tx = 0, ty = 0, joint = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double dx = double(x[size_t(i)]) - double(x[size_t(j)]);
        const double dy = double(y[size_t(i)]) - double(y[size_t(j)]);
        if (dx == 0 && dy == 0)
          ++joint;
        else if (dx == 0)
          ++tx;
        else if (dy == 0)
          ++ty;
        else if (dx * dy > 0)
          ++con;
        else
          ++dis;
      }
    const long long n0 = (long long)(n) * (n - 1) / 2;
    const double ref_tau = double(con - dis) /
                           std::sqrt(double(n0 - (tx + joint)) * double(n0 - (ty + joint)));
    worst = std::max(worst, std::fabs(*tau - ref_tau));

    auto ranks = [n](const std::vector<float>& v) {
      std::vector<double> r(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        int less = 0, equal = 0;
        for (int j = 0; j < n; ++j) {
          if (v[size_t(j)] < v[size_t(i)]) ++less;
          if (v[size_t(j)] == v[size_t(i)]) ++equal;
        }
        r[size_t(i)] = less + (equal + 1) / 2.0;
      }
      return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
      mx += rx[size_t(i)];
      my += ry[size_t(i)];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
      sxy += (rx[size_t(i)] - mx) * (ry[size_t(i)] - my);
      sxx += (rx[size_t(i)] - mx) * (rx[size_t(i)] - mx);
      syy += (ry[size_t(i)] - my) * (ry[size_t(i)] - my);
    }
    worst = std::max(worst, std::fabs(*rho - sxy / std::sqrt(sxx * syy)));
  }
  if (worst >= 1e-12) return {false, fmt("correlation deviation %.3g >= 1e-12", worst)};

  std::vector<float> g6, p6;
  for (double v : {0.9, 0.1, 0.8, 0.3, 0.2, 0.7})
    for (int k = 0; k < 2; ++k) g6.push_back(float(v));
  for (double v : {0.3, 0.9, 0.8, 0.1, 0.6, 0.7})
    for (int k = 0; k < 2; ++k) p6.push_back(float(v));
  const bool ap_ok =
      segment_map(p6, g6, 0.50, 2) == (0.5 + 2.0 / 3.0 + 0.6) / 3.0 &&
      segment_map(g6, g6, 0.50, 2) == 1.0 && segment_map(g6, g6, 0.15, 2) == 1.0;
  if (!ap_ok) return {false, "hand-evaluated AP cases do not match exactly"};
  return {true, fmt("tau/rho within %.3g of O(N^2) references; AP hand cases exact", worst)};
}

// ---- criteria 7, 9, 10 share one trained model ----

struct TrainedSetup {
  ModelConfig cfg;
  ModelParams params;
  SyntheticSpec spec;
  std::vector<VideoRecord> train_split, val_split, test_split;
  std::vector<int> test_indices;  // generator indices of the test videos
  double train_tau = 0.0;
  int epochs_run = 0;
  double seconds = 0.0;
  bool ready = false;
};

TrainedSetup train_reference_model() {
  TrainedSetup s;
  s.spec.n_videos = 50;
  s.spec.min_frames = 96;
  s.spec.max_frames = 144;
  s.spec.dims = {64, 48, 32};
  s.spec.noise = 0.0;  // noiseless planted saliency
  s.spec.decoy_content = false;
  s.spec.text_dropout = 0.1;
  s.spec.seed = 7;
  auto records = generate_synthetic(s.spec);

  DatasetManifest manifest;
  for (const auto& rec : records) {
    ManifestEntry e;
    e.id = rec.id;
    e.path = rec.id + ".tsmm";
    e.n_frames = rec.n_frames;
    e.dims = rec.dims;
    e.has_gt = true;
    manifest.records.push_back(e);
  }
  split_dataset(manifest, {0.8, 0.1, 0.1}, s.spec.seed);
  for (size_t i = 0; i < records.size(); ++i) {
    const std::string& split = manifest.records[i].split;
    if (split == "train")
      s.train_split.push_back(records[i]);
    else if (split == "val")
      s.val_split.push_back(records[i]);
    else {
      s.test_split.push_back(records[i]);
      s.test_indices.push_back(int(i));
    }
  }

  s.cfg = ModelConfig{};  // default architecture
  s.cfg.input_dims = s.spec.dims;
  s.params = init_params(s.cfg, 1);
  TrainConfig tc;
  tc.epochs = 60;  // within the stated 100-epoch cap
  tc.batch_size = 10;
  tc.base_lr = 1e-3;
  tc.seed = 1;
  tc.eval_train_tau = true;
  tc.early_stop_train_tau = 0.9;

  const double t0 = now_s();
  auto opt = make_optim_state(s.params);
  auto result = train(s.cfg, s.params, opt, s.train_split, s.val_split, tc);
  s.seconds = now_s() - t0;
  s.epochs_run = result.epochs_run;
  s.train_tau = result.history.back().train_tau.value_or(-1.0);
  s.ready = true;
  return s;
}

Outcome criterion_overfit(const TrainedSetup& s) {
  const bool pass = s.train_tau >= 0.8 && s.epochs_run <= 100 && s.seconds < 900.0;
  return {pass, fmt("training-set mean tau %.4f after %d epochs in %.0f s (need >= 0.8, <= 100 "
                    "epochs, < 900 s)",
                    s.train_tau, s.epochs_run, s.seconds)};
}

Outcome criterion_saliency_tracking(TrainedSetup& s) {
  double sum = 0.0;
  long count = 0;
  for (size_t k = 0; k < s.test_split.size(); ++k) {
    const auto& rec = s.test_split[k];
    auto dom = synthetic_dominance(s.spec, s.test_indices[k], rec.n_frames);
    auto trace = extract_attention_trace(rec.features(), s.cfg, s.params);
    for (size_t b = 0; b < trace.blocks.size(); ++b)
      for (int i = 0; i < rec.n_frames; ++i) {
        sum += trace.head_avg(int(b), i)[size_t(dom[size_t(i)])];
        ++count;
      }
  }
  const double mean = sum / double(count);
  return {mean >= 1.0 / 3.0 + 0.1,
          fmt("mean attention on the planted dominant modality: %.4f (need >= %.4f)", mean,
              1.0 / 3.0 + 0.1)};
}

Outcome criterion_rank_masking(TrainedSetup& s) {
  auto mean_tau = [&](const std::set<int>& keep) {
    double sum = 0.0;
    int cnt = 0;
    for (const auto& rec : s.test_split) {
      auto scores = masked_forward(rec.features(), s.cfg, s.params, keep);
      if (auto tau = kendall_tau(scores, rec.gt)) {
        sum += *tau;
        ++cnt;
      }
    }
    return sum / cnt;
  };
  const double full = mean_tau({1, 2, 3});
  const double rank1 = mean_tau({1});
  const double rank3 = mean_tau({3});
  return {full > rank1 && rank1 > rank3,
          fmt("mean tau: full %.4f > rank-1 %.4f > rank-3 %.4f", full, rank1, rank3)};
}

// ---- criterion 8: fusion-mode ordering ----

Outcome criterion_fusion_ordering() {
  SyntheticSpec spec;
  spec.n_videos = 40;
  spec.min_frames = 80;
  spec.max_frames = 110;
  spec.dims = {64, 48, 32};
  spec.noise = 0.1;
  spec.text_dropout = 0.15;
  spec.seed = 21;
  auto records = generate_synthetic(spec);
  DatasetManifest manifest;
  for (const auto& rec : records) {
    ManifestEntry e;
    e.id = rec.id;
    e.path = rec.id + ".tsmm";
    e.n_frames = rec.n_frames;
    e.dims = rec.dims;
    e.has_gt = true;
    manifest.records.push_back(e);
  }
  split_dataset(manifest, {0.8, 0.1, 0.1}, spec.seed);
  std::vector<VideoRecord> train_split, val_split;
  for (size_t i = 0; i < records.size(); ++i) {
    if (manifest.records[i].split == "train") train_split.push_back(records[i]);
    if (manifest.records[i].split == "val") val_split.push_back(records[i]);
  }

  auto run = [&](FusionMode mode, uint64_t seed) {
    ModelConfig cfg;
    cfg.input_dims = spec.dims;
    cfg.fusion_mode = mode;
    TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 8;
    tc.base_lr = 1e-3;
    tc.seed = seed;
    auto params = init_params(cfg, seed);
    auto opt = make_optim_state(params);
    auto result = train(cfg, params, opt, train_split, val_split, tc);
    return result.best_val_tau;
  };

  double dyn = 0.0, sta = 0.0;
  std::string detail = "val tau per seed (dynamic/static):";
  for (uint64_t seed : {3ull, 4ull, 5ull}) {
    const double d = run(FusionMode::kDynamic, seed);
    const double st = run(FusionMode::kStatic, seed);
    dyn += d / 3.0;
    sta += st / 3.0;
    detail += fmt(" %.3f/%.3f", d, st);
  }
  detail += fmt("; means %.4f vs %.4f", dyn, sta);
  return {dyn > sta, detail};
}

// ---- criterion 11: bit-identical training determinism ----

Outcome criterion_determinism() {
  SyntheticSpec spec;
  spec.n_videos = 10;
  spec.min_frames = 48;
  spec.max_frames = 64;
  spec.dims = {16, 12, 8};
  spec.noise = 0.05;
  spec.seed = 33;
  auto records = generate_synthetic(spec);

  auto run = [&]() {
    ModelConfig cfg;  // default architecture, dropout active
    cfg.input_dims = spec.dims;
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 4;
    tc.base_lr = 1e-3;
    tc.seed = 99;
    auto params = init_params(cfg, 99);
    auto opt = make_optim_state(params);
    auto result = train(cfg, params, opt, records, {}, tc);
    std::vector<double> losses;
    for (const auto& st : result.history) losses.push_back(st.train_loss);
    return losses;
  };
  auto a = run();
  auto b = run();
  if (a.size() != b.size() || a.size() != 5) return {false, "epoch count mismatch"};
  for (size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0)
      return {false, fmt("epoch %zu loss bits differ: %.17g vs %.17g", i, a[i], b[i])};
  return {true, fmt("5 epoch losses bit-identical across runs (final %.6f)", a.back())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto selected = [&](int id) { return wanted.empty() || wanted.count(id); };

  struct Row {
    int id;
    std::string name;
    Outcome outcome;
    double seconds;
  };
  std::vector<Row> rows;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!selected(id)) return;
    const double t0 = now_s();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    rows.push_back({id, name, out, now_s() - t0});
    std::printf("[%s] %2d %-18s %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", id, name.c_str(),
                out.detail.c_str(), rows.back().seconds);
    std::fflush(stdout);
  };

  run(1, "parameter-count", criterion_parameter_count);
  run(2, "wsa-equivalence", criterion_wsa_equivalence);
  run(3, "gradient-audit", criterion_gradient_audit);
  run(4, "knapsack-oracle", criterion_knapsack);
  run(5, "kts-oracle", criterion_kts);
  run(6, "metric-oracles", criterion_metrics);

  TrainedSetup setup;
  if (selected(7) || selected(9) || selected(10)) setup = train_reference_model();
  run(7, "overfit-sanity", [&] { return criterion_overfit(setup); });
  run(8, "fusion-ordering", criterion_fusion_ordering);
  run(9, "saliency-tracking", [&] { return criterion_saliency_tracking(setup); });
  run(10, "rank-masking", [&] { return criterion_rank_masking(setup); });
  run(11, "determinism", criterion_determinism);

  int failures = 0;
  for (const auto& row : rows) failures += row.outcome.pass ? 0 : 1;
  std::printf("%zu criteria run, %d failed\n", rows.size(), failures);
  return failures == 0 ? 0 : 1;
}
