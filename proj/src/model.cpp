#include "tsumm/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tsumm {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kDynamic: return "dynamic";
    case FusionMode::kGlobal: return "global";
    case FusionMode::kStatic: return "static";
  }
  return "?";
}

std::string to_string(AggMode m) {
  switch (m) {
    case AggMode::kAverage: return "average";
    case AggMode::kLearnable: return "learnable";
    case AggMode::kNoFusion: return "no_fusion";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "dynamic") return FusionMode::kDynamic;
  if (s == "global") return FusionMode::kGlobal;
  if (s == "static") return FusionMode::kStatic;
  throw std::invalid_argument("unknown fusion mode '" + s + "'");
}

AggMode agg_mode_from_string(const std::string& s) {
  if (s == "average") return AggMode::kAverage;
  if (s == "learnable") return AggMode::kLearnable;
  if (s == "no_fusion") return AggMode::kNoFusion;
  throw std::invalid_argument("unknown aggregation mode '" + s + "'");
}

void ModelConfig::validate() const {
  check_arg(embed_dim > 0, "config: embed_dim must be positive");
  check_arg(heads > 0 && embed_dim % heads == 0, "config: heads must divide embed_dim");
  check_arg(layers >= 1 && mst_blocks >= 1 && cmf_blocks >= 1,
            "config: layers/mst_blocks/cmf_blocks must be >= 1");
  check_arg(int(window_schedule.size()) == layers * mst_blocks,
            "config: window_schedule must list layers*mst_blocks entries, got " +
                std::to_string(window_schedule.size()));
  for (int w : window_schedule)
    check_arg(w == kGlobalWindow || (w > 0 && w % 2 == 1),
              "config: window sizes must be odd positive or global");
  check_arg(head_hidden > 0, "config: head_hidden must be positive");
  check_arg(dropout >= 0.0 && dropout < 1.0, "config: dropout must be in [0, 1)");
  for (int d : input_dims) check_arg(d > 0, "config: input dims must be positive");
  check_arg(max_seq_len >= 1, "config: max_seq_len must be >= 1");
}

std::string ModelConfig::canonical_string() const {
  std::ostringstream os;
  os << "embed_dim=" << embed_dim << ";heads=" << heads << ";layers=" << layers
     << ";mst_blocks=" << mst_blocks << ";cmf_blocks=" << cmf_blocks << ";windows=";
  for (size_t i = 0; i < window_schedule.size(); ++i) {
    if (i) os << ",";
    os << window_schedule[i];
  }
  os << ";ffn_hidden=" << resolved_ffn_hidden() << ";head_hidden=" << head_hidden
     << ";dropout=" << dropout << ";fusion=" << to_string(fusion_mode)
     << ";agg=" << to_string(agg_mode) << ";share_mst=" << (share_mst_params ? 1 : 0)
     << ";input_dims=" << input_dims[0] << "," << input_dims[1] << "," << input_dims[2]
     << ";max_seq_len=" << max_seq_len;
  return os.str();
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t ModelConfig::hash() const {
  const std::string s = canonical_string();
  return fnv1a64(s.data(), s.size());
}

std::vector<float> sinusoidal_tpe(int n, int d) {
  std::vector<float> tpe(size_t(n) * size_t(d));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; 2 * k < d; ++k) {
      const double freq = std::pow(10000.0, -2.0 * k / double(d));
      const double angle = double(i) * freq;
      tpe[size_t(i) * d + 2 * k] = float(std::sin(angle));
      if (2 * k + 1 < d) tpe[size_t(i) * d + 2 * k + 1] = float(std::cos(angle));
    }
  }
  return tpe;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p = make_params<float>(cfg, true);
  Rng rng(Rng::mix(seed, 0x7A51D5u));
  visit_params<float>(p, [&](const std::string& name, Tensor& t, bool) {
    const bool is_weight = t.rank() == 2;
    const bool is_lme = name.rfind("lme.", 0) == 0;
    if (is_weight) {
      const double limit = std::sqrt(6.0 / double(t.shape()[0] + t.shape()[1]));
      for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.uniform(-limit, limit));
    } else if (is_lme) {
      for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.normal() * 0.02);
    }
    // LN gains stay at one, every other vector at zero.
  });
  return p;
}

size_t count_parameters(const ModelConfig& cfg) {
  ModelParamsT<float> p = make_params<float>(cfg, false);
  size_t total = 0;
  visit_params<float>(p, [&](const std::string&, Tensor& t, bool) { total += t.numel(); });
  return total;
}

Prediction predict(const FeatureInput& feats, const ModelConfig& cfg, ModelParams& params,
                   bool want_trace, const std::vector<uint8_t>* cmf_allowed) {
  Graph<float> g;
  ForwardOptions<float> opts;
  opts.training = false;
  opts.want_trace = want_trace;
  opts.cmf_allowed = cmf_allowed;
  auto out = model_forward(g, feats, cfg, params, opts);
  Prediction pred;
  pred.scores.assign(out.scores.data(), out.scores.data() + out.scores.numel());
  pred.fused.assign(out.fused.data(), out.fused.data() + out.fused.numel());
  pred.trace = std::move(out.trace);
  return pred;
}

AttentionTrace extract_attention_trace(const FeatureInput& feats, const ModelConfig& cfg,
                                       ModelParams& params) {
  return predict(feats, cfg, params, true).trace;
}

std::vector<uint8_t> rank_mask_from_trace(const AttentionTrace& trace,
                                          const std::set<int>& keep_ranks) {
  check_arg(!keep_ranks.empty(), "rank mask: keep_ranks must be nonempty");
  for (int r : keep_ranks) check_arg(r >= 1 && r <= 3, "rank mask: ranks must be within 1..3");
  check_arg(!trace.blocks.empty(), "rank mask: trace has no fusion blocks");
  const int n = trace.n_frames;
  std::vector<uint8_t> allowed(size_t(n) * 3, 0);
  for (int i = 0; i < n; ++i) {
    const auto avg = trace.head_avg(0, i);
    // Sort modalities by descending weight; ties resolved by fixed order
    // visual < text < audio.
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return avg[size_t(x)] > avg[size_t(y)]; });
    for (int r = 0; r < 3; ++r)
      if (keep_ranks.count(r + 1)) allowed[size_t(i) * 3 + size_t(order[size_t(r)])] = 1;
  }
  return allowed;
}

std::vector<float> masked_forward(const FeatureInput& feats, const ModelConfig& cfg,
                                  ModelParams& params, const std::set<int>& keep_ranks) {
  check_arg(!keep_ranks.empty(), "masked_forward: keep_ranks must be nonempty");
  auto base = predict(feats, cfg, params, true);
  if (keep_ranks.count(1) && keep_ranks.count(2) && keep_ranks.count(3)) return base.scores;
  std::vector<uint8_t> allowed = rank_mask_from_trace(base.trace, keep_ranks);
  return predict(feats, cfg, params, false, &allowed).scores;
}

}  // namespace tsumm
