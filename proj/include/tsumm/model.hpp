#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tsumm/nn.hpp"
#include "tsumm/tensor.hpp"

namespace tsumm {

// Sentinel window size: attend to the whole sequence.
constexpr int kGlobalWindow = 0;

enum class FusionMode { kDynamic, kGlobal, kStatic };
enum class AggMode { kAverage, kLearnable, kNoFusion };

std::string to_string(FusionMode m);
std::string to_string(AggMode m);
FusionMode fusion_mode_from_string(const std::string& s);
AggMode agg_mode_from_string(const std::string& s);

struct ModelConfig {
  int embed_dim = 128;
  int heads = 4;
  int layers = 2;       // interleaved layers (L)
  int mst_blocks = 2;   // temporal blocks per layer (P)
  int cmf_blocks = 2;   // fusion blocks per layer (Q)
  std::vector<int> window_schedule = {5, 15, 45, kGlobalWindow};
  int ffn_hidden = 0;  // 0: derived from embed_dim
  int head_hidden = 192;
  double dropout = 0.1;
  FusionMode fusion_mode = FusionMode::kDynamic;
  AggMode agg_mode = AggMode::kAverage;
  bool share_mst_params = true;
  std::array<int, 3> input_dims = {768, 768, 768};  // visual, text, audio
  int max_seq_len = 4096;

  int resolved_ffn_hidden() const {
    if (ffn_hidden > 0) return ffn_hidden;
    return ((4 * embed_dim / 3) + 7) / 8 * 8;
  }

  void validate() const;
  std::string canonical_string() const;
  uint64_t hash() const;
};

uint64_t fnv1a64(const void* data, size_t len);

// ---- parameters ----

template <typename T>
struct MstBlockParamsT {
  LayerNormParamsT<T> ln_attn;
  LinearParamsT<T> wq, wk, wv, wo;
  LayerNormParamsT<T> ln_ffn;
  SwigluParamsT<T> ffn;
};

template <typename T>
struct CmfBlockParamsT {
  LayerNormParamsT<T> ln_q;   // fusion-stream query
  LayerNormParamsT<T> ln_kv;  // shared across the three modality streams
  LinearParamsT<T> wq, wk, wv, wo;
  LayerNormParamsT<T> ln_ffn;
  SwigluParamsT<T> ffn;
};

// Stream indices: fusion, visual, text, audio.
constexpr int kStreamF = 0, kStreamV = 1, kStreamT = 2, kStreamA = 3;

template <typename T>
struct ModelParamsT {
  std::array<LinearParamsT<T>, 3> proj;        // visual, text, audio
  std::array<LayerNormParamsT<T>, 3> proj_ln;
  std::array<TensorT<T>, 4> lme;               // f, v, t, a
  std::array<TensorT<T>, 3> missing_default;   // v, t, a
  LinearParamsT<T> agg_hidden;                 // learnable aggregation only
  LinearParamsT<T> agg_out;
  std::vector<std::vector<MstBlockParamsT<T>>> mst;  // [block][1 if shared else 4 streams]
  std::vector<CmfBlockParamsT<T>> cmf;
  LinearParamsT<T> head_in;
  LayerNormParamsT<T> head_ln;
  LinearParamsT<T> head_out;
};

using ModelParams = ModelParamsT<float>;

template <typename T>
using ParamVisitor = std::function<void(const std::string&, TensorT<T>&, bool no_decay)>;

template <typename T>
void visit_params(ModelParamsT<T>& p, const ParamVisitor<T>& fn);

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> collect_params(ModelParamsT<T>& p);

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

template <typename T>
ModelParamsT<T> make_params(const ModelConfig& cfg, bool requires_grad = true);

// Copy of the parameter values in another precision (fresh buffers).
template <typename T>
ModelParamsT<T> cast_params(const ModelConfig& cfg, const ModelParams& src);

size_t count_parameters(const ModelConfig& cfg);

// ---- inputs and outputs ----

// Borrowed view of one video's aligned raw feature matrices.
struct FeatureInput {
  int n_frames = 0;
  const std::vector<float>* visual = nullptr;  // [N x Dv] row-major
  const std::vector<float>* text = nullptr;
  const std::vector<float>* audio = nullptr;
  const std::vector<uint8_t>* presence = nullptr;  // [N x 3], null = all present
};

template <typename T>
struct StreamSetT {
  TensorT<T> f, v, t, a;
  TensorT<T>& stream(int s) {
    switch (s) {
      case kStreamF: return f;
      case kStreamV: return v;
      case kStreamT: return t;
      default: return a;
    }
  }
};

// Per-CMF-block, per-frame, per-head weights over (visual, text, audio).
struct AttentionTrace {
  int n_frames = 0;
  int heads = 0;
  struct BlockTrace {
    std::vector<float> weights;  // [frame][head][3]
  };
  std::vector<BlockTrace> blocks;

  float weight(int block, int frame, int head, int modality) const {
    return blocks[size_t(block)].weights[(size_t(frame) * heads + head) * 3 + modality];
  }
  std::array<float, 3> head_avg(int block, int frame) const {
    std::array<float, 3> avg = {0.f, 0.f, 0.f};
    for (int h = 0; h < heads; ++h)
      for (int m = 0; m < 3; ++m) avg[size_t(m)] += weight(block, frame, h, m);
    for (auto& w : avg) w /= float(heads);
    return avg;
  }
};

template <typename T>
struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  bool want_trace = false;
  // [N x 3] per-frame modality admission for CMF attention (rank masking).
  const std::vector<uint8_t>* cmf_allowed = nullptr;
};

template <typename T>
struct ForwardOutput {
  TensorT<T> scores;  // [N x 1], each in (0, 1)
  TensorT<T> fused;   // [N x D] fusion stream entering the head
  AttentionTrace trace;
};

// ---- operations ----

template <typename T>
std::array<TensorT<T>, 3> embed_project(Graph<T>& g, const FeatureInput& feats,
                                        const ModelConfig& cfg, const ModelParamsT<T>& p);

template <typename T>
TensorT<T> aggregate_fusion_token(Graph<T>& g, const TensorT<T>& ev, const TensorT<T>& et,
                                  const TensorT<T>& ea, AggMode mode, const ModelParamsT<T>& p);

std::vector<float> sinusoidal_tpe(int n, int d);

template <typename T>
StreamSetT<T> apply_tpe_lme(Graph<T>& g, const StreamSetT<T>& e, const ModelConfig& cfg,
                            const ModelParamsT<T>& p);

template <typename T>
TensorT<T> mst_block(Graph<T>& g, const TensorT<T>& stream, int window,
                     const MstBlockParamsT<T>& bp, const ModelConfig& cfg,
                     const ForwardOptions<T>& opts);

template <typename T>
struct CmfBlockResult {
  TensorT<T> fused;
  std::vector<float> trace_weights;  // [frame][head][3]
};

template <typename T>
CmfBlockResult<T> cmf_block(Graph<T>& g, const TensorT<T>& fusion, const TensorT<T>& v,
                            const TensorT<T>& t, const TensorT<T>& a,
                            const CmfBlockParamsT<T>& bp, const ModelConfig& cfg,
                            const ForwardOptions<T>& opts);

template <typename T>
TensorT<T> prediction_head(Graph<T>& g, const TensorT<T>& fused, const ModelParamsT<T>& p);

template <typename T>
TensorT<T> compute_loss(Graph<T>& g, const TensorT<T>& scores, const std::vector<float>& gt);

template <typename T>
ForwardOutput<T> model_forward(Graph<T>& g, const FeatureInput& feats, const ModelConfig& cfg,
                               const ModelParamsT<T>& p, const ForwardOptions<T>& opts);

// ---- inference wrappers (float) ----

struct Prediction {
  std::vector<float> scores;
  std::vector<float> fused;  // [N x D]
  AttentionTrace trace;
};

Prediction predict(const FeatureInput& feats, const ModelConfig& cfg, ModelParams& params,
                   bool want_trace = false, const std::vector<uint8_t>* cmf_allowed = nullptr);

AttentionTrace extract_attention_trace(const FeatureInput& feats, const ModelConfig& cfg,
                                       ModelParams& params);

// Per frame, ranks modalities by the first CMF block's head-averaged weight
// (rank 1 = highest; ties favor the earlier of visual < text < audio) and
// re-runs inference with non-kept modalities excluded from CMF attention.
std::vector<float> masked_forward(const FeatureInput& feats, const ModelConfig& cfg,
                                  ModelParams& params, const std::set<int>& keep_ranks);

// Modality admission matrix used by masked_forward; exposed for inspection.
std::vector<uint8_t> rank_mask_from_trace(const AttentionTrace& trace,
                                          const std::set<int>& keep_ranks);

}  // namespace tsumm

#include "tsumm/model_impl.hpp"
