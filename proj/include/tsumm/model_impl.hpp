#pragma once

// Template definitions for model.hpp. Include via model.hpp only.

#include <cmath>

namespace tsumm {

namespace detail {

template <typename T>
void visit_linear(const std::string& name, LinearParamsT<T>& p, const ParamVisitor<T>& fn) {
  fn(name + ".w", p.w, false);
  fn(name + ".b", p.b, false);
}

template <typename T>
void visit_ln(const std::string& name, LayerNormParamsT<T>& p, const ParamVisitor<T>& fn) {
  fn(name + ".gain", p.gain, true);
  fn(name + ".bias", p.bias, true);
}

template <typename T>
void visit_mst_block(const std::string& name, MstBlockParamsT<T>& b, const ParamVisitor<T>& fn) {
  visit_ln(name + ".ln_attn", b.ln_attn, fn);
  visit_linear(name + ".wq", b.wq, fn);
  visit_linear(name + ".wk", b.wk, fn);
  visit_linear(name + ".wv", b.wv, fn);
  visit_linear(name + ".wo", b.wo, fn);
  visit_ln(name + ".ln_ffn", b.ln_ffn, fn);
  visit_linear(name + ".ffn.w1", b.ffn.w1, fn);
  visit_linear(name + ".ffn.w3", b.ffn.w3, fn);
  visit_linear(name + ".ffn.w2", b.ffn.w2, fn);
}

template <typename T>
void visit_cmf_block(const std::string& name, CmfBlockParamsT<T>& b, const ParamVisitor<T>& fn) {
  visit_ln(name + ".ln_q", b.ln_q, fn);
  visit_ln(name + ".ln_kv", b.ln_kv, fn);
  visit_linear(name + ".wq", b.wq, fn);
  visit_linear(name + ".wk", b.wk, fn);
  visit_linear(name + ".wv", b.wv, fn);
  visit_linear(name + ".wo", b.wo, fn);
  visit_ln(name + ".ln_ffn", b.ln_ffn, fn);
  visit_linear(name + ".ffn.w1", b.ffn.w1, fn);
  visit_linear(name + ".ffn.w3", b.ffn.w3, fn);
  visit_linear(name + ".ffn.w2", b.ffn.w2, fn);
}

}  // namespace detail

template <typename T>
void visit_params(ModelParamsT<T>& p, const ParamVisitor<T>& fn) {
  static const char* kMod[3] = {"v", "t", "a"};
  static const char* kStream[4] = {"f", "v", "t", "a"};
  for (int m = 0; m < 3; ++m) {
    detail::visit_linear(std::string("proj.") + kMod[m], p.proj[size_t(m)], fn);
    detail::visit_ln(std::string("proj_ln.") + kMod[m], p.proj_ln[size_t(m)], fn);
  }
  for (int s = 0; s < 4; ++s) fn(std::string("lme.") + kStream[s], p.lme[size_t(s)], true);
  for (int m = 0; m < 3; ++m)
    fn(std::string("missing_default.") + kMod[m], p.missing_default[size_t(m)], false);
  if (p.agg_hidden.w.defined()) {
    detail::visit_linear("agg_hidden", p.agg_hidden, fn);
    detail::visit_linear("agg_out", p.agg_out, fn);
  }
  for (size_t b = 0; b < p.mst.size(); ++b)
    for (size_t s = 0; s < p.mst[b].size(); ++s) {
      std::string name = "mst." + std::to_string(b);
      if (p.mst[b].size() > 1) name += std::string(".") + kStream[s];
      detail::visit_mst_block(name, p.mst[b][s], fn);
    }
  for (size_t b = 0; b < p.cmf.size(); ++b)
    detail::visit_cmf_block("cmf." + std::to_string(b), p.cmf[b], fn);
  detail::visit_linear("head_in", p.head_in, fn);
  detail::visit_ln("head_ln", p.head_ln, fn);
  detail::visit_linear("head_out", p.head_out, fn);
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>*>> collect_params(ModelParamsT<T>& p) {
  std::vector<std::pair<std::string, TensorT<T>*>> out;
  visit_params<T>(p, [&](const std::string& name, TensorT<T>& t, bool) {
    out.emplace_back(name, &t);
  });
  return out;
}

namespace detail {

template <typename T>
struct ParamBuilder {
  bool requires_grad;

  LinearParamsT<T> lin(int in, int out) const {
    return {TensorT<T>::zeros({in, out}, requires_grad), TensorT<T>::zeros({out}, requires_grad)};
  }
  LayerNormParamsT<T> ln(int d) const {
    auto gain = TensorT<T>::zeros({d}, requires_grad);
    for (int i = 0; i < d; ++i) gain.data()[i] = T(1);
    return {gain, TensorT<T>::zeros({d}, requires_grad)};
  }
  MstBlockParamsT<T> mst_block(int d, int hidden) const {
    return {ln(d), lin(d, d), lin(d, d), lin(d, d), lin(d, d), ln(d),
            {lin(d, hidden), lin(d, hidden), lin(hidden, d)}};
  }
  CmfBlockParamsT<T> cmf_block(int d, int hidden) const {
    return {ln(d), ln(d), lin(d, d), lin(d, d), lin(d, d), lin(d, d), ln(d),
            {lin(d, hidden), lin(d, hidden), lin(hidden, d)}};
  }
};

}  // namespace detail

template <typename T>
ModelParamsT<T> make_params(const ModelConfig& cfg, bool requires_grad) {
  cfg.validate();
  detail::ParamBuilder<T> b{requires_grad};
  const int d = cfg.embed_dim;
  const int hidden = cfg.resolved_ffn_hidden();
  ModelParamsT<T> p;
  for (int m = 0; m < 3; ++m) {
    p.proj[size_t(m)] = b.lin(cfg.input_dims[size_t(m)], d);
    p.proj_ln[size_t(m)] = b.ln(d);
  }
  for (int s = 0; s < 4; ++s) p.lme[size_t(s)] = TensorT<T>::zeros({d}, requires_grad);
  for (int m = 0; m < 3; ++m) p.missing_default[size_t(m)] = TensorT<T>::zeros({d}, requires_grad);
  if (cfg.agg_mode == AggMode::kLearnable) {
    p.agg_hidden = b.lin(3 * d, d);
    p.agg_out = b.lin(d, d);
  }
  const int n_mst = cfg.layers * cfg.mst_blocks;
  p.mst.resize(static_cast<size_t>(n_mst));
  for (int i = 0; i < n_mst; ++i) {
    const int copies = cfg.share_mst_params ? 1 : 4;
    for (int c = 0; c < copies; ++c) p.mst[size_t(i)].push_back(b.mst_block(d, hidden));
  }
  const int n_cmf = cfg.layers * cfg.cmf_blocks;
  for (int i = 0; i < n_cmf; ++i) p.cmf.push_back(b.cmf_block(d, hidden));
  p.head_in = b.lin(d, cfg.head_hidden);
  p.head_ln = b.ln(cfg.head_hidden);
  p.head_out = b.lin(cfg.head_hidden, 1);
  return p;
}

template <typename T>
ModelParamsT<T> cast_params(const ModelConfig& cfg, const ModelParams& src) {
  ModelParamsT<T> dst = make_params<T>(cfg, true);
  auto src_list = collect_params(const_cast<ModelParams&>(src));
  auto dst_list = collect_params(dst);
  check_arg(src_list.size() == dst_list.size(), "cast_params: config mismatch");
  for (size_t i = 0; i < src_list.size(); ++i) {
    check_arg(src_list[i].second->numel() == dst_list[i].second->numel(),
              "cast_params: shape mismatch at " + src_list[i].first);
    for (size_t e = 0; e < src_list[i].second->numel(); ++e)
      dst_list[i].second->data()[e] = T(src_list[i].second->data()[e]);
  }
  return dst;
}

// ---- forward pieces ----

template <typename T>
std::array<TensorT<T>, 3> embed_project(Graph<T>& g, const FeatureInput& feats,
                                        const ModelConfig& cfg, const ModelParamsT<T>& p) {
  const int n = feats.n_frames;
  check_arg(n >= 1, "embed_project: empty sequence");
  const std::vector<float>* raw[3] = {feats.visual, feats.text, feats.audio};
  std::array<TensorT<T>, 3> out;
  for (int m = 0; m < 3; ++m) {
    check_arg(raw[m] != nullptr, "embed_project: missing feature matrix");
    const int dm = cfg.input_dims[size_t(m)];
    check_arg(int(raw[m]->size()) == n * dm, "embed_project: feature extent mismatch");
    std::vector<T> cast(raw[m]->begin(), raw[m]->end());
    TensorT<T> x = g.input({n, dm}, std::move(cast));
    TensorT<T> e = layer_norm(g, linear(g, x, p.proj[size_t(m)]), p.proj_ln[size_t(m)]);
    if (feats.presence != nullptr) {
      std::vector<uint8_t> keep(static_cast<size_t>(n), 0);
      bool all = true;
      for (int i = 0; i < n; ++i) {
        keep[size_t(i)] = (*feats.presence)[size_t(i) * 3 + size_t(m)];
        all = all && keep[size_t(i)];
      }
      if (!all) e = g.row_blend(e, keep, p.missing_default[size_t(m)]);
    }
    out[size_t(m)] = e;
  }
  return out;
}

template <typename T>
TensorT<T> aggregate_fusion_token(Graph<T>& g, const TensorT<T>& ev, const TensorT<T>& et,
                                  const TensorT<T>& ea, AggMode mode, const ModelParamsT<T>& p) {
  switch (mode) {
    case AggMode::kAverage:
      return g.scale(g.add(g.add(ev, et), ea), 1.0 / 3.0);
    case AggMode::kNoFusion:
      return ev;
    case AggMode::kLearnable: {
      check_arg(p.agg_hidden.w.defined(), "aggregate: learnable mode without aggregation params");
      TensorT<T> cat = g.concat_cols({ev, et, ea});
      TensorT<T> hidden = g.activation(linear(g, cat, p.agg_hidden), Act::kGelu);
      return linear(g, hidden, p.agg_out);
    }
  }
  throw std::invalid_argument("aggregate: unknown mode");
}

template <typename T>
StreamSetT<T> apply_tpe_lme(Graph<T>& g, const StreamSetT<T>& e, const ModelConfig& cfg,
                            const ModelParamsT<T>& p) {
  const int n = e.f.rows();
  check_arg(e.v.shape() == e.f.shape() && e.t.shape() == e.f.shape() &&
                e.a.shape() == e.f.shape(),
            "apply_tpe_lme: streams must share one shape");
  check_arg(n <= cfg.max_seq_len, "apply_tpe_lme: sequence longer than configured maximum");
  const int d = cfg.embed_dim;
  std::vector<float> tpe_f = sinusoidal_tpe(n, d);
  std::vector<T> tpe_cast(tpe_f.begin(), tpe_f.end());
  TensorT<T> tpe = g.input({n, d}, std::move(tpe_cast));
  StreamSetT<T> out;
  const TensorT<T>* in[4] = {&e.f, &e.v, &e.t, &e.a};
  TensorT<T>* res[4] = {&out.f, &out.v, &out.t, &out.a};
  for (int s = 0; s < 4; ++s) *res[s] = g.add_bias(g.add(*in[s], tpe), p.lme[size_t(s)]);
  return out;
}

template <typename T>
TensorT<T> mst_block(Graph<T>& g, const TensorT<T>& stream, int window,
                     const MstBlockParamsT<T>& bp, const ModelConfig& cfg,
                     const ForwardOptions<T>& opts) {
  const int n = stream.rows();
  const int d = stream.cols();
  check_arg(window == kGlobalWindow || (window > 0 && window % 2 == 1),
            "mst_block: window must be odd or global");
  AttentionMask mask =
      (window == kGlobalWindow || window >= 2 * n) ? AttentionMask::full(n, n)
                                                   : AttentionMask::band(n, window);
  const double rate = opts.training ? cfg.dropout : 0.0;
  TensorT<T> xn = layer_norm(g, stream, bp.ln_attn);
  TensorT<T> q = linear(g, xn, bp.wq);
  TensorT<T> k = linear(g, xn, bp.wk);
  TensorT<T> v = linear(g, xn, bp.wv);
  const int dh = d / cfg.heads;
  std::vector<TensorT<T>> heads;
  heads.reserve(size_t(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    auto att = scaled_masked_attention(g, g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh),
                                       g.slice_cols(v, h * dh, dh), mask, rate, opts.dropout_rng);
    heads.push_back(att.out);
  }
  TensorT<T> h_wsa = g.add(stream, linear(g, g.concat_cols(heads), bp.wo));
  TensorT<T> ffn_out = swiglu_ffn(g, layer_norm(g, h_wsa, bp.ln_ffn), bp.ffn);
  if (rate > 0.0 && opts.dropout_rng) ffn_out = g.dropout(ffn_out, rate, *opts.dropout_rng);
  return g.add(h_wsa, ffn_out);
}

namespace detail {

// Applied (post-mask) mixing weights for static fusion: uniform over the
// admitted modalities at each frame.
template <typename T>
std::vector<T> static_weights(int n, const std::vector<uint8_t>* allowed) {
  std::vector<T> w(size_t(n) * 3);
  for (int i = 0; i < n; ++i) {
    int cnt = 0;
    for (int m = 0; m < 3; ++m) cnt += allowed ? int((*allowed)[size_t(i) * 3 + size_t(m)] != 0) : 1;
    check_arg(cnt > 0, "cmf: frame with no admitted modality");
    for (int m = 0; m < 3; ++m) {
      const bool on = allowed ? (*allowed)[size_t(i) * 3 + size_t(m)] != 0 : true;
      w[size_t(i) * 3 + size_t(m)] = on ? T(1) / T(cnt) : T(0);
    }
  }
  return w;
}

}  // namespace detail

template <typename T>
CmfBlockResult<T> cmf_block(Graph<T>& g, const TensorT<T>& fusion, const TensorT<T>& v,
                            const TensorT<T>& t, const TensorT<T>& a,
                            const CmfBlockParamsT<T>& bp, const ModelConfig& cfg,
                            const ForwardOptions<T>& opts) {
  const int n = fusion.rows();
  const int d = fusion.cols();
  const int dh = d / cfg.heads;
  const double rate = opts.training ? cfg.dropout : 0.0;
  const std::vector<uint8_t>* allowed = opts.cmf_allowed;
  if (allowed != nullptr)
    check_arg(int(allowed->size()) == n * 3, "cmf: admission mask extent mismatch");

  TensorT<T> qn = layer_norm(g, fusion, bp.ln_q);
  TensorT<T> q = linear(g, qn, bp.wq);
  std::array<TensorT<T>, 3> kn = {layer_norm(g, v, bp.ln_kv), layer_norm(g, t, bp.ln_kv),
                                  layer_norm(g, a, bp.ln_kv)};
  std::array<TensorT<T>, 3> keys, vals;
  const bool need_logits = cfg.fusion_mode != FusionMode::kStatic;
  for (int m = 0; m < 3; ++m) {
    if (need_logits) keys[size_t(m)] = linear(g, kn[size_t(m)], bp.wk);
    vals[size_t(m)] = linear(g, kn[size_t(m)], bp.wv);
  }

  AttentionMask mask;
  if (allowed != nullptr) {
    mask.rows = n;
    mask.cols = 3;
    mask.allowed = *allowed;
    mask.validate();
  }

  std::vector<float> trace(size_t(n) * size_t(cfg.heads) * 3);
  std::vector<TensorT<T>> head_outs;
  head_outs.reserve(size_t(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    TensorT<T> qh = g.slice_cols(q, h * dh, dh);
    std::array<TensorT<T>, 3> vh;
    for (int m = 0; m < 3; ++m) vh[size_t(m)] = g.slice_cols(vals[size_t(m)], h * dh, dh);

    TensorT<T> weights;  // [n x 3], rows sum to 1 over admitted modalities
    if (cfg.fusion_mode == FusionMode::kStatic) {
      weights = g.input({n, 3}, detail::static_weights<T>(n, allowed));
    } else {
      std::vector<TensorT<T>> dots;
      for (int m = 0; m < 3; ++m)
        dots.push_back(g.rowwise_dot(qh, g.slice_cols(keys[size_t(m)], h * dh, dh)));
      TensorT<T> logits = g.scale(g.concat_cols(dots), 1.0 / std::sqrt(double(dh)));
      TensorT<T> dyn = allowed ? g.masked_softmax_rows(logits, mask) : g.softmax_rows(logits);
      if (cfg.fusion_mode == FusionMode::kDynamic) {
        weights = dyn;
      } else {
        // Global fusion: freeze the time-average of the dynamic weights and
        // apply it uniformly; frames with masked modalities renormalize over
        // what remains.
        double avg[3] = {0, 0, 0};
        for (int i = 0; i < n; ++i)
          for (int m = 0; m < 3; ++m) avg[m] += double(dyn.at(i, m));
        for (int m = 0; m < 3; ++m) avg[m] /= double(n);
        std::vector<T> frozen(size_t(n) * 3);
        for (int i = 0; i < n; ++i) {
          double s = 0;
          for (int m = 0; m < 3; ++m) {
            const bool on = allowed ? (*allowed)[size_t(i) * 3 + size_t(m)] != 0 : true;
            s += on ? avg[m] : 0.0;
          }
          for (int m = 0; m < 3; ++m) {
            const bool on = allowed ? (*allowed)[size_t(i) * 3 + size_t(m)] != 0 : true;
            frozen[size_t(i) * 3 + size_t(m)] = on ? T(avg[m] / s) : T(0);
          }
        }
        weights = g.input({n, 3}, std::move(frozen));
      }
    }

    for (int i = 0; i < n; ++i)
      for (int m = 0; m < 3; ++m)
        trace[(size_t(i) * size_t(cfg.heads) + size_t(h)) * 3 + size_t(m)] =
            float(weights.at(i, m));

    TensorT<T> applied = weights;
    if (cfg.fusion_mode == FusionMode::kDynamic && rate > 0.0 && opts.dropout_rng)
      applied = g.dropout(weights, rate, *opts.dropout_rng);
    head_outs.push_back(g.weighted_mix(applied, {vh[0], vh[1], vh[2]}));
  }

  TensorT<T> attended = g.add(fusion, linear(g, g.concat_cols(head_outs), bp.wo));
  TensorT<T> ffn_out = swiglu_ffn(g, layer_norm(g, attended, bp.ln_ffn), bp.ffn);
  if (rate > 0.0 && opts.dropout_rng) ffn_out = g.dropout(ffn_out, rate, *opts.dropout_rng);
  return {g.add(attended, ffn_out), std::move(trace)};
}

template <typename T>
TensorT<T> prediction_head(Graph<T>& g, const TensorT<T>& fused, const ModelParamsT<T>& p) {
  TensorT<T> h = g.activation(linear(g, fused, p.head_in), Act::kGelu);
  h = layer_norm(g, h, p.head_ln);
  return g.activation(linear(g, h, p.head_out), Act::kSigmoid);
}

template <typename T>
TensorT<T> compute_loss(Graph<T>& g, const TensorT<T>& scores, const std::vector<float>& gt) {
  check_arg(int(gt.size()) == scores.rows(), "loss: score/ground-truth length mismatch");
  for (float v : gt) check_arg(v >= 0.f && v <= 1.f, "loss: ground truth outside [0, 1]");
  std::vector<T> cast(gt.begin(), gt.end());
  TensorT<T> target = g.input({int(gt.size()), 1}, std::move(cast));
  TensorT<T> diff = g.sub(scores, target);
  return g.sum_all(g.mul(diff, diff));
}

template <typename T>
ForwardOutput<T> model_forward(Graph<T>& g, const FeatureInput& feats, const ModelConfig& cfg,
                               const ModelParamsT<T>& p, const ForwardOptions<T>& opts) {
  cfg.validate();
  check_arg(feats.n_frames >= 1, "forward: empty video");
  auto embedded = embed_project(g, feats, cfg, p);
  StreamSetT<T> e;
  e.v = embedded[0];
  e.t = embedded[1];
  e.a = embedded[2];
  e.f = aggregate_fusion_token(g, e.v, e.t, e.a, cfg.agg_mode, p);
  StreamSetT<T> h = apply_tpe_lme(g, e, cfg, p);

  ForwardOutput<T> out;
  out.trace.n_frames = feats.n_frames;
  out.trace.heads = cfg.heads;
  for (int l = 0; l < cfg.layers; ++l) {
    for (int b = 0; b < cfg.mst_blocks; ++b) {
      const int block = l * cfg.mst_blocks + b;
      const int window = cfg.window_schedule[size_t(block)];
      for (int s = 0; s < 4; ++s) {
        const auto& bp =
            cfg.share_mst_params ? p.mst[size_t(block)][0] : p.mst[size_t(block)][size_t(s)];
        h.stream(s) = mst_block(g, h.stream(s), window, bp, cfg, opts);
      }
    }
    for (int b = 0; b < cfg.cmf_blocks; ++b) {
      const int block = l * cfg.cmf_blocks + b;
      auto res = cmf_block(g, h.f, h.v, h.t, h.a, p.cmf[size_t(block)], cfg, opts);
      h.f = res.fused;
      if (opts.want_trace) out.trace.blocks.push_back({std::move(res.trace_weights)});
    }
  }
  out.fused = h.f;
  out.scores = prediction_head(g, h.f, p);
  return out;
}

}  // namespace tsumm
