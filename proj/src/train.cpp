#include "tsumm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <cstdlib>
#include <numeric>
#include <thread>

namespace tsumm {

OptimState make_optim_state(ModelParams& params) {
  OptimState s;
  for (auto& [name, t] : collect_params(params)) {
    s.m.emplace_back(t->numel(), 0.f);
    s.v.emplace_back(t->numel(), 0.f);
  }
  return s;
}

void adamw_step(std::vector<std::pair<std::string, Tensor*>>& params,
                const std::vector<uint8_t>& no_decay, OptimState& state, double lr,
                double weight_decay) {
  check_arg(params.size() == state.m.size() && params.size() == no_decay.size(),
            "adamw: state/parameter count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor* t = params[p].second;
    check_arg(t->grad() != nullptr, "adamw: parameter '" + params[p].first + "' has no grad");
    check_arg(t->numel() == state.m[p].size(), "adamw: moment shape mismatch");
    float* theta = t->data();
    const float* g = t->grad();
    float* m = state.m[p].data();
    float* v = state.v[p].data();
    const bool decay = !no_decay[p] && weight_decay != 0.0;
    for (size_t i = 0; i < t->numel(); ++i) {
      if (!std::isfinite(double(g[i])))
        throw std::runtime_error("adamw: non-finite gradient in '" + params[p].first + "'");
      m[i] = float(state.beta1 * m[i] + (1.0 - state.beta1) * g[i]);
      v[i] = float(state.beta2 * v[i] + (1.0 - state.beta2) * double(g[i]) * double(g[i]));
      const double m_hat = double(m[i]) / bc1;
      const double v_hat = double(v[i]) / bc2;
      double next = double(theta[i]);
      if (decay) next -= lr * weight_decay * next;
      next -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
      theta[i] = float(next);
    }
  }
}

double cosine_lr_at(int64_t step, int64_t total_steps, double base_lr, double min_lr) {
  check_arg(total_steps > 0, "cosine schedule: total_steps must be positive");
  check_arg(step >= 0 && step <= total_steps, "cosine schedule: step outside [0, total_steps]");
  const double progress = double(step) / double(total_steps);
  return min_lr + (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress)) / 2.0;
}

void TrainConfig::validate() const {
  check_arg(epochs >= 1, "train config: epochs must be >= 1");
  check_arg(batch_size >= 1, "train config: batch_size must be >= 1");
  check_arg(base_lr >= 0.0 && min_lr >= 0.0, "train config: learning rates must be >= 0");
  check_arg(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
}

int thread_cap() {
  const char* env = std::getenv("TRIPLESUMM_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return std::max(1, std::min(64, v));
}

EvalReport evaluate_model(const std::vector<VideoRecord>& records, const ModelConfig& cfg,
                          ModelParams& params) {
  for (const auto& rec : records)
    if (!rec.has_gt())
      throw std::invalid_argument("evaluate: record '" + rec.id + "' has no ground truth");
  std::vector<ScoredVideo> scored(records.size());
  const int threads = std::min<int>(thread_cap(), int(records.size()));
  auto work = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < records.size(); i += step) {
      scored[i].id = records[i].id;
      scored[i].pred = predict(records[i].features(), cfg, params).scores;
      scored[i].gt = records[i].gt;
    }
  };
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(work, size_t(t), size_t(threads));
    work(0, size_t(threads));
    for (auto& th : pool) th.join();
  }
  return evaluate_scores(scored);
}

namespace {

std::optional<double> mean_tau_on(const std::vector<VideoRecord>& split, const ModelConfig& cfg,
                                  ModelParams& params) {
  if (split.empty()) return std::nullopt;
  return evaluate_model(split, cfg, params).mean_tau;
}

ModelParams clone_params(const ModelConfig& cfg, ModelParams& src) {
  return cast_params<float>(cfg, src);
}

}  // namespace

TrainResult train(const ModelConfig& cfg, ModelParams& params, OptimState& opt,
                  const std::vector<VideoRecord>& train_split,
                  const std::vector<VideoRecord>& val_split, const TrainConfig& tc,
                  int start_epoch, const std::function<void(const EpochStats&)>& on_epoch,
                  int stop_epoch) {
  cfg.validate();
  tc.validate();
  check_arg(!train_split.empty(), "train: empty training split");
  for (const auto& rec : train_split)
    check_arg(rec.has_gt(), "train: record '" + rec.id + "' has no ground truth");

  auto plist = collect_params(params);
  std::vector<uint8_t> no_decay;
  visit_params<float>(params, [&](const std::string&, Tensor&, bool nd) {
    no_decay.push_back(nd ? 1 : 0);
  });

  const int n = int(train_split.size());
  const int64_t updates_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const int64_t total_updates = int64_t(tc.epochs) * updates_per_epoch;
  int64_t update_idx = int64_t(start_epoch) * updates_per_epoch;

  TrainResult result;
  result.best_val_tau = -2.0;

  const int last_epoch = stop_epoch < 0 ? tc.epochs : std::min(tc.epochs, stop_epoch);
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(tc.seed, 0xE60Cu, uint64_t(epoch)));
    shuffle_rng.shuffle(order.data(), order.size());

    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (int b0 = 0; b0 < n; b0 += tc.batch_size) {
      const int b1 = std::min(n, b0 + tc.batch_size);
      for (auto& [name, t] : plist) t->zero_grad();
      for (int pos = b0; pos < b1; ++pos) {
        const VideoRecord& rec = train_split[size_t(order[size_t(pos)])];
        Rng drop_rng(Rng::mix(tc.seed, 0xD607u, uint64_t(epoch), uint64_t(pos)));
        Graph<float> g;
        ForwardOptions<float> opts;
        opts.training = true;
        opts.dropout_rng = &drop_rng;
        auto out = model_forward(g, rec.features(), cfg, params, opts);
        Tensor loss = compute_loss(g, out.scores, rec.gt);
        const double loss_val = double(loss.at(0));
        if (!std::isfinite(loss_val))
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", video '" + rec.id + "' (diverged)");
        loss_sum += loss_val;
        g.backward(loss);
      }
      const double inv = 1.0 / double(b1 - b0);
      for (auto& [name, t] : plist) {
        float* grad = t->grad();
        for (size_t i = 0; i < t->numel(); ++i) grad[i] = float(grad[i] * inv);
      }
      last_lr = cosine_lr_at(update_idx, total_updates, tc.base_lr, tc.min_lr);
      adamw_step(plist, no_decay, opt, last_lr, tc.weight_decay);
      ++update_idx;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / double(n);
    stats.lr = last_lr;
    if (!val_split.empty()) {
      EvalReport rep = evaluate_model(val_split, cfg, params);
      stats.val_tau = rep.mean_tau;
      stats.val_rho = rep.mean_rho;
      if (rep.mean_tau && *rep.mean_tau > result.best_val_tau) {
        result.best_val_tau = *rep.mean_tau;
        result.best_epoch = epoch;
        result.best_params = clone_params(cfg, params);
      }
    }
    if (tc.eval_train_tau || tc.early_stop_train_tau > 0.0)
      stats.train_tau = mean_tau_on(train_split, cfg, params);
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(stats);
    if (tc.early_stop_train_tau > 0.0 && stats.train_tau &&
        *stats.train_tau >= tc.early_stop_train_tau)
      break;
  }
  if (result.best_epoch < 0) result.best_params = clone_params(cfg, params);
  return result;
}

// ---- checkpoint io ----

namespace {

constexpr char kCkptMagic[4] = {'T', 'S', 'C', 'K'};
constexpr uint16_t kCkptVersion = 1;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v & 0xFF));
  out.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t((v >> (8 * i)) & 0xFF));
}
void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}
void put_f64(std::vector<uint8_t>& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct CkptReader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  const std::string& path;
  void need(size_t k) const {
    if (pos + k > buf.size()) throw std::runtime_error("checkpoint '" + path + "': truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(buf[pos]) | uint16_t(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  float f32() {
    const uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  double f64() {
    const uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str(size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), len);
    pos += len;
    return s;
  }
};

}  // namespace

Checkpoint save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams& params,
                           const OptimState* opt, int epochs_done, double best_val_tau) {
  auto plist = collect_params(params);
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kCkptMagic, kCkptMagic + 4);
  put_u16(buf, kCkptVersion);
  put_u64(buf, cfg.hash());
  put_u32(buf, uint32_t(plist.size()));
  for (auto& [name, t] : plist) {
    put_u16(buf, uint16_t(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    buf.push_back(uint8_t(t->rank()));
    for (int d : t->shape()) put_u32(buf, uint32_t(d));
    for (size_t i = 0; i < t->numel(); ++i) put_f32(buf, t->data()[i]);
  }
  buf.push_back(opt ? 1 : 0);
  if (opt) {
    check_arg(opt->m.size() == plist.size(), "checkpoint: optimizer state size mismatch");
    put_u64(buf, uint64_t(opt->step));
    for (size_t p = 0; p < plist.size(); ++p) {
      for (float f : opt->m[p]) put_f32(buf, f);
      for (float f : opt->v[p]) put_f32(buf, f);
    }
  }
  put_u32(buf, uint32_t(epochs_done));
  put_f64(buf, best_val_tau);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint '" + path + "'");
  return {cfg.hash(), epochs_done, best_val_tau, opt != nullptr};
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams& params,
                           OptimState* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  CkptReader r{buf, 0, path};
  r.need(4);
  if (std::memcmp(buf.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint '" + path + "': bad magic");
  r.pos = 4;
  if (r.u16() != kCkptVersion)
    throw std::runtime_error("checkpoint '" + path + "': unsupported version");
  const uint64_t hash = r.u64();
  if (hash != cfg.hash())
    throw std::runtime_error("checkpoint '" + path +
                             "': config hash mismatch (file was written with a different model "
                             "configuration)");
  auto plist = collect_params(params);
  const uint32_t n_tensors = r.u32();
  if (n_tensors != plist.size())
    throw std::runtime_error("checkpoint '" + path + "': tensor count mismatch");
  for (auto& [name, t] : plist) {
    const std::string fname = r.str(r.u16());
    if (fname != name)
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + fname + "' where '" +
                               name + "' expected");
    const int rank = r.u8();
    if (rank != t->rank())
      throw std::runtime_error("checkpoint '" + path + "': rank mismatch for '" + name + "'");
    for (int d = 0; d < rank; ++d)
      if (int(r.u32()) != t->shape()[size_t(d)])
        throw std::runtime_error("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    for (size_t i = 0; i < t->numel(); ++i) t->data()[i] = r.f32();
  }
  Checkpoint ck;
  ck.config_hash = hash;
  ck.has_optimizer = r.u8() != 0;
  if (ck.has_optimizer) {
    const int64_t step = int64_t(r.u64());
    if (opt) {
      if (opt->m.size() != plist.size()) *opt = make_optim_state(params);
      opt->step = step;
      for (size_t p = 0; p < plist.size(); ++p) {
        for (auto& f : opt->m[p]) f = r.f32();
        for (auto& f : opt->v[p]) f = r.f32();
      }
    } else {
      for (size_t p = 0; p < plist.size(); ++p) {
        for (size_t i = 0; i < 2 * plist[p].second->numel(); ++i) r.f32();
      }
    }
  }
  ck.epochs_done = int(r.u32());
  ck.best_val_tau = r.f64();
  return ck;
}

}  // namespace tsumm
