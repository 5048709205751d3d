#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tsumm/data.hpp"
#include "tsumm/metrics.hpp"
#include "tsumm/model.hpp"

namespace tsumm {

struct OptimState {
  std::vector<std::vector<float>> m;  // first moments, parallel to collect_params order
  std::vector<std::vector<float>> v;  // second moments
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimState make_optim_state(ModelParams& params);

// Decoupled weight decay (theta -= lr * wd * theta, skipped for no-decay
// tensors) plus the bias-corrected Adam update from the grads stored in the
// parameter tensors. Throws on non-finite gradients.
void adamw_step(std::vector<std::pair<std::string, Tensor*>>& params,
                const std::vector<uint8_t>& no_decay, OptimState& state, double lr,
                double weight_decay);

// lr = min_lr + (base_lr - min_lr) * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr_at(int64_t step, int64_t total_steps, double base_lr, double min_lr);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  uint64_t seed = 1234;
  double base_lr = 1e-4;
  double min_lr = 0.0;
  double weight_decay = 0.01;
  bool eval_train_tau = false;
  double early_stop_train_tau = 0.0;  // 0 disables early stopping

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-video squared-L2 loss
  double lr = 0.0;
  std::optional<double> val_tau;
  std::optional<double> val_rho;
  std::optional<double> train_tau;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;          // epoch with best validation tau, -1 if no val split
  double best_val_tau = 0.0;
  ModelParams best_params;      // copy of the retained parameters
  int epochs_run = 0;
};

// Internal parallelism cap: TRIPLESUMM_THREADS (default 1, clamped to [1, 64]).
int thread_cap();

// Per-video inference may fan out across threads up to thread_cap(); results
// reduce in video order, so the report is identical at any thread count.
EvalReport evaluate_model(const std::vector<VideoRecord>& records, const ModelConfig& cfg,
                          ModelParams& params);

// Deterministic training loop: seeded shuffling, per-video forward/backward
// accumulated over each batch (summed losses divided by the batch's video
// count), cosine-scheduled AdamW. Aborts with an error on non-finite loss.
// The cosine horizon is always tc.epochs; `stop_epoch` (when >= 0) pauses the
// run early without changing the schedule, for later resumption.
TrainResult train(const ModelConfig& cfg, ModelParams& params, OptimState& opt,
                  const std::vector<VideoRecord>& train_split,
                  const std::vector<VideoRecord>& val_split, const TrainConfig& tc,
                  int start_epoch = 0,
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr,
                  int stop_epoch = -1);

// ---- checkpointing (magic "TSCK") ----

struct Checkpoint {
  uint64_t config_hash = 0;
  int epochs_done = 0;
  double best_val_tau = 0.0;
  bool has_optimizer = false;
};

Checkpoint save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams& params,
                           const OptimState* opt, int epochs_done, double best_val_tau);

// Loads parameters (and optimizer state when present and requested) into the
// given structures. Fails on magic, version, or config-hash mismatch.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams& params,
                           OptimState* opt);

}  // namespace tsumm
