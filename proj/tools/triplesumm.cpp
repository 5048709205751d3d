// triplesumm: trimodal video summarization pipeline driver.
//
// Subcommands: gen-data, train, evaluate, summarize, inspect-attention.
// Exit codes: 0 success, 1 operational failure, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsumm/data.hpp"
#include "tsumm/metrics.hpp"
#include "tsumm/model.hpp"
#include "tsumm/summarize.hpp"
#include "tsumm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsumm;

namespace {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synth;
  bool input_dims_set = false;  // explicit input_dims beat auto-detection
};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("unknown config key '" + where + it.key() + "'");
}

std::vector<int> parse_window_schedule(const std::string& text) {
  std::vector<int> out;
  std::string token;
  std::istringstream ss(text);
  while (std::getline(ss, token, ',')) {
    std::string low;
    for (char c : token)
      if (!isspace(static_cast<unsigned char>(c))) low += char(tolower(c));
    if (low.empty()) continue;
    if (low == "global" || low == "n") {
      out.push_back(kGlobalWindow);
    } else {
      size_t used = 0;
      const int v = std::stoi(low, &used);
      if (used != low.size()) throw std::invalid_argument("bad window size '" + token + "'");
      out.push_back(v);
    }
  }
  if (out.empty()) throw std::invalid_argument("empty window schedule");
  return out;
}

std::string window_schedule_string(const std::vector<int>& ws) {
  std::string s;
  for (size_t i = 0; i < ws.size(); ++i) {
    if (i) s += ",";
    s += ws[i] == kGlobalWindow ? "global" : std::to_string(ws[i]);
  }
  return s;
}

void apply_model_json(ModelConfig& m, const json& j, bool& dims_set) {
  reject_unknown(j,
                 {"embed_dim", "heads", "layers", "mst_blocks", "cmf_blocks", "window_schedule",
                  "ffn_hidden", "head_hidden", "dropout", "fusion_mode", "agg_mode",
                  "share_mst_params", "input_dims", "max_seq_len"},
                 "model.");
  if (j.contains("embed_dim")) m.embed_dim = j["embed_dim"].get<int>();
  if (j.contains("heads")) m.heads = j["heads"].get<int>();
  if (j.contains("layers")) m.layers = j["layers"].get<int>();
  if (j.contains("mst_blocks")) m.mst_blocks = j["mst_blocks"].get<int>();
  if (j.contains("cmf_blocks")) m.cmf_blocks = j["cmf_blocks"].get<int>();
  if (j.contains("window_schedule")) {
    m.window_schedule.clear();
    for (const auto& w : j["window_schedule"]) {
      if (w.is_string())
        m.window_schedule.push_back(parse_window_schedule(w.get<std::string>())[0]);
      else
        m.window_schedule.push_back(w.get<int>());
    }
  }
  if (j.contains("ffn_hidden")) m.ffn_hidden = j["ffn_hidden"].get<int>();
  if (j.contains("head_hidden")) m.head_hidden = j["head_hidden"].get<int>();
  if (j.contains("dropout")) m.dropout = j["dropout"].get<double>();
  if (j.contains("fusion_mode")) m.fusion_mode = fusion_mode_from_string(j["fusion_mode"]);
  if (j.contains("agg_mode")) m.agg_mode = agg_mode_from_string(j["agg_mode"]);
  if (j.contains("share_mst_params")) m.share_mst_params = j["share_mst_params"].get<bool>();
  if (j.contains("input_dims")) {
    for (int i = 0; i < 3; ++i) m.input_dims[size_t(i)] = j["input_dims"].at(size_t(i)).get<int>();
    dims_set = true;
  }
  if (j.contains("max_seq_len")) m.max_seq_len = j["max_seq_len"].get<int>();
}

void apply_train_json(TrainConfig& t, const json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "seed", "base_lr", "min_lr", "weight_decay",
                  "eval_train_tau", "early_stop_train_tau"},
                 "train.");
  if (j.contains("epochs")) t.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
  if (j.contains("base_lr")) t.base_lr = j["base_lr"].get<double>();
  if (j.contains("min_lr")) t.min_lr = j["min_lr"].get<double>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("eval_train_tau")) t.eval_train_tau = j["eval_train_tau"].get<bool>();
  if (j.contains("early_stop_train_tau"))
    t.early_stop_train_tau = j["early_stop_train_tau"].get<double>();
}

void apply_synth_json(SyntheticSpec& s, const json& j) {
  reject_unknown(j,
                 {"n_videos", "min_frames", "max_frames", "dims", "stay_prob", "noise",
                  "text_dropout", "decoy_content", "seed"},
                 "synthetic.");
  if (j.contains("n_videos")) s.n_videos = j["n_videos"].get<int>();
  if (j.contains("min_frames")) s.min_frames = j["min_frames"].get<int>();
  if (j.contains("max_frames")) s.max_frames = j["max_frames"].get<int>();
  if (j.contains("dims"))
    for (int i = 0; i < 3; ++i) s.dims[size_t(i)] = j["dims"].at(size_t(i)).get<int>();
  if (j.contains("stay_prob")) s.stay_prob = j["stay_prob"].get<double>();
  if (j.contains("noise")) s.noise = j["noise"].get<double>();
  if (j.contains("text_dropout")) s.text_dropout = j["text_dropout"].get<double>();
  if (j.contains("decoy_content")) s.decoy_content = j["decoy_content"].get<bool>();
  if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config '" + path + "': invalid JSON: " + e.what());
  }
  reject_unknown(j, {"model", "train", "synthetic"}, "");
  if (j.contains("model")) apply_model_json(rc.model, j["model"], rc.input_dims_set);
  if (j.contains("train")) apply_train_json(rc.train, j["train"]);
  if (j.contains("synthetic")) apply_synth_json(rc.synth, j["synthetic"]);
  return rc;
}

json model_to_json(const ModelConfig& m) {
  return json{{"embed_dim", m.embed_dim},
              {"heads", m.heads},
              {"layers", m.layers},
              {"mst_blocks", m.mst_blocks},
              {"cmf_blocks", m.cmf_blocks},
              {"window_schedule", m.window_schedule},
              {"ffn_hidden", m.resolved_ffn_hidden()},
              {"head_hidden", m.head_hidden},
              {"dropout", m.dropout},
              {"fusion_mode", to_string(m.fusion_mode)},
              {"agg_mode", to_string(m.agg_mode)},
              {"share_mst_params", m.share_mst_params},
              {"input_dims", m.input_dims},
              {"max_seq_len", m.max_seq_len}};
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"seed", t.seed},
              {"base_lr", t.base_lr},
              {"min_lr", t.min_lr},
              {"weight_decay", t.weight_decay},
              {"eval_train_tau", t.eval_train_tau},
              {"early_stop_train_tau", t.early_stop_train_tau}};
}

json synth_to_json(const SyntheticSpec& s) {
  return json{{"n_videos", s.n_videos},   {"min_frames", s.min_frames},
              {"max_frames", s.max_frames}, {"dims", s.dims},
              {"stay_prob", s.stay_prob}, {"noise", s.noise},
              {"text_dropout", s.text_dropout}, {"decoy_content", s.decoy_content},
              {"seed", s.seed}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::set<int> parse_keep_ranks(const std::string& text) {
  std::set<int> out;
  std::istringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    const int r = std::stoi(token);
    if (r < 1 || r > 3) throw std::invalid_argument("keep-ranks entries must be 1, 2, or 3");
    out.insert(r);
  }
  if (out.empty()) throw std::invalid_argument("empty keep-ranks");
  return out;
}

// Flags shared by every model-loading command; values overlay the config file.
struct ModelFlags {
  std::string config_path;
  CLI::Option* fusion = nullptr;
  CLI::Option* agg = nullptr;
  CLI::Option* windows = nullptr;
  CLI::Option* share = nullptr;
  std::string fusion_mode, agg_mode, window_schedule, share_mst;
  int embed_dim = 0, heads = 0, layers = 0, mst_blocks = 0, cmf_blocks = 0;
  int ffn_hidden = -1, head_hidden = 0, max_seq_len = 0;
  double dropout = -1.0;
  std::vector<int> input_dims;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    fusion = cmd->add_option("--fusion-mode", fusion_mode, "dynamic | global | static");
    agg = cmd->add_option("--agg-mode", agg_mode, "average | learnable | no_fusion");
    windows = cmd->add_option("--window-schedule", window_schedule,
                              "comma list, e.g. 5,15,45,global");
    share = cmd->add_option("--share-mst", share_mst, "on | off");
    cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--layers", layers, "interleaved layers");
    cmd->add_option("--mst-blocks", mst_blocks, "temporal blocks per layer");
    cmd->add_option("--cmf-blocks", cmf_blocks, "fusion blocks per layer");
    cmd->add_option("--ffn-hidden", ffn_hidden, "FFN hidden extent (0 = derived)");
    cmd->add_option("--head-hidden", head_hidden, "prediction head hidden dim");
    cmd->add_option("--dropout", dropout, "dropout rate");
    cmd->add_option("--input-dims", input_dims, "visual,text,audio feature dims")->expected(3);
    cmd->add_option("--max-seq-len", max_seq_len, "maximum sequence length");
  }

  void overlay(RunConfig& rc) const {
    ModelConfig& m = rc.model;
    if (fusion && fusion->count()) m.fusion_mode = fusion_mode_from_string(fusion_mode);
    if (agg && agg->count()) m.agg_mode = agg_mode_from_string(agg_mode);
    if (windows && windows->count()) m.window_schedule = parse_window_schedule(window_schedule);
    if (share && share->count()) {
      if (share_mst != "on" && share_mst != "off")
        throw std::invalid_argument("--share-mst expects on or off");
      m.share_mst_params = share_mst == "on";
    }
    if (embed_dim > 0) m.embed_dim = embed_dim;
    if (heads > 0) m.heads = heads;
    if (layers > 0) m.layers = layers;
    if (mst_blocks > 0) m.mst_blocks = mst_blocks;
    if (cmf_blocks > 0) m.cmf_blocks = cmf_blocks;
    if (ffn_hidden >= 0) m.ffn_hidden = ffn_hidden;
    if (head_hidden > 0) m.head_hidden = head_hidden;
    if (dropout >= 0.0) m.dropout = dropout;
    if (!input_dims.empty()) {
      for (int i = 0; i < 3; ++i) m.input_dims[size_t(i)] = input_dims[size_t(i)];
      rc.input_dims_set = true;
    }
    if (max_seq_len > 0) m.max_seq_len = max_seq_len;
  }
};

ModelParams load_model(const std::string& checkpoint, ModelConfig& cfg) {
  ModelParams params = make_params<float>(cfg, true);
  load_checkpoint(checkpoint, cfg, params, nullptr);
  return params;
}

// ---- subcommands ----

int cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
  rc.synth.validate();
  fs::create_directories(out_dir);
  auto records = generate_synthetic(rc.synth);
  DatasetManifest manifest;
  for (const auto& rec : records) {
    const std::string file = rec.id + ".tsmm";
    write_record(rec, out_dir + "/" + file);
    ManifestEntry e;
    e.id = rec.id;
    e.path = file;
    e.n_frames = rec.n_frames;
    e.dims = rec.dims;
    e.has_gt = rec.has_gt();
    e.tags = rec.meta;
    manifest.records.push_back(std::move(e));
  }
  split_dataset(manifest, {0.8, 0.1, 0.1}, rc.synth.seed);
  write_manifest(manifest, out_dir + "/manifest.json");
  write_text(out_dir + "/synthetic_spec.json", json{{"synthetic", synth_to_json(rc.synth)}}.dump(2));
  std::printf("wrote %zu records to %s\n", records.size(), out_dir.c_str());
  return 0;
}

int cmd_train(RunConfig rc, const std::string& data_dir, const std::string& run_dir, bool resume,
              int stop_after) {
  auto manifest = read_manifest(data_dir + "/manifest.json");
  auto train_split = load_split(manifest, data_dir, "train");
  auto val_split = load_split(manifest, data_dir, "val");
  if (train_split.empty()) throw std::runtime_error("no training records in " + data_dir);
  if (!rc.input_dims_set) rc.model.input_dims = train_split[0].dims;
  rc.model.validate();
  rc.train.validate();

  fs::create_directories(run_dir);
  json echo{{"model", model_to_json(rc.model)}, {"train", train_to_json(rc.train)}};
  write_text(run_dir + "/config.json", echo.dump(2));

  ModelParams params = init_params(rc.model, rc.train.seed);
  OptimState opt = make_optim_state(params);
  int start_epoch = 0;
  if (resume) {
    auto ck = load_checkpoint(run_dir + "/last.ckpt", rc.model, params, &opt);
    start_epoch = ck.epochs_done;
    std::printf("resuming from epoch %d\n", start_epoch);
  }

  json history = json::array();
  auto on_epoch = [&](const EpochStats& st) {
    json row{{"epoch", st.epoch}, {"train_loss", st.train_loss}, {"lr", st.lr}};
    if (st.val_tau) row["val_tau"] = *st.val_tau;
    if (st.val_rho) row["val_rho"] = *st.val_rho;
    if (st.train_tau) row["train_tau"] = *st.train_tau;
    history.push_back(row);
    std::printf("epoch %3d  loss %.6f%s\n", st.epoch, st.train_loss,
                st.val_tau ? ("  val_tau " + std::to_string(*st.val_tau)).c_str() : "");
    std::fflush(stdout);
  };

  auto result = train(rc.model, params, opt, train_split, val_split, rc.train, start_epoch,
                      on_epoch, stop_after);

  save_checkpoint(run_dir + "/last.ckpt", rc.model, params, &opt, result.epochs_run,
                  result.best_val_tau);
  ModelParams& best = result.best_epoch >= 0 ? result.best_params : params;
  save_checkpoint(run_dir + "/best.ckpt", rc.model, best, nullptr, result.epochs_run,
                  result.best_val_tau);
  json hist{{"epochs", history},
            {"best_epoch", result.best_epoch},
            {"best_val_tau", result.best_val_tau},
            {"epochs_run", result.epochs_run}};
  write_text(run_dir + "/history.json", hist.dump(2));
  std::printf("finished %d epochs; checkpoints in %s\n", result.epochs_run, run_dir.c_str());
  return 0;
}

int cmd_evaluate(RunConfig rc, const std::string& checkpoint, const std::string& scores_path,
                 bool gt_oracle, const std::string& data_dir, const std::string& split,
                 const std::string& out_path, const std::string& csv_path) {
  auto manifest = read_manifest(data_dir + "/manifest.json");
  auto records = load_split(manifest, data_dir, split);
  if (records.empty()) throw std::runtime_error("split '" + split + "' is empty");

  EvalReport report;
  if (gt_oracle) {
    std::vector<ScoredVideo> scored;
    for (const auto& rec : records) scored.push_back({rec.id, rec.gt, rec.gt});
    report = evaluate_scores(scored);
  } else if (!scores_path.empty()) {
    std::ifstream in(scores_path);
    if (!in) throw std::runtime_error("cannot open scores '" + scores_path + "'");
    json j;
    in >> j;
    std::vector<ScoredVideo> scored;
    for (const auto& rec : records) {
      if (!j.contains(rec.id))
        throw std::runtime_error("scores file lacks an entry for '" + rec.id + "'");
      ScoredVideo sv;
      sv.id = rec.id;
      sv.pred = j[rec.id].get<std::vector<float>>();
      if (int(sv.pred.size()) != rec.n_frames)
        throw std::runtime_error("score length mismatch for '" + rec.id + "'");
      sv.gt = rec.gt;
      scored.push_back(std::move(sv));
    }
    report = evaluate_scores(scored);
  } else {
    if (checkpoint.empty())
      throw std::invalid_argument("evaluate needs --checkpoint, --scores, or --gt-oracle");
    if (!rc.input_dims_set) rc.model.input_dims = records[0].dims;
    ModelParams params = load_model(checkpoint, rc.model);
    report = evaluate_model(records, rc.model, params);
  }

  const std::string js = report.to_json();
  if (!out_path.empty())
    write_text(out_path, js);
  else
    std::printf("%s\n", js.c_str());
  if (!csv_path.empty()) write_text(csv_path, report.to_csv());
  auto show = [](const std::optional<double>& v) { return v ? *v : std::nan(""); };
  std::printf("videos %d  skipped %d  tau %.4f  rho %.4f  map50 %.4f  map15 %.4f\n",
              report.video_count, report.skipped_correlation, show(report.mean_tau),
              show(report.mean_rho), show(report.mean_map50), show(report.mean_map15));
  return 0;
}

int cmd_summarize(RunConfig rc, const std::string& checkpoint, const std::string& record_path,
                  double budget, int max_shots, double penalty, const std::string& kts_features,
                  const std::string& out_path) {
  VideoRecord rec = read_record(record_path);
  if (!rc.input_dims_set) rc.model.input_dims = rec.dims;
  ModelParams params = load_model(checkpoint, rc.model);
  auto pred = predict(rec.features(), rc.model, params);

  SummaryOptions opts;
  opts.budget_fraction = budget;
  opts.max_shots = max_shots;
  opts.penalty = penalty;
  SummarySelection sel;
  if (kts_features == "visual") {
    sel = generate_summary(pred.scores, rec.visual, rec.dims[0], opts);
  } else if (kts_features == "fused") {
    sel = generate_summary(pred.scores, pred.fused, rc.model.embed_dim, opts);
  } else {
    throw std::invalid_argument("--kts-features expects fused or visual");
  }
  const std::string js = sel.to_json(rec.id);
  if (!out_path.empty())
    write_text(out_path, js);
  else
    std::printf("%s\n", js.c_str());
  std::printf("selected %zu of %d shots within %d frames\n", sel.selected.size(),
              sel.partition.shot_count(), sel.budget_frames);
  return 0;
}

int cmd_inspect(RunConfig rc, const std::string& checkpoint, const std::string& record_path,
                const std::string& keep_ranks, const std::string& out_path,
                const std::string& masked_out) {
  VideoRecord rec = read_record(record_path);
  if (!rc.input_dims_set) rc.model.input_dims = rec.dims;
  ModelParams params = load_model(checkpoint, rc.model);
  auto pred = predict(rec.features(), rc.model, params, true);

  json blocks = json::array();
  for (size_t b = 0; b < pred.trace.blocks.size(); ++b) {
    json frames = json::array();
    json avg = json::array();
    for (int i = 0; i < pred.trace.n_frames; ++i) {
      json heads = json::array();
      for (int h = 0; h < pred.trace.heads; ++h)
        heads.push_back({pred.trace.weight(int(b), i, h, 0), pred.trace.weight(int(b), i, h, 1),
                         pred.trace.weight(int(b), i, h, 2)});
      frames.push_back(heads);
      auto a = pred.trace.head_avg(int(b), i);
      avg.push_back({a[0], a[1], a[2]});
    }
    blocks.push_back({{"block", b}, {"weights", frames}, {"head_avg", avg}});
  }
  json j{{"id", rec.id},
         {"n_frames", pred.trace.n_frames},
         {"heads", pred.trace.heads},
         {"fusion_mode", to_string(rc.model.fusion_mode)},
         {"scores", pred.scores},
         {"blocks", blocks}};
  const std::string js = j.dump(2);
  if (!out_path.empty())
    write_text(out_path, js);
  else
    std::printf("%s\n", js.c_str());

  if (!keep_ranks.empty()) {
    auto ranks = parse_keep_ranks(keep_ranks);
    auto masked = masked_forward(rec.features(), rc.model, params, ranks);
    json scores{{rec.id, masked}};
    const std::string path = masked_out.empty() ? "masked_scores.json" : masked_out;
    write_text(path, scores.dump(2));
    std::printf("masked scores written to %s\n", path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triplesumm: trimodal video summarization pipeline"};
  app.require_subcommand(1);
  app.footer("TRIPLESUMM_THREADS caps internal parallelism (default 1).");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic planted-saliency dataset");
  std::string gen_config, gen_out = "data";
  uint64_t gen_seed = 0;
  int gen_n = 0, gen_min_frames = 0, gen_max_frames = 0;
  double gen_noise = -1.0, gen_stay = -1.0, gen_text_dropout = -1.0;
  int gen_decoy = -1;
  std::vector<int> gen_dims;
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--config", gen_config, "JSON run configuration (synthetic section)");
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n-videos", gen_n, "number of videos");
  gen->add_option("--min-frames", gen_min_frames, "minimum frames per video");
  gen->add_option("--max-frames", gen_max_frames, "maximum frames per video");
  gen->add_option("--dims", gen_dims, "visual,text,audio feature dims")->expected(3);
  gen->add_option("--noise", gen_noise, "noise level");
  gen->add_option("--stay-prob", gen_stay, "dominance chain self-transition probability");
  gen->add_option("--text-dropout", gen_text_dropout, "fraction of frames with dropped text");
  gen->add_option("--decoy-content", gen_decoy, "non-dominant channels carry decoy content (0/1)");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  ModelFlags tr_model;
  tr_model.attach(tr);
  std::string tr_data, tr_run = "run";
  bool tr_resume = false;
  int tr_stop_after = -1;
  int tr_epochs = 0, tr_batch = 0;
  double tr_lr = -1.0, tr_min_lr = -1.0, tr_wd = -1.0, tr_early = -1.0;
  bool tr_eval_train_tau = false;
  uint64_t tr_seed = 0;
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--data-dir", tr_data, "dataset directory with manifest.json")->required();
  tr->add_option("--run-dir", tr_run, "output run directory");
  tr->add_flag("--resume", tr_resume, "resume from <run-dir>/last.ckpt");
  tr->add_option("--stop-after", tr_stop_after,
                 "pause after this many epochs; the schedule still spans --epochs");
  tr->add_option("--epochs", tr_epochs, "training epochs");
  tr->add_option("--batch-size", tr_batch, "videos per optimizer step");
  tr->add_option("--lr", tr_lr, "initial learning rate");
  tr->add_option("--min-lr", tr_min_lr, "final cosine learning rate");
  tr->add_option("--weight-decay", tr_wd, "decoupled weight decay");
  tr->add_flag("--eval-train-tau", tr_eval_train_tau, "evaluate tau on the training split");
  tr->add_option("--early-stop-train-tau", tr_early, "stop once training tau reaches this");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint or score file on a split");
  ModelFlags ev_model;
  ev_model.attach(ev);
  std::string ev_ckpt, ev_scores, ev_data, ev_split = "test", ev_out, ev_csv;
  bool ev_oracle = false;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  ev->add_option("--scores", ev_scores, "JSON score file {id: [frame scores]}");
  ev->add_flag("--gt-oracle", ev_oracle, "score ground truth against itself");
  ev->add_option("--data-dir", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--out", ev_out, "write the JSON report here");
  ev->add_option("--csv", ev_csv, "write per-video CSV rows here");

  // summarize
  auto* su = app.add_subcommand("summarize", "produce a summary selection for one record");
  ModelFlags su_model;
  su_model.attach(su);
  std::string su_ckpt, su_record, su_out, su_kts = "fused";
  double su_budget = 0.15, su_penalty = 1.0;
  int su_max_shots = 0;
  su->add_option("--checkpoint", su_ckpt, "model checkpoint")->required();
  su->add_option("--record", su_record, "record file (.tsmm)")->required();
  su->add_option("--budget", su_budget, "summary budget fraction");
  su->add_option("--max-shots", su_max_shots, "segmentation cap (0 = N/10)");
  su->add_option("--penalty", su_penalty, "segmentation penalty");
  su->add_option("--kts-features", su_kts, "fused | visual");
  su->add_option("--out", su_out, "write the summary JSON here");

  // inspect-attention
  auto* in = app.add_subcommand("inspect-attention", "dump fusion attention traces");
  ModelFlags in_model;
  in_model.attach(in);
  std::string in_ckpt, in_record, in_out, in_ranks, in_masked_out;
  in->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  in->add_option("--record", in_record, "record file (.tsmm)")->required();
  in->add_option("--keep-ranks", in_ranks, "comma list of ranks to keep, e.g. 1,2");
  in->add_option("--out", in_out, "write the trace JSON here");
  in->add_option("--masked-scores-out", in_masked_out, "write rank-masked scores here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig rc = load_run_config(gen_config);
      if (gen_seed_opt->count()) rc.synth.seed = gen_seed;
      if (gen_n > 0) rc.synth.n_videos = gen_n;
      if (gen_min_frames > 0) rc.synth.min_frames = gen_min_frames;
      if (gen_max_frames > 0) rc.synth.max_frames = gen_max_frames;
      if (!gen_dims.empty())
        for (int i = 0; i < 3; ++i) rc.synth.dims[size_t(i)] = gen_dims[size_t(i)];
      if (gen_noise >= 0.0) rc.synth.noise = gen_noise;
      if (gen_stay >= 0.0) rc.synth.stay_prob = gen_stay;
      if (gen_text_dropout >= 0.0) rc.synth.text_dropout = gen_text_dropout;
      if (gen_decoy >= 0) rc.synth.decoy_content = gen_decoy != 0;
      return cmd_gen_data(rc, gen_out);
    }
    if (tr->parsed()) {
      RunConfig rc = load_run_config(tr_model.config_path);
      tr_model.overlay(rc);
      if (tr_seed_opt->count()) rc.train.seed = tr_seed;
      if (tr_epochs > 0) rc.train.epochs = tr_epochs;
      if (tr_batch > 0) rc.train.batch_size = tr_batch;
      if (tr_lr >= 0.0) rc.train.base_lr = tr_lr;
      if (tr_min_lr >= 0.0) rc.train.min_lr = tr_min_lr;
      if (tr_wd >= 0.0) rc.train.weight_decay = tr_wd;
      if (tr_eval_train_tau) rc.train.eval_train_tau = true;
      if (tr_early >= 0.0) rc.train.early_stop_train_tau = tr_early;
      return cmd_train(rc, tr_data, tr_run, tr_resume, tr_stop_after);
    }
    if (ev->parsed()) {
      RunConfig rc = load_run_config(ev_model.config_path);
      ev_model.overlay(rc);
      return cmd_evaluate(rc, ev_ckpt, ev_scores, ev_oracle, ev_data, ev_split, ev_out, ev_csv);
    }
    if (su->parsed()) {
      RunConfig rc = load_run_config(su_model.config_path);
      su_model.overlay(rc);
      return cmd_summarize(rc, su_ckpt, su_record, su_budget, su_max_shots, su_penalty, su_kts,
                           su_out);
    }
    if (in->parsed()) {
      RunConfig rc = load_run_config(in_model.config_path);
      in_model.overlay(rc);
      return cmd_inspect(rc, in_ckpt, in_record, in_ranks, in_out, in_masked_out);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
