// jt/trainer.hpp
//
// The alternating training loop: N unsupervised (contrastive) updates per
// supervised (CTC) update, with per-loss optimizers and schedules, periodic
// greedy-decode evaluation, early stopping, and deterministic resume.

#pragma once

#include <limits>
#include <string>
#include <vector>

#include "jt/data.hpp"
#include "jt/losses.hpp"
#include "jt/model.hpp"
#include "jt/optimizer.hpp"

namespace jt {

struct TrainerConfig {
  int update_ratio = 1;       // N unsupervised updates per supervised update
  long total_updates = 0;     // combined across both phases
  long warmup_updates = 0;    // counted per optimizer
  double lr_unsup = 5e-4;
  double lr_sup = 2.5e-5;     // default keeps the 20:1 ratio
  double encoder_grad_scale = 0.1;
  long eval_every = 500;
  int patience = 0;           // evals without WER improvement; 0 disables
  std::uint64_t seed = 0;
  double unsup_batch_seconds = 1.6;
  double sup_batch_seconds = 1.6;
  bool specaugment_enabled = true;
  bool single_optimizer = false;  // ablation: one Adam state for both losses
  double valid_fraction = 0.1;
  ContrastiveConfig contrastive;

  void validate() const;
};

// An infinitely cycling shuffled view of a corpus: reshuffles and repacks
// whenever the current pass is exhausted, so the N:1 alternation never
// stalls. Fully serializable for bitwise resume.
struct CorpusStream {
  Rng rng;
  BatchPlan plan;
  size_t cursor = 0;

  std::vector<int> next_batch(const Corpus& corpus, double budget_seconds);
};

struct TrainState {
  long global_updates = 0;
  long unsup_updates = 0;
  long sup_updates = 0;
  long skipped_single_frame = 0;  // unsupervised: no negatives possible
  long skipped_infeasible = 0;    // supervised: target longer than frames
  double best_wer = std::numeric_limits<double>::infinity();
  long evals_since_best = 0;
  std::string trace;  // one 'U'/'S' per completed update

  AdamState opt_unsup, opt_sup;
  Rng rng_mask, rng_neg, rng_layer_drop, rng_dropout, rng_aug;
  CorpusStream stream_unsup, stream_sup;

  static TrainState init(const TrainerConfig& cfg, const Model& model);
};

// Deterministic split of a labeled corpus into (train, validation): the
// trailing `fraction` of utterances (at least one) becomes validation.
std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction);

// One optimizer update on a batch of unlabeled utterances: mask, contrast,
// backward, encoder-grad scale, Adam at the scheduled unsupervised lr.
// Single-frame utterances are skipped and counted. Returns the mean loss.
double unsup_step(Model& model, const Corpus& corpus,
                  const std::vector<int>& batch, const TrainerConfig& cfg,
                  TrainState& state);

// One optimizer update on a batch of labeled utterances: optional
// SpecAugment-style masking once the supervised optimizer is past warmup,
// CTC, backward, encoder-grad scale, Adam at the scheduled supervised lr.
// Infeasible utterances are skipped and counted. Returns the mean loss.
double sup_step(Model& model, const Corpus& corpus,
                const std::vector<int>& batch, const TrainerConfig& cfg,
                TrainState& state);

struct EvalReport {
  double wer = 0.0;
  double cer = 0.0;
  long utts = 0;
};

// Greedy-decode WER/CER over a labeled corpus; consumes no training RNG.
EvalReport evaluate_greedy(const Model& model, const Corpus& corpus);

struct TrainResult {
  bool diverged = false;
  bool early_stopped = false;
  double best_wer = std::numeric_limits<double>::infinity();
  double final_wer = std::numeric_limits<double>::infinity();
  double final_cer = std::numeric_limits<double>::infinity();
};

// Runs the (U^N S)* loop from the given state until cfg.total_updates,
// evaluating every eval_every updates on a validation split carved from
// `labeled`. An empty `unlabeled` corpus degenerates to supervised-only
// training (trace SSS…). When `run_dir` is nonempty, writes metrics.jsonl,
// config echo, and best/last checkpoints there. On divergence (non-finite
// loss) stops immediately without overwriting saved checkpoints.
// `updates_limit` > 0 pauses after that many updates in this call (saving
// last.ckpt when a run dir is set) so a later call can resume.
TrainResult train(const TrainerConfig& cfg, const Corpus& labeled,
                  const Corpus& unlabeled, Model& model, TrainState& state,
                  const std::string& run_dir = "", long updates_limit = 0);

struct SweepCell {
  int update_ratio = 1;
  double lr_ratio = 20.0;  // lr_unsup / lr_sup
  bool single_optimizer = false;
  double wer = 0.0;
  double cer = 0.0;
};

// Grid over (update ratio, lr ratio, shared-vs-separate optimizer); each
// cell trains a fresh model from the base config and reports validation
// WER/CER. When `out_path` is nonempty the table is also written there.
std::vector<SweepCell> hyperparam_sweep(
    const TrainerConfig& base, const ModelConfig& model_cfg,
    const Corpus& labeled, const Corpus& unlabeled,
    const std::vector<int>& update_ratios, const std::vector<double>& lr_ratios,
    const std::vector<bool>& optimizer_modes, const std::string& out_path = "");

}  // namespace jt
