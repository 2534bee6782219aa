// jt/trainer.cpp

#include "jt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "jt/checkpoint.hpp"
#include "jt/decode.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace jt {

void TrainerConfig::validate() const {
  JT_CHECK(update_ratio >= 1, "trainer: update_ratio must be >= 1");
  JT_CHECK(total_updates >= 1, "trainer: total_updates must be >= 1");
  JT_CHECK(warmup_updates >= 0, "trainer: negative warmup");
  JT_CHECK(lr_unsup > 0.0 && lr_sup > 0.0, "trainer: learning rates must be positive");
  JT_CHECK(encoder_grad_scale >= 0.0, "trainer: negative encoder grad scale");
  JT_CHECK(eval_every >= 1, "trainer: eval_every must be >= 1");
  JT_CHECK(patience >= 0, "trainer: negative patience");
  JT_CHECK(unsup_batch_seconds > 0.0 && sup_batch_seconds > 0.0,
           "trainer: batch budgets must be positive");
  JT_CHECK(valid_fraction > 0.0 && valid_fraction < 1.0,
           "trainer: valid_fraction out of (0,1)");
  contrastive.validate();
}

namespace {

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t k) {
  return base ^ (0x9E3779B97F4A7C15ULL * (k + 1));
}

// How many of the first `total` updates of the (U^N S)* cycle are
// unsupervised.
long unsup_share(long total, int n) {
  long cycles = total / (n + 1);
  long rem = total % (n + 1);
  return cycles * n + std::min<long>(rem, n);
}

LrSchedule unsup_schedule(const TrainerConfig& cfg) {
  LrSchedule s;
  s.kind = ScheduleKind::WarmupLinearDecay;
  s.peak = cfg.lr_unsup;
  s.warmup_updates = cfg.warmup_updates;
  s.total_updates = cfg.single_optimizer
                        ? cfg.total_updates
                        : unsup_share(cfg.total_updates, cfg.update_ratio);
  // short runs never leave warmup; degenerate but valid
  s.total_updates = std::max(s.total_updates, s.warmup_updates);
  return s;
}

LrSchedule sup_schedule(const TrainerConfig& cfg) {
  LrSchedule s;
  s.kind = ScheduleKind::WarmupConstant;
  s.peak = cfg.lr_sup;
  s.warmup_updates = cfg.warmup_updates;
  s.total_updates = cfg.single_optimizer
                        ? cfg.total_updates
                        : cfg.total_updates -
                              unsup_share(cfg.total_updates, cfg.update_ratio);
  s.total_updates = std::max(s.total_updates, s.warmup_updates);
  return s;
}

}  // namespace

std::vector<int> CorpusStream::next_batch(const Corpus& corpus,
                                          double budget_seconds) {
  if (cursor >= plan.batches.size()) {
    plan = plan_batches(corpus, budget_seconds, rng);
    cursor = 0;
  }
  return plan.batches[cursor++];
}

TrainState TrainState::init(const TrainerConfig& cfg, const Model& model) {
  TrainState s;
  AdamConfig acfg;
  s.opt_unsup = AdamState(acfg, model.params());
  s.opt_sup = AdamState(acfg, model.params());
  s.rng_mask = Rng(stream_seed(cfg.seed, 1));
  s.rng_neg = Rng(stream_seed(cfg.seed, 2));
  s.rng_layer_drop = Rng(stream_seed(cfg.seed, 3));
  s.rng_dropout = Rng(stream_seed(cfg.seed, 4));
  s.rng_aug = Rng(stream_seed(cfg.seed, 5));
  s.stream_unsup.rng = Rng(stream_seed(cfg.seed, 6));
  s.stream_sup.rng = Rng(stream_seed(cfg.seed, 7));
  return s;
}

std::pair<Corpus, Corpus> split_validation(const Corpus& corpus, double fraction) {
  JT_CHECK(corpus.size() >= 2, "split_validation: need at least two utterances");
  size_t n_valid = static_cast<size_t>(
      std::lround(fraction * static_cast<double>(corpus.size())));
  n_valid = std::clamp<size_t>(n_valid, 1, corpus.size() - 1);
  Corpus train, valid;
  train.sample_rate = valid.sample_rate = corpus.sample_rate;
  for (size_t i = 0; i < corpus.size(); ++i)
    (i < corpus.size() - n_valid ? train : valid).utts.push_back(corpus.utts[i]);
  return {train, valid};
}

double unsup_step(Model& model, const Corpus& corpus,
                  const std::vector<int>& batch, const TrainerConfig& cfg,
                  TrainState& state) {
  JT_CHECK(!batch.empty(), "unsup_step: empty batch");
  std::vector<const Utterance*> usable;
  for (int idx : batch) {
    const Utterance& u = corpus.utts[static_cast<size_t>(idx)];
    if (model.config().frame_count(static_cast<int>(u.samples.size())) < 2)
      ++state.skipped_single_frame;  // no negatives for one frame
    else
      usable.push_back(&u);
  }
  JT_CHECK(!usable.empty(), "unsup_step: no usable utterance in the batch");

  model.params().zero_grad();
  const double m = static_cast<double>(usable.size());
  double total = 0.0;
  for (const Utterance* u : usable) {
    Tensor z = model.encode(normalize(*u).samples);
    MaskPlan plan = model.sample_mask_plan(z.dim(0), state.rng_mask);
    Tensor zhat = model.apply_mask(z, plan);
    Tensor ztilde = model.contextualize(zhat, /*train=*/true,
                                        state.rng_layer_drop, state.rng_dropout);
    Tensor loss = contrastive_loss(z, ztilde, plan, cfg.contrastive, state.rng_neg);
    total += loss.scalar();
    backward(scale(loss, 1.0 / m));
  }
  model.params().ensure_grads();
  scale_encoder_grads(model.params(), cfg.encoder_grad_scale);

  AdamState& opt = state.opt_unsup;  // shared state in single-optimizer mode
  opt.apply(model.params(), unsup_schedule(cfg).lr_at(opt.step_count() + 1));
  ++state.unsup_updates;
  return total / m;
}

double sup_step(Model& model, const Corpus& corpus,
                const std::vector<int>& batch, const TrainerConfig& cfg,
                TrainState& state) {
  JT_CHECK(!batch.empty(), "sup_step: empty batch");
  Tokenizer tok;
  std::vector<std::pair<const Utterance*, CtcTarget>> usable;
  for (int idx : batch) {
    const Utterance& u = corpus.utts[static_cast<size_t>(idx)];
    JT_CHECK(!u.transcript.empty(), "sup_step: unlabeled utterance " << u.id);
    CtcTarget target{tok.encode(u.transcript), u.id};
    int frames = model.config().frame_count(static_cast<int>(u.samples.size()));
    if (frames < ctc_min_frames(target.tokens))
      ++state.skipped_infeasible;
    else
      usable.emplace_back(&u, std::move(target));
  }
  JT_CHECK(!usable.empty(), "sup_step: no feasible utterance in the batch");

  AdamState& opt = cfg.single_optimizer ? state.opt_unsup : state.opt_sup;
  const bool augment = cfg.specaugment_enabled &&
                       opt.step_count() >= cfg.warmup_updates;

  model.params().zero_grad();
  const double m = static_cast<double>(usable.size());
  double total = 0.0;
  for (const auto& [u, target] : usable) {
    Tensor z = model.encode(normalize(*u).samples);
    if (augment) z = specaugment_mask(model, z, /*train=*/true, state.rng_aug);
    Tensor ztilde = model.contextualize(z, /*train=*/true, state.rng_layer_drop,
                                        state.rng_dropout);
    Tensor logprobs = model.classify(ztilde);
    Tensor loss = ctc_loss(logprobs, target, Tokenizer::kBlankId);
    total += loss.scalar();
    backward(scale(loss, 1.0 / m));
  }
  model.params().ensure_grads();
  scale_encoder_grads(model.params(), cfg.encoder_grad_scale);
  // single-optimizer ablation shares state and schedule with the
  // unsupervised loss; otherwise the supervised schedule applies
  const LrSchedule sched =
      cfg.single_optimizer ? unsup_schedule(cfg) : sup_schedule(cfg);
  opt.apply(model.params(), sched.lr_at(opt.step_count() + 1));
  ++state.sup_updates;
  return total / m;
}

EvalReport evaluate_greedy(const Model& model, const Corpus& corpus) {
  JT_CHECK(!corpus.empty(), "evaluate_greedy: empty corpus");
  Tokenizer tok;
  Rng quiet(0);  // eval-mode forwards draw nothing
  EditStats wer_acc, cer_acc;
  for (const Utterance& u : corpus.utts) {
    JT_CHECK(!u.transcript.empty(), "evaluate_greedy: unlabeled utterance " << u.id);
    Tensor z = model.encode(normalize(u).samples);
    Tensor ztilde = model.contextualize(z, /*train=*/false, quiet, quiet);
    Tensor logprobs = model.classify(ztilde);
    std::string hyp = tok.decode(greedy_decode(logprobs, Tokenizer::kBlankId));
    EditStats w = word_errors(split_words(u.transcript), split_words(hyp));
    EditStats c = char_errors(u.transcript, hyp);
    wer_acc.errors += w.errors;
    wer_acc.ref_len += w.ref_len;
    cer_acc.errors += c.errors;
    cer_acc.ref_len += c.ref_len;
  }
  return {wer_acc.rate(), cer_acc.rate(), static_cast<long>(corpus.size())};
}

namespace {

// Mean eval-mode losses over (up to) max_utts utterances, for the loss
// curves. Uses a local RNG so training streams stay untouched.
std::pair<double, double> mean_losses(const Model& model, const Corpus& corpus,
                                      const TrainerConfig& cfg,
                                      std::uint64_t seed, size_t max_utts) {
  Rng local(seed), quiet(0);
  Tokenizer tok;
  double lu = 0, ls = 0;
  long nu = 0, ns = 0;
  const size_t count = std::min(max_utts, corpus.size());
  for (size_t i = 0; i < count; ++i) {
    const Utterance& u = corpus.utts[i];
    Tensor z = model.encode(normalize(u).samples);
    if (z.dim(0) >= 2) {
      MaskPlan plan = model.sample_mask_plan(z.dim(0), local);
      Tensor zhat = model.apply_mask(z, plan);
      Tensor zt = model.contextualize(zhat, false, quiet, quiet);
      lu += contrastive_loss(z, zt, plan, cfg.contrastive, local).scalar();
      ++nu;
    }
    if (!u.transcript.empty()) {
      CtcTarget target{tok.encode(u.transcript), u.id};
      if (z.dim(0) >= ctc_min_frames(target.tokens)) {
        Tensor zt = model.contextualize(z, false, quiet, quiet);
        ls += ctc_loss(model.classify(zt), target, Tokenizer::kBlankId).scalar();
        ++ns;
      }
    }
  }
  return {nu ? lu / static_cast<double>(nu) : 0.0,
          ns ? ls / static_cast<double>(ns) : 0.0};
}

json config_echo(const TrainerConfig& c) {
  return json{{"update_ratio", c.update_ratio},
              {"total_updates", c.total_updates},
              {"warmup_updates", c.warmup_updates},
              {"lr_unsup", c.lr_unsup},
              {"lr_sup", c.lr_sup},
              {"encoder_grad_scale", c.encoder_grad_scale},
              {"eval_every", c.eval_every},
              {"patience", c.patience},
              {"seed", c.seed},
              {"unsup_batch_seconds", c.unsup_batch_seconds},
              {"sup_batch_seconds", c.sup_batch_seconds},
              {"specaugment_enabled", c.specaugment_enabled},
              {"single_optimizer", c.single_optimizer},
              {"valid_fraction", c.valid_fraction},
              {"temperature", c.contrastive.temperature},
              {"num_negatives", c.contrastive.num_negatives}};
}

}  // namespace

TrainResult train(const TrainerConfig& cfg, const Corpus& labeled,
                  const Corpus& unlabeled, Model& model, TrainState& state,
                  const std::string& run_dir, long updates_limit) {
  cfg.validate();
  JT_CHECK(!labeled.empty(), "train: labeled corpus is empty");
  auto [train_l, valid] = split_validation(labeled, cfg.valid_fraction);
  const bool have_unsup = !unlabeled.empty();
  const int n = cfg.update_ratio;

  std::ofstream metrics;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    std::ofstream echo(fs::path(run_dir) / "config.json");
    echo << config_echo(cfg).dump(2) << "\n";
    metrics.open(fs::path(run_dir) / "metrics.jsonl", std::ios::app);
  }

  TrainResult result;
  result.best_wer = state.best_wer;
  bool saved_any = false;

  auto run_eval = [&]() {
    EvalReport ev = evaluate_greedy(model, valid);
    result.final_wer = ev.wer;
    result.final_cer = ev.cer;
    if (metrics.is_open()) {
      auto [lu_t, ls_t] =
          mean_losses(model, train_l, cfg, cfg.seed ^ 0xE7A1ULL, 32);
      auto [lu_v, ls_v] =
          mean_losses(model, valid, cfg, cfg.seed ^ 0xE7A2ULL, 32);
      metrics << json{{"step", state.global_updates},
                      {"split", "valid"},
                      {"wer", ev.wer},
                      {"cer", ev.cer}}
                     .dump()
              << "\n";
      metrics << json{{"step", state.global_updates},
                      {"split", "train"},
                      {"loss_unsup", lu_t},
                      {"loss_sup", ls_t}}
                     .dump()
              << "\n";
      metrics << json{{"step", state.global_updates},
                      {"split", "valid"},
                      {"loss_unsup", lu_v},
                      {"loss_sup", ls_v}}
                     .dump()
              << "\n";
      metrics << json{{"step", state.global_updates},
                      {"skipped_single_frame", state.skipped_single_frame},
                      {"skipped_infeasible", state.skipped_infeasible}}
                     .dump()
              << "\n";
      metrics.flush();
    }
    if (ev.wer < state.best_wer) {
      state.best_wer = ev.wer;
      state.evals_since_best = 0;
      if (!run_dir.empty())
        save_checkpoint((fs::path(run_dir) / "best.ckpt").string(), model, cfg,
                        state);
    } else {
      ++state.evals_since_best;
    }
    if (!run_dir.empty()) {
      save_checkpoint((fs::path(run_dir) / "last.ckpt").string(), model, cfg,
                      state);
      saved_any = true;
    }
    return ev;
  };

  long done_this_call = 0;
  while (state.global_updates < cfg.total_updates) {
    if (updates_limit > 0 && done_this_call >= updates_limit) {
      if (!run_dir.empty())
        save_checkpoint((fs::path(run_dir) / "last.ckpt").string(), model, cfg,
                        state);
      return result;  // paused; caller resumes later
    }
    const long pos = state.global_updates % (n + 1);
    const bool do_unsup = have_unsup && pos < n;
    const auto t0 = std::chrono::steady_clock::now();
    double loss;
    double lr;
    if (do_unsup) {
      std::vector<int> batch =
          state.stream_unsup.next_batch(unlabeled, cfg.unsup_batch_seconds);
      loss = unsup_step(model, unlabeled, batch, cfg, state);
      lr = unsup_schedule(cfg).lr_at(state.opt_unsup.step_count());
    } else {
      std::vector<int> batch =
          state.stream_sup.next_batch(train_l, cfg.sup_batch_seconds);
      loss = sup_step(model, train_l, batch, cfg, state);
      AdamState& opt = cfg.single_optimizer ? state.opt_unsup : state.opt_sup;
      lr = (cfg.single_optimizer ? unsup_schedule(cfg) : sup_schedule(cfg))
               .lr_at(opt.step_count());
    }
    ++state.global_updates;
    ++done_this_call;
    state.trace.push_back(do_unsup ? 'U' : 'S');

    if (metrics.is_open()) {
      const double wall_ms =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - t0)
              .count();
      metrics << json{{"step", state.global_updates},
                      {"phase", do_unsup ? "U" : "S"},
                      {"loss", loss},
                      {"lr", lr},
                      {"wall_ms", wall_ms}}
                     .dump()
              << "\n";
    }

    if (!std::isfinite(loss)) {
      // divergence: stop without touching previously saved checkpoints
      result.diverged = true;
      break;
    }

    if (state.global_updates % cfg.eval_every == 0 ||
        state.global_updates == cfg.total_updates) {
      run_eval();
      if (cfg.patience > 0 && state.evals_since_best >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  if (!result.diverged && !std::isfinite(result.final_wer)) run_eval();
  result.best_wer = state.best_wer;
  (void)saved_any;
  return result;
}

std::vector<SweepCell> hyperparam_sweep(
    const TrainerConfig& base, const ModelConfig& model_cfg,
    const Corpus& labeled, const Corpus& unlabeled,
    const std::vector<int>& update_ratios, const std::vector<double>& lr_ratios,
    const std::vector<bool>& optimizer_modes, const std::string& out_path) {
  JT_CHECK(!update_ratios.empty() && !lr_ratios.empty() &&
               !optimizer_modes.empty(),
           "hyperparam_sweep: empty grid axis");
  std::vector<SweepCell> cells;
  for (int ratio : update_ratios)
    for (double lr_ratio : lr_ratios)
      for (bool single : optimizer_modes) {
        JT_CHECK(lr_ratio > 0.0, "hyperparam_sweep: lr ratio must be positive");
        TrainerConfig cfg = base;
        cfg.update_ratio = ratio;
        cfg.lr_sup = cfg.lr_unsup / lr_ratio;
        cfg.single_optimizer = single;
        Rng init(cfg.seed);  // identical init across cells
        Model model(model_cfg, init);
        TrainState state = TrainState::init(cfg, model);
        TrainResult r = train(cfg, labeled, unlabeled, model, state);
        cells.push_back({ratio, lr_ratio, single, r.final_wer, r.final_cer});
      }
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    JT_CHECK(os.good(), "hyperparam_sweep: cannot write " << out_path);
    os << "update_ratio\tlr_ratio\toptimizer\twer\tcer\n";
    for (const SweepCell& c : cells)
      os << c.update_ratio << "\t" << c.lr_ratio << "\t"
         << (c.single_optimizer ? "single" : "separate") << "\t" << c.wer
         << "\t" << c.cer << "\n";
  }
  return cells;
}

}  // namespace jt
