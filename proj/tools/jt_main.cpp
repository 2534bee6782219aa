// jt command-line front end: corpus synthesis, training, evaluation,
// sweeps, gradient checks, and metric plots.
//
// Exit codes: 0 success, 2 malformed flags/config, 3 missing path,
// 4 data or configuration rejected by the library, 5 unexpected failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "jt/checkpoint.hpp"
#include "jt/decode.hpp"
#include "jt/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissingPath = 3;
constexpr int kExitDataError = 4;
constexpr int kExitInternal = 5;

void require_exists(const std::string& path) {
  if (!fs::exists(path)) {
    std::cerr << "error: path does not exist: " << path << "\n";
    std::exit(kExitMissingPath);
  }
}

void echo_config(const std::string& config_path, const std::string& out_dir) {
  if (config_path.empty()) return;
  fs::create_directories(out_dir);
  fs::copy_file(config_path, fs::path(out_dir) / "config.echo.ini",
                fs::copy_options::overwrite_existing);
}

jt::ModelConfig preset_model(const std::string& preset) {
  if (preset == "paper") return jt::ModelConfig::paper_base();
  return jt::ModelConfig::toy();
}

// ---- synth-data -------------------------------------------------------

struct SynthArgs {
  std::string out;
  jt::CorpusSpec spec;
  bool drop_transcripts = false;
};

int run_synth(const SynthArgs& a) {
  jt::Corpus corpus = jt::generate_corpus(a.spec);
  if (a.drop_transcripts)
    for (jt::Utterance& u : corpus.utts) u.transcript.clear();
  jt::save_corpus(corpus, a.out);
  std::cout << "wrote " << corpus.size() << " utterances to " << a.out << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------

struct TrainArgs {
  std::string labeled, unlabeled, out, preset = "toy";
  jt::TrainerConfig cfg;
  double min_duration = 0.2, max_duration = 3.3;
  bool no_specaugment = false;
  int lm_order = 4;
};

int run_train(const TrainArgs& a) {
  require_exists(a.labeled);
  jt::Corpus labeled =
      jt::filter_by_duration(jt::load_corpus(a.labeled), a.min_duration,
                             a.max_duration);
  jt::Corpus unlabeled;
  if (!a.unlabeled.empty()) {
    require_exists(a.unlabeled);
    unlabeled = jt::filter_by_duration(jt::load_corpus(a.unlabeled),
                                       a.min_duration, a.max_duration);
  }
  jt::TrainerConfig cfg = a.cfg;
  cfg.specaugment_enabled = !a.no_specaugment;

  jt::Rng init(cfg.seed);
  jt::Model model(preset_model(a.preset), init);
  jt::TrainState state = jt::TrainState::init(cfg, model);
  jt::TrainResult r = jt::train(cfg, labeled, unlabeled, model, state, a.out);

  // word-level LM fitted on the training transcripts, for fused decoding
  auto [train_split, valid_split] =
      jt::split_validation(labeled, cfg.valid_fraction);
  std::vector<std::string> texts;
  for (const jt::Utterance& u : train_split.utts) texts.push_back(u.transcript);
  jt::train_ngram(texts, a.lm_order).save((fs::path(a.out) / "lm.txt").string());

  std::cout << "updates " << state.global_updates << " (U " << state.unsup_updates
            << ", S " << state.sup_updates << ")\n"
            << "best valid WER " << r.best_wer << ", final WER " << r.final_wer
            << ", final CER " << r.final_cer << "\n"
            << "skipped: " << state.skipped_single_frame << " single-frame, "
            << state.skipped_infeasible << " infeasible\n";
  if (r.diverged) {
    std::cout << "run diverged; last saved checkpoint retained\n";
    return kExitDataError;
  }
  return 0;
}

// ---- eval -------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, out, lm_path;
  int beam = 1;
  double alpha = 0.0, beta = 0.0;
};

int run_eval(const EvalArgs& a) {
  require_exists(a.ckpt);
  require_exists(a.data);
  jt::ModelConfig mc = jt::read_checkpoint_model_config(a.ckpt);
  jt::Rng init(0);
  jt::Model model(mc, init);
  jt::load_checkpoint_params(a.ckpt, model);
  jt::Corpus corpus = jt::load_corpus(a.data);

  jt::NgramLm lm;
  jt::BeamSearchConfig bcfg;
  bcfg.beam_size = a.beam;
  bcfg.lm_weight = a.alpha;
  bcfg.word_bonus = a.beta;
  if (!a.lm_path.empty()) {
    require_exists(a.lm_path);
    lm = jt::NgramLm::load(a.lm_path);
    bcfg.lm = &lm;
  }

  std::ofstream report;
  if (!a.out.empty()) report.open(a.out);
  jt::Tokenizer tok;
  jt::Rng quiet(0);
  jt::EditStats wer_acc, cer_acc;
  for (const jt::Utterance& u : corpus.utts) {
    if (u.transcript.empty()) {
      std::cerr << "error: utterance " << u.id << " has no transcript\n";
      return kExitDataError;
    }
    jt::Tensor z = model.encode(jt::normalize(u).samples);
    jt::Tensor zt = model.contextualize(z, false, quiet, quiet);
    jt::Tensor logprobs = model.classify(zt);
    std::vector<int> ids =
        (bcfg.beam_size > 1 || bcfg.lm)
            ? jt::beam_search(logprobs, jt::Tokenizer::kBlankId, bcfg)
            : jt::greedy_decode(logprobs, jt::Tokenizer::kBlankId);
    std::string hyp = tok.decode(ids);
    jt::EditStats w =
        jt::word_errors(jt::split_words(u.transcript), jt::split_words(hyp));
    jt::EditStats c = jt::char_errors(u.transcript, hyp);
    wer_acc.errors += w.errors;
    wer_acc.ref_len += w.ref_len;
    cer_acc.errors += c.errors;
    cer_acc.ref_len += c.ref_len;
    if (report.is_open())
      report << json{{"utt_id", u.id},
                     {"ref", u.transcript},
                     {"hyp", hyp},
                     {"wer", w.ref_len ? w.rate() : 0.0},
                     {"cer", c.rate()}}
                    .dump()
             << "\n";
  }
  if (report.is_open())
    report << json{{"summary",
                    {{"utterances", corpus.size()},
                     {"wer", wer_acc.rate()},
                     {"cer", cer_acc.rate()}}}}
                  .dump()
           << "\n";
  std::cout << "utterances " << corpus.size() << "\n"
            << "WER " << wer_acc.rate() << "\n"
            << "CER " << cer_acc.rate() << "\n";
  return 0;
}

// ---- sweep ------------------------------------------------------------

struct SweepArgs {
  std::string labeled, unlabeled, out, preset = "toy";
  jt::TrainerConfig cfg;
  double min_duration = 0.2, max_duration = 3.3;
  std::vector<int> ratios = {1, 5};
  std::vector<double> lr_ratios = {1.0, 20.0};
  std::string optimizers = "both";  // both|separate|single
};

int run_sweep(const SweepArgs& a) {
  require_exists(a.labeled);
  jt::Corpus labeled =
      jt::filter_by_duration(jt::load_corpus(a.labeled), a.min_duration,
                             a.max_duration);
  jt::Corpus unlabeled;
  if (!a.unlabeled.empty()) {
    require_exists(a.unlabeled);
    unlabeled = jt::filter_by_duration(jt::load_corpus(a.unlabeled),
                                       a.min_duration, a.max_duration);
  }
  std::vector<bool> modes;
  if (a.optimizers == "both")
    modes = {false, true};
  else if (a.optimizers == "single")
    modes = {true};
  else
    modes = {false};

  auto cells = jt::hyperparam_sweep(a.cfg, preset_model(a.preset), labeled,
                                    unlabeled, a.ratios, a.lr_ratios, modes,
                                    a.out);
  std::cout << "update_ratio\tlr_ratio\toptimizer\twer\tcer\n";
  for (const auto& c : cells)
    std::cout << c.update_ratio << "\t" << c.lr_ratio << "\t"
              << (c.single_optimizer ? "single" : "separate") << "\t" << c.wer
              << "\t" << c.cer << "\n";
  return 0;
}

// ---- gradcheck --------------------------------------------------------

double fd_check(jt::Tensor& leaf, const std::function<jt::Tensor()>& build,
                const std::function<void()>& clear_grads = {}) {
  if (clear_grads) clear_grads();  // other leaves may hold stale grads
  jt::Tensor loss = build();
  jt::backward(loss);
  std::vector<double> analytic(leaf.grad().data(),
                               leaf.grad().data() + leaf.numel());
  double worst = 0.0;
  const double h = 1e-5;
  for (long i = 0; i < leaf.numel(); ++i) {
    const double orig = leaf.value()[i];
    leaf.value()[i] = orig + h;
    const double fp = build().scalar();
    leaf.value()[i] = orig - h;
    const double fm = build().scalar();
    leaf.value()[i] = orig;
    const double num = (fp - fm) / (2.0 * h);
    const double denom = std::max(
        {std::fabs(num), std::fabs(analytic[static_cast<size_t>(i)]), 1e-6});
    worst = std::max(worst,
                     std::fabs(num - analytic[static_cast<size_t>(i)]) / denom);
  }
  leaf.zero_grad();
  return worst;
}

int run_gradcheck(const std::string& component) {
  using namespace jt;
  int failures = 0;
  auto report = [&](const std::string& name, double err, double tol) {
    const bool ok = err < tol;
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  rel_err " << err
              << " (tol " << tol << ")\n";
  };

  Rng rng(11);
  if (component == "all" || component == "ops") {
    {
      Tensor a = Tensor::randn({3, 4}, 1.0, rng, true);
      Tensor b = Tensor::randn({4, 2}, 1.0, rng);
      report("matmul", fd_check(a, [&] { return sum(matmul(a, b)); }), 1e-5);
    }
    {
      Tensor x = Tensor::randn({2, 6}, 1.0, rng, true);
      report("gelu", fd_check(x, [&] { return sum(gelu(x)); }), 1e-5);
    }
    {
      Tensor x = Tensor::randn({3, 5}, 1.0, rng, true);
      Tensor g = Tensor::full({5}, 1.2, false);
      Tensor b = Tensor::full({5}, -0.3, false);
      Tensor w = Tensor::randn({3, 5}, 1.0, rng);  // break row symmetry
      report("layer_norm",
             fd_check(x, [&] { return sum(mul(layer_norm(x, g, b), w)); }), 1e-5);
    }
    {
      Tensor x = Tensor::randn({7}, 1.0, rng, true);
      report("log_softmax+select",
             fd_check(x, [&] { return cross_entropy_from_logits(x, 3); }), 1e-5);
    }
    {
      Tensor x = Tensor::randn({2, 20}, 1.0, rng, true);
      Tensor w = Tensor::randn({3, 2, 4}, 0.5, rng);
      Tensor b = Tensor::zeros({3});
      report("conv1d", fd_check(x, [&] {
               return sum(conv1d(x, w, b, 2, 1, ConvPad::None));
             }),
             1e-5);
    }
    {
      Tensor u = Tensor::randn({5, 6}, 1.0, rng, true);
      Tensor v = Tensor::randn({5, 6}, 1.0, rng);
      report("cosine", fd_check(u, [&] { return sum(cosine_similarity(u, v)); }),
             1e-5);
    }
  }

  if (component == "all" || component == "losses") {
    Rng init(3);
    Model model(ModelConfig::tiny(), init);
    std::vector<double> audio;
    Rng audio_rng(4);
    for (int i = 0; i < 80; ++i) audio.push_back(audio_rng.normal());

    Rng plan_rng(5);
    MaskPlan plan = model.sample_mask_plan(
        model.config().frame_count(static_cast<int>(audio.size())), plan_rng);
    ContrastiveConfig ccfg;
    ccfg.num_negatives = 3;
    for (const std::string& name : {"mask_emb", "enc.conv0.w", "ctx0.attn_q.w"}) {
      Tensor& leaf = model.params().get(name);
      Rng quiet(0);
      auto build = [&] {
        Rng neg(6);
        Tensor z = model.encode(audio);
        Tensor zhat = model.apply_mask(z, plan);
        Tensor zt = model.contextualize(zhat, false, quiet, quiet);
        return contrastive_loss(z, zt, plan, ccfg, neg);
      };
      report("contrastive d/d " + name,
             fd_check(leaf, build, [&] { model.params().zero_grad(); }), 1e-3);
    }
    for (const std::string& name : {"cls.w", "enc.conv1.w", "ctx0.ff1.w"}) {
      Tensor& leaf = model.params().get(name);
      Rng quiet(0);
      CtcTarget target{{0, 1, 2}, "gradcheck"};
      auto build = [&] {
        Tensor z = model.encode(audio);
        Tensor zt = model.contextualize(z, false, quiet, quiet);
        return ctc_loss(model.classify(zt), target, 4);
      };
      report("ctc d/d " + name,
             fd_check(leaf, build, [&] { model.params().zero_grad(); }), 1e-3);
    }
  }

  std::cout << (failures ? "gradcheck FAILED\n" : "gradcheck OK\n");
  return failures ? kExitDataError : 0;
}

// ---- plot -------------------------------------------------------------

int run_plot(const std::string& metrics_path, const std::string& out_csv) {
  require_exists(metrics_path);
  std::ifstream is(metrics_path);
  std::ofstream os(out_csv);
  if (!os.good()) {
    std::cerr << "error: cannot write " << out_csv << "\n";
    return kExitMissingPath;
  }
  os << "step,split,loss_unsup,loss_sup\n";
  std::string line;
  long rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    if (!rec.contains("loss_unsup")) continue;
    os << rec.at("step").get<long>() << "," << rec.at("split").get<std::string>()
       << "," << rec.at("loss_unsup").get<double>() << ","
       << rec.at("loss_sup").get<double>() << "\n";
    ++rows;
  }
  std::cout << "wrote " << rows << " rows (4 curves: unsup/sup x train/valid) to "
            << out_csv << "\n";
  return 0;
}

void add_trainer_flags(CLI::App* cmd, jt::TrainerConfig& cfg) {
  cmd->add_option("--update-ratio", cfg.update_ratio,
                  "unsupervised updates per supervised update");
  cmd->add_option("--total-updates", cfg.total_updates, "total update budget");
  cmd->add_option("--warmup", cfg.warmup_updates, "warmup updates per optimizer");
  cmd->add_option("--lr-unsup", cfg.lr_unsup, "peak unsupervised lr");
  cmd->add_option("--lr-sup", cfg.lr_sup, "peak supervised lr");
  cmd->add_option("--encoder-grad-scale", cfg.encoder_grad_scale,
                  "encoder gradient scale");
  cmd->add_option("--eval-every", cfg.eval_every, "updates between evals");
  cmd->add_option("--patience", cfg.patience, "evals without improvement (0=off)");
  cmd->add_option("--seed", cfg.seed, "run seed");
  cmd->add_option("--batch-seconds-unsup", cfg.unsup_batch_seconds,
                  "unsupervised batch budget (s)");
  cmd->add_option("--batch-seconds-sup", cfg.sup_batch_seconds,
                  "supervised batch budget (s)");
  cmd->add_flag("--single-optimizer", cfg.single_optimizer,
                "share one optimizer state across both losses");
  cmd->add_option("--valid-fraction", cfg.valid_fraction,
                  "fraction of labeled data held out for validation");
  cmd->add_option("--negatives", cfg.contrastive.num_negatives,
                  "contrastive negatives per anchor");
  cmd->add_option("--temperature", cfg.contrastive.temperature,
                  "contrastive temperature");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("JT_THREADS"))
    Eigen::setNbThreads(std::atoi(threads));

  CLI::App app{"joint self-supervised + CTC speech recognition toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat sectioned key=value config file");
  app.allow_config_extras(false);

  SynthArgs synth;
  synth.spec.num_utts = 100;
  CLI::App* cmd_synth = app.add_subcommand("synth-data", "generate a corpus");
  cmd_synth->add_option("--out", synth.out, "output directory")->required();
  cmd_synth->add_option("--utts", synth.spec.num_utts, "number of utterances");
  cmd_synth->add_option("--seed", synth.spec.seed, "generation seed");
  cmd_synth->add_option("--word-vocab", synth.spec.word_vocab_size, "word vocabulary size");
  cmd_synth->add_option("--words-min", synth.spec.words_min, "min words per utterance");
  cmd_synth->add_option("--words-max", synth.spec.words_max, "max words per utterance");
  cmd_synth->add_option("--word-len-min", synth.spec.word_len_min, "min word length");
  cmd_synth->add_option("--word-len-max", synth.spec.word_len_max, "max word length");
  cmd_synth->add_option("--noise", synth.spec.noise_sigma, "additive noise sigma");
  cmd_synth->add_option("--sample-rate", synth.spec.sample_rate, "sample rate (Hz)");
  cmd_synth->add_option("--samples-per-token", synth.spec.samples_per_token,
                        "waveform samples per token");
  cmd_synth->add_option("--id-prefix", synth.spec.id_prefix, "utterance id prefix");
  cmd_synth->add_flag("--drop-transcripts", synth.drop_transcripts,
                      "emit an unlabeled corpus");

  TrainArgs train_args;
  train_args.cfg.total_updates = 2000;
  train_args.cfg.warmup_updates = 100;
  train_args.cfg.eval_every = 200;
  CLI::App* cmd_train = app.add_subcommand("train", "run the alternating loop");
  cmd_train->add_option("--labeled", train_args.labeled, "labeled corpus dir")->required();
  cmd_train->add_option("--unlabeled", train_args.unlabeled,
                        "unlabeled corpus dir (omit for supervised-only)");
  cmd_train->add_option("--out", train_args.out, "run directory")->required();
  cmd_train->add_option("--preset", train_args.preset, "model preset")
      ->check(CLI::IsMember({"toy", "paper"}));
  cmd_train->add_option("--min-duration", train_args.min_duration, "duration filter (s)");
  cmd_train->add_option("--max-duration", train_args.max_duration, "duration filter (s)");
  cmd_train->add_flag("--no-specaugment", train_args.no_specaugment,
                      "disable supervised-phase masking augmentation");
  cmd_train->add_option("--lm-order", train_args.lm_order, "order of the fitted LM");
  add_trainer_flags(cmd_train, train_args.cfg);

  EvalArgs eval_args;
  CLI::App* cmd_eval = app.add_subcommand("eval", "decode a corpus and report WER/CER");
  cmd_eval->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  cmd_eval->add_option("--data", eval_args.data, "labeled corpus dir")->required();
  cmd_eval->add_option("--out", eval_args.out, "per-utterance report path");
  cmd_eval->add_option("--beam", eval_args.beam, "beam width (1 = greedy)");
  cmd_eval->add_option("--lm", eval_args.lm_path, "n-gram LM file for shallow fusion");
  cmd_eval->add_option("--alpha", eval_args.alpha, "LM weight");
  cmd_eval->add_option("--beta", eval_args.beta, "word insertion bonus");

  SweepArgs sweep_args;
  sweep_args.cfg.total_updates = 400;
  sweep_args.cfg.warmup_updates = 40;
  sweep_args.cfg.eval_every = 400;
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "hyperparameter grid");
  cmd_sweep->add_option("--labeled", sweep_args.labeled, "labeled corpus dir")->required();
  cmd_sweep->add_option("--unlabeled", sweep_args.unlabeled, "unlabeled corpus dir");
  cmd_sweep->add_option("--out", sweep_args.out, "results table path")->required();
  cmd_sweep->add_option("--preset", sweep_args.preset, "model preset")
      ->check(CLI::IsMember({"toy", "paper"}));
  cmd_sweep->add_option("--min-duration", sweep_args.min_duration, "duration filter (s)");
  cmd_sweep->add_option("--max-duration", sweep_args.max_duration, "duration filter (s)");
  cmd_sweep->add_option("--ratios", sweep_args.ratios, "update-ratio grid axis");
  cmd_sweep->add_option("--lr-ratios", sweep_args.lr_ratios, "lr-ratio grid axis");
  cmd_sweep->add_option("--optimizers", sweep_args.optimizers, "separate|single|both")
      ->check(CLI::IsMember({"separate", "single", "both"}));
  add_trainer_flags(cmd_sweep, sweep_args.cfg);

  std::string gradcheck_component = "all";
  CLI::App* cmd_grad = app.add_subcommand("gradcheck", "finite-difference suites");
  cmd_grad->add_option("--component", gradcheck_component, "all|ops|losses")
      ->check(CLI::IsMember({"all", "ops", "losses"}));

  std::string plot_metrics, plot_out = "curves.csv";
  CLI::App* cmd_plot = app.add_subcommand("plot", "loss curves to CSV");
  cmd_plot->add_option("--metrics", plot_metrics, "metrics.jsonl path")->required();
  cmd_plot->add_option("--out", plot_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) return run_synth(synth);
    if (cmd_train->parsed()) {
      const CLI::Option* cfg_opt = app.get_config_ptr();
      if (cfg_opt && cfg_opt->count() > 0)
        echo_config(cfg_opt->as<std::string>(), train_args.out);
      return run_train(train_args);
    }
    if (cmd_eval->parsed()) return run_eval(eval_args);
    if (cmd_sweep->parsed()) return run_sweep(sweep_args);
    if (cmd_grad->parsed()) return run_gradcheck(gradcheck_component);
    if (cmd_plot->parsed()) return run_plot(plot_metrics, plot_out);
  } catch (const jt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
