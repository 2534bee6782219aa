// tests/test_data.cpp

#include <cmath>
#include <complex>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "jt/data.hpp"
#include "jt/model.hpp"
#include "oracles.hpp"

using namespace jt;

namespace {

// Naive DFT peak frequency of a real signal (test oracle).
double dominant_frequency(const std::vector<double>& x, int sample_rate) {
  const size_t n = x.size();
  double best_mag = -1;
  size_t best_k = 0;
  for (size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc(0, 0);
    for (size_t i = 0; i < n; ++i) {
      double ang = -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(n);
      acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * sample_rate / static_cast<double>(n);
}

CorpusSpec small_spec(std::uint64_t seed) {
  CorpusSpec s;
  s.num_utts = 20;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("tokenizer round-trips random strings over its alphabet") {
  Tokenizer tok;
  Rng rng(1);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz'|";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    int len = 1 + static_cast<int>(rng.uniform_int(30));
    for (int i = 0; i < len; ++i)
      s.push_back(alphabet[static_cast<size_t>(rng.uniform_int(alphabet.size()))]);
    auto ids = tok.encode(s);
    for (int id : ids) CHECK(id != Tokenizer::kBlankId);
    CHECK(tok.decode(ids) == s);
  }
}

TEST_CASE("tokenizer rejects characters outside the alphabet") {
  Tokenizer tok;
  CHECK_THROWS_AS(tok.encode("Hello"), Error);
  CHECK_THROWS_AS(tok.decode({Tokenizer::kBlankId}), Error);
}

TEST_CASE("corpus generation is deterministic given the seed") {
  Corpus a = generate_corpus(small_spec(7));
  Corpus b = generate_corpus(small_spec(7));
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.utts[i].transcript == b.utts[i].transcript);
    CHECK(a.utts[i].samples == b.utts[i].samples);
  }
  Corpus c = generate_corpus(small_spec(8));
  CHECK(a.utts[0].transcript != c.utts[0].transcript);
}

TEST_CASE("sigma=0: same token string gives identical waveforms") {
  CorpusSpec spec = small_spec(3);
  spec.noise_sigma = 0.0;
  Corpus corpus = generate_corpus(spec);
  // find two utterances sharing a transcript, or synthesize the pairing by
  // comparing a transcript against its own regeneration
  Corpus again = generate_corpus(spec);
  CHECK(corpus.utts[0].samples == again.utts[0].samples);
}

TEST_CASE("distinct tokens have distinct dominant frequencies") {
  // build one utterance per token directly from the generator's template
  const int sr = 1000, dur = 64;
  std::set<int> peaks;
  for (int id : {0, 5, 12, 20, 27}) {
    std::vector<double> wave;
    const double f = token_frequency(id, sr);
    for (int n = 0; n < dur; ++n) wave.push_back(std::sin(2 * M_PI * f * n / sr));
    double peak = dominant_frequency(wave, sr);
    CHECK(std::fabs(peak - f) < sr / static_cast<double>(dur) + 1e-9);
    peaks.insert(static_cast<int>(std::lround(peak)));
  }
  CHECK(peaks.size() == 5);
}

TEST_CASE("num_utts=0 is an error") {
  CorpusSpec spec;
  spec.num_utts = 0;
  CHECK_THROWS_AS(generate_corpus(spec), Error);
}

TEST_CASE("normalize: mean, variance, affine invariance, guard") {
  Rng rng(9);
  Utterance u;
  u.id = "x";
  u.sample_rate = 1000;
  for (int i = 0; i < 500; ++i) u.samples.push_back(rng.normal() * 3 + 1);

  Utterance n = normalize(u);
  double mean = 0;
  for (double s : n.samples) mean += s;
  mean /= static_cast<double>(n.samples.size());
  CHECK(std::fabs(mean) < 1e-12);
  double var = 0;
  for (double s : n.samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(n.samples.size());
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-9);

  // affine input a·x+b (a>0) normalizes to the same signal
  Utterance affine = u;
  for (double& s : affine.samples) s = 2.5 * s - 7.0;
  Utterance na = normalize(affine);
  for (size_t i = 0; i < n.samples.size(); ++i)
    CHECK(na.samples[i] == doctest::Approx(n.samples[i]).epsilon(1e-9));

  // idempotent
  Utterance nn = normalize(n);
  for (size_t i = 0; i < n.samples.size(); ++i)
    CHECK(nn.samples[i] == doctest::Approx(n.samples[i]).epsilon(1e-9));

  // constant signal maps to zeros
  Utterance c;
  c.id = "c";
  c.sample_rate = 1000;
  c.samples.assign(100, 4.2);
  Utterance nc = normalize(c);
  for (double s : nc.samples) CHECK(s == 0.0);
}

TEST_CASE("normalization makes encoder output amplitude invariant") {
  Rng rng(10);
  Model model(ModelConfig::tiny(), rng);
  Utterance u;
  u.id = "x";
  u.sample_rate = 100;
  for (int i = 0; i < 60; ++i) u.samples.push_back(rng.normal());
  Utterance doubled = u;
  for (double& s : doubled.samples) s *= 2.0;
  Tensor z1 = model.encode(normalize(u).samples);
  Tensor z2 = model.encode(normalize(doubled).samples);
  CHECK(z1.value().isApprox(z2.value(), 1e-12));
}

TEST_CASE("duration filter") {
  Corpus corpus;
  corpus.sample_rate = 1000;
  auto mk = [&](const std::string& id, double secs) {
    Utterance u;
    u.id = id;
    u.sample_rate = 1000;
    u.samples.assign(static_cast<size_t>(secs * 1000), 0.1);
    corpus.utts.push_back(u);
  };
  mk("short", 1.0);
  mk("ok1", 5.0);
  mk("ok2", 20.0);
  mk("long", 40.0);

  // the paper-scale thresholds drop the 1 s and 40 s utterances
  Corpus f = filter_by_duration(corpus, 2.0, 33.0);
  REQUIRE(f.size() == 2);
  CHECK(f.utts[0].id == "ok1");
  CHECK(f.utts[1].id == "ok2");

  Corpus all = filter_by_duration(f, 0.0, 100.0);
  CHECK(all.size() == 2);  // all in range: identity

  CHECK_THROWS_AS(filter_by_duration(corpus, 10.0, 2.0), Error);
  CHECK_THROWS_AS(filter_by_duration(corpus, 90.0, 100.0), Error);
}

TEST_CASE("batch planning respects the budget and covers every utterance") {
  CorpusSpec spec = small_spec(11);
  spec.num_utts = 37;
  Corpus corpus = generate_corpus(spec);
  Rng rng(4);
  const double budget = 1.0;
  BatchPlan plan = plan_batches(corpus, budget, rng);
  std::set<int> seen;
  for (const auto& batch : plan.batches) {
    double dur = 0;
    for (int idx : batch) {
      CHECK(!seen.count(idx));
      seen.insert(idx);
      dur += corpus.utts[static_cast<size_t>(idx)].duration_s();
    }
    CHECK(dur <= budget + 1e-12);
  }
  CHECK(seen.size() == corpus.size());
}

TEST_CASE("budget equal to one utterance gives singleton batches") {
  CorpusSpec spec = small_spec(12);
  spec.words_min = spec.words_max = 3;
  spec.word_len_min = spec.word_len_max = 3;
  Corpus corpus = generate_corpus(spec);
  const double d = corpus.utts[0].duration_s();
  Rng rng(5);
  BatchPlan plan = plan_batches(corpus, d, rng);
  CHECK(plan.batches.size() == corpus.size());

  Rng rng2(6);
  CHECK_THROWS_AS(plan_batches(corpus, d / 2, rng2), Error);
}

TEST_CASE("corpus round-trips through disk losslessly") {
  namespace fsys = std::filesystem;
  CorpusSpec spec = small_spec(13);
  spec.num_utts = 5;
  Corpus corpus = generate_corpus(spec);
  const std::string dir = (fsys::temp_directory_path() / "jt_corpus_test").string();
  fsys::remove_all(dir);
  save_corpus(corpus, dir);
  Corpus loaded = load_corpus(dir);
  REQUIRE(loaded.size() == corpus.size());
  CHECK(loaded.sample_rate == corpus.sample_rate);
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded.utts[i].id == corpus.utts[i].id);
    CHECK(loaded.utts[i].transcript == corpus.utts[i].transcript);
    CHECK(loaded.utts[i].samples == corpus.utts[i].samples);
  }
  fsys::remove_all(dir);
}

TEST_CASE("specaugment variant shares the masking machinery") {
  Rng rng(14);
  Model model(ModelConfig::tiny(), rng);
  Tensor z = Tensor::randn({20, 8}, 1.0, rng);

  SUBCASE("eval mode is the identity and consumes no randomness") {
    Rng aug(1);
    Tensor out = specaugment_mask(model, z, false, aug);
    CHECK(out.value() == z.value());
    CHECK(aug.draw_count() == 0);
  }

  SUBCASE("masked rows equal the mask embedding") {
    Rng aug(2);
    Rng replay = aug;
    Tensor out = specaugment_mask(model, z, true, aug);
    MaskPlan plan = model.sample_mask_plan(20, replay);
    const Tensor& emb = model.params().get("mask_emb");
    for (int i : plan.indices)
      CHECK(out.mat().row(i).transpose().isApprox(emb.value()));
  }

  SUBCASE("masked-fraction statistics match the contrastive path") {
    // same (p, M) and the same sampler: per-utterance masked counts agree
    // draw-for-draw with sample_mask_plan on an identically seeded stream
    Rng aug(3), direct(3);
    long a = 0, b = 0;
    for (int i = 0; i < 200; ++i) {
      MaskPlan pa = model.sample_mask_plan(20, aug);
      MaskPlan pb = jt::sample_mask_plan(20, model.config().mask_start_p,
                                         model.config().mask_span, direct);
      a += pa.size();
      b += pb.size();
    }
    CHECK(a == b);
  }
}
