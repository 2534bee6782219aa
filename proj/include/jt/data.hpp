// jt/data.hpp
//
// Synthetic corpus generation, tokenization, normalization, duration
// filtering and length-budget batching.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "jt/common.hpp"

namespace jt {

struct Utterance {
  std::string id;
  std::vector<double> samples;
  int sample_rate = 0;
  std::string transcript;  // empty for unlabeled data

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct Corpus {
  std::vector<Utterance> utts;
  int sample_rate = 0;

  bool empty() const { return utts.empty(); }
  size_t size() const { return utts.size(); }
};

// 26 letters + apostrophe + word boundary, with the CTC blank appended as
// the last id (V = 29). The boundary token doubles as the space character.
class Tokenizer {
 public:
  static constexpr int kVocabSize = 29;
  static constexpr int kBlankId = 28;
  static constexpr int kBoundaryId = 27;
  static constexpr char kBoundaryChar = '|';

  std::vector<int> encode(const std::string& text) const;  // never emits blank
  std::string decode(const std::vector<int>& ids) const;
  int char_to_id(char c) const;  // throws on characters outside the alphabet
  char id_to_char(int id) const;
};

struct CorpusSpec {
  int num_utts = 0;
  int word_vocab_size = 40;
  int word_len_min = 2;
  int word_len_max = 4;
  int words_min = 2;
  int words_max = 5;
  double noise_sigma = 0.1;
  int sample_rate = 1000;
  int samples_per_token = 40;
  std::uint64_t seed = 0;
  std::string id_prefix = "utt";
};

// Frequency-coded synthesis: every token id has a distinct sine template
// of fixed duration; an utterance is the concatenation of its transcript's
// token templates plus Gaussian noise. Deterministic given the seed.
Corpus generate_corpus(const CorpusSpec& spec);

// Sine frequency assigned to a token id (distinct per token, below Nyquist
// for sample rates >= 1000).
double token_frequency(int token_id, int sample_rate);

// Zero mean, unit variance per utterance; constant signals map to zeros
// (variance guard 1e-8).
Utterance normalize(const Utterance& u);

// Keeps utterances with min_s <= duration <= max_s. Throws when the result
// is empty or the bounds are inverted.
Corpus filter_by_duration(const Corpus& corpus, double min_s, double max_s);

struct BatchPlan {
  std::vector<std::vector<int>> batches;  // utterance indices per batch
};

// Shuffles the corpus and greedily packs utterances under the duration
// budget, in order. Throws when a single utterance exceeds the budget.
BatchPlan plan_batches(const Corpus& corpus, double budget_seconds, Rng& rng);

// On-disk corpus: manifest.json plus one raw sample file per utterance
// (magic "JTAU", version, sample rate, count, raw 64-bit floats).
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace jt
