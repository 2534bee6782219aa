// jt/decode.hpp
//
// CTC decoding (greedy and prefix beam search with optional n-gram LM
// shallow fusion) and edit-distance metrics.

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "jt/tensor.hpp"

namespace jt {

// Best-path decoding: per-frame argmax, collapse adjacent repeats, drop
// blanks.
std::vector<int> greedy_decode(const Tensor& logprobs, int blank);

enum class LmSmoothing { AddK, KneserNey };

// Word-level n-gram model with backoff. Contexts and words are plain
// strings; probabilities are conditional on up to order-1 preceding words.
class NgramLm {
 public:
  NgramLm() = default;

  int order() const { return order_; }
  const std::set<std::string>& vocab() const { return vocab_; }

  // log p(word | context); context longer than order-1 is truncated from
  // the left. Unseen words score at or above a uniform floor.
  double log_prob(const std::vector<std::string>& context,
                  const std::string& word) const;

  double sentence_log_prob(const std::vector<std::string>& words) const;

  // Plain-text count/backoff listing.
  void save(const std::string& path) const;
  static NgramLm load(const std::string& path);

  friend NgramLm train_ngram(const std::vector<std::string>& transcripts,
                             int n, LmSmoothing smoothing, double add_k);

 private:
  double prob_at_order(const std::vector<std::string>& context,
                       const std::string& word, int ctx_len) const;

  int order_ = 0;
  LmSmoothing smoothing_ = LmSmoothing::AddK;
  double add_k_ = 0.1;
  double kn_discount_ = 0.75;
  std::set<std::string> vocab_;
  // counts[L]: context of L words (space-joined, empty for unigrams) →
  // word → count
  std::vector<std::map<std::string, std::map<std::string, double>>> counts_;
};

// Transcripts use '|' (or space) as the word boundary. Throws on n < 1 or
// empty input.
NgramLm train_ngram(const std::vector<std::string>& transcripts, int n,
                    LmSmoothing smoothing = LmSmoothing::AddK,
                    double add_k = 0.1);

// Per-word perplexity of the model on held-out transcripts.
double perplexity(const NgramLm& lm, const std::vector<std::string>& transcripts);

struct BeamSearchConfig {
  int beam_size = 8;
  const NgramLm* lm = nullptr;  // optional
  double lm_weight = 0.0;       // α
  double word_bonus = 0.0;      // β, added per completed word
};

// CTC prefix beam search over the lattice; hypotheses with identical
// prefixes are merged by logsumexp. When an LM is fused, completed words
// (at boundary-token emissions and at the end of the utterance) add
// α·log p_LM(word|context) + β to the hypothesis score. If `score` is
// given, it receives the winning hypothesis' combined log score.
std::vector<int> beam_search(const Tensor& logprobs, int blank,
                             const BeamSearchConfig& cfg,
                             double* score = nullptr);

struct EditStats {
  long errors = 0;
  long ref_len = 0;
  double rate() const {
    JT_CHECK(ref_len > 0, "error rate undefined for empty reference");
    return static_cast<double>(errors) / static_cast<double>(ref_len);
  }
};

EditStats word_errors(const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp);
EditStats char_errors(const std::string& ref, const std::string& hyp);

// Splits a transcript on '|' or space, dropping empty fields.
std::vector<std::string> split_words(const std::string& transcript);

}  // namespace jt
