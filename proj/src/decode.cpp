// jt/decode.cpp

#include "jt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace jt {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::string join_ctx(const std::vector<std::string>& words, size_t from) {
  std::string out;
  for (size_t i = from; i < words.size(); ++i) {
    if (i > from) out.push_back(' ');
    out += words[i];
  }
  return out;
}
}  // namespace

std::vector<int> greedy_decode(const Tensor& logprobs, int blank) {
  JT_CHECK(logprobs.ndim() == 2, "greedy_decode: logprobs must be F×V");
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < logprobs.dim(0); ++t) {
    int best = 0;
    logprobs.mat().row(t).maxCoeff(&best);
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<std::string> split_words(const std::string& transcript) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : transcript) {
    if (c == '|' || c == ' ') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// ---- n-gram LM --------------------------------------------------------

NgramLm train_ngram(const std::vector<std::string>& transcripts, int n,
                    LmSmoothing smoothing, double add_k) {
  JT_CHECK(n >= 1, "train_ngram: order must be >= 1");
  JT_CHECK(!transcripts.empty(), "train_ngram: no transcripts");
  NgramLm lm;
  lm.order_ = n;
  lm.smoothing_ = smoothing;
  lm.add_k_ = add_k;
  lm.counts_.resize(static_cast<size_t>(n));
  bool any_word = false;
  for (const std::string& t : transcripts) {
    std::vector<std::string> words = split_words(t);
    for (size_t i = 0; i < words.size(); ++i) {
      any_word = true;
      lm.vocab_.insert(words[i]);
      for (int len = 0; len < n && len <= static_cast<int>(i); ++len) {
        std::string ctx = join_ctx(
            {words.begin() + static_cast<long>(i) - len, words.begin() + static_cast<long>(i)}, 0);
        lm.counts_[static_cast<size_t>(len)][ctx][words[i]] += 1.0;
      }
    }
  }
  JT_CHECK(any_word, "train_ngram: transcripts contain no words");
  return lm;
}

double NgramLm::prob_at_order(const std::vector<std::string>& context,
                              const std::string& word, int ctx_len) const {
  const double v = static_cast<double>(vocab_.size());
  if (ctx_len == 0) {
    const auto& uni = counts_[0].at("");
    double total = 0;
    for (const auto& [w, c] : uni) total += c;
    if (smoothing_ == LmSmoothing::KneserNey && counts_.size() > 1 &&
        !counts_[1].empty()) {
      // continuation counts from the bigram table, interpolated to uniform
      double cont = 0, cont_total = 0;
      std::set<std::string> continued;
      for (const auto& [ctx, words] : counts_[1])
        for (const auto& [w, c] : words) {
          (void)c;
          cont_total += 1.0;
          continued.insert(w);
          if (w == word) cont += 1.0;
        }
      double d = kn_discount_;
      return std::max(cont - d, 0.0) / cont_total +
             d * static_cast<double>(continued.size()) / cont_total *
                 (1.0 / std::max(v, 1.0));
    }
    auto it = uni.find(word);
    double c = (it == uni.end()) ? 0.0 : it->second;
    double p = (c + add_k_) / (total + add_k_ * v);
    if (p <= 0.0) p = 1.0 / ((v + 1.0) * (total + 1.0));  // uniform floor
    return p;
  }

  std::string key = join_ctx(context, context.size() - static_cast<size_t>(ctx_len));
  auto it = counts_[static_cast<size_t>(ctx_len)].find(key);
  if (it == counts_[static_cast<size_t>(ctx_len)].end())
    return prob_at_order(context, word, ctx_len - 1);  // backoff

  const auto& dist = it->second;
  double total = 0, distinct = 0;
  for (const auto& [w, c] : dist) {
    (void)w;
    total += c;
    distinct += 1.0;
  }
  auto wit = dist.find(word);
  double c = (wit == dist.end()) ? 0.0 : wit->second;
  if (smoothing_ == LmSmoothing::KneserNey) {
    double d = kn_discount_;
    return std::max(c - d, 0.0) / total +
           d * distinct / total * prob_at_order(context, word, ctx_len - 1);
  }
  double p = (c + add_k_) / (total + add_k_ * v);
  if (p <= 0.0) return prob_at_order(context, word, ctx_len - 1);
  return p;
}

double NgramLm::log_prob(const std::vector<std::string>& context,
                         const std::string& word) const {
  JT_CHECK(order_ >= 1, "NgramLm: untrained model");
  int ctx_len = std::min<int>(order_ - 1, static_cast<int>(context.size()));
  return std::log(prob_at_order(context, word, ctx_len));
}

double NgramLm::sentence_log_prob(const std::vector<std::string>& words) const {
  double lp = 0;
  std::vector<std::string> ctx;
  for (const std::string& w : words) {
    lp += log_prob(ctx, w);
    ctx.push_back(w);
  }
  return lp;
}

double perplexity(const NgramLm& lm, const std::vector<std::string>& transcripts) {
  double lp = 0;
  long n = 0;
  for (const std::string& t : transcripts) {
    std::vector<std::string> words = split_words(t);
    lp += lm.sentence_log_prob(words);
    n += static_cast<long>(words.size());
  }
  JT_CHECK(n > 0, "perplexity: no words");
  return std::exp(-lp / static_cast<double>(n));
}

void NgramLm::save(const std::string& path) const {
  std::ofstream os(path);
  JT_CHECK(os.good(), "NgramLm::save: cannot write " << path);
  os << "\\data\\\n";
  os << "order " << order_ << "\n";
  os << "smoothing " << (smoothing_ == LmSmoothing::AddK ? "addk" : "kneser-ney")
     << " " << add_k_ << " " << kn_discount_ << "\n";
  os << "vocab " << vocab_.size() << "\n";
  for (const auto& w : vocab_) os << w << "\n";
  for (size_t len = 0; len < counts_.size(); ++len) {
    os << "\\counts-" << (len + 1) << "\\\n";
    for (const auto& [ctx, words] : counts_[len])
      for (const auto& [w, c] : words) os << ctx << "\t" << w << "\t" << c << "\n";
  }
  os << "\\end\\\n";
}

NgramLm NgramLm::load(const std::string& path) {
  std::ifstream is(path);
  JT_CHECK(is.good(), "NgramLm::load: cannot read " << path);
  NgramLm lm;
  std::string line;
  std::getline(is, line);
  JT_CHECK(line == "\\data\\", "NgramLm::load: bad header in " << path);
  std::string word, smoothing;
  size_t vocab_n = 0;
  is >> word >> lm.order_;
  JT_CHECK(word == "order", "NgramLm::load: malformed order line");
  is >> word >> smoothing >> lm.add_k_ >> lm.kn_discount_;
  lm.smoothing_ = (smoothing == "addk") ? LmSmoothing::AddK : LmSmoothing::KneserNey;
  is >> word >> vocab_n;
  for (size_t i = 0; i < vocab_n; ++i) {
    is >> word;
    lm.vocab_.insert(word);
  }
  std::getline(is, line);  // eat newline
  lm.counts_.resize(static_cast<size_t>(lm.order_));
  size_t cur = 0;
  while (std::getline(is, line)) {
    if (line == "\\end\\") break;
    if (line.rfind("\\counts-", 0) == 0) {
      cur = static_cast<size_t>(std::stoi(line.substr(8))) - 1;
      continue;
    }
    size_t t1 = line.find('\t');
    size_t t2 = line.rfind('\t');
    JT_CHECK(t1 != std::string::npos && t2 > t1,
             "NgramLm::load: malformed count line: " << line);
    lm.counts_[cur][line.substr(0, t1)][line.substr(t1 + 1, t2 - t1 - 1)] =
        std::stod(line.substr(t2 + 1));
  }
  return lm;
}

// ---- beam search ------------------------------------------------------

namespace {

struct Hyp {
  double log_pb = kNegInf;   // ending in blank
  double log_pnb = kNegInf;  // ending in non-blank
  double lm_acc = 0.0;       // α-weighted LM score + word bonuses so far

  double total() const { return lse2(log_pb, log_pnb); }
  double score() const { return total() + lm_acc; }
};

// LM increment for extending a prefix with `tok` (boundary completes the
// current word).
double lm_delta(const std::vector<int>& prefix, int tok, int boundary,
                const BeamSearchConfig& cfg) {
  if (!cfg.lm || tok != boundary) return 0.0;
  // collect the words of the prefix; the chars since the last boundary
  // form the word being completed
  std::vector<std::string> words;
  std::string cur;
  for (int id : prefix) {
    if (id == boundary) {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(id < 26 ? static_cast<char>('a' + id) : '\'');
    }
  }
  if (cur.empty()) return 0.0;  // consecutive boundaries complete nothing
  return cfg.lm_weight * cfg.lm->log_prob(words, cur) + cfg.word_bonus;
}

}  // namespace

std::vector<int> beam_search(const Tensor& logprobs, int blank,
                             const BeamSearchConfig& cfg, double* score) {
  JT_CHECK(cfg.beam_size >= 1, "beam_search: beam_size must be >= 1");
  JT_CHECK(logprobs.ndim() == 2, "beam_search: logprobs must be F×V");
  const int f = logprobs.dim(0);
  const int v = logprobs.dim(1);
  const int boundary = 27;  // tokenizer word-boundary id

  std::map<std::vector<int>, Hyp> beams;
  beams[{}] = Hyp{0.0, kNegInf, 0.0};

  // At beam_size 1 only the per-frame argmax token is expanded, which makes
  // the search coincide with greedy best-path collapse; wider beams expand
  // the full vocabulary.
  std::vector<int> token_order(static_cast<size_t>(v));

  for (int t = 0; t < f; ++t) {
    for (int tok = 0; tok < v; ++tok) token_order[static_cast<size_t>(tok)] = tok;
    const int ntok = (cfg.beam_size == 1) ? 1 : v;
    std::partial_sort(token_order.begin(), token_order.begin() + ntok,
                      token_order.end(), [&](int a, int b) {
                        return logprobs.mat()(t, a) > logprobs.mat()(t, b);
                      });
    std::map<std::vector<int>, Hyp> next;
    for (const auto& [prefix, h] : beams) {
      const double total = h.total();
      for (int ti = 0; ti < ntok; ++ti) {
        const int tok = token_order[static_cast<size_t>(ti)];
        const double lp = logprobs.mat()(t, tok);
        if (tok == blank) {
          Hyp& nh = next[prefix];
          nh.log_pb = lse2(nh.log_pb, total + lp);
          nh.lm_acc = h.lm_acc;
        } else if (!prefix.empty() && prefix.back() == tok) {
          // repeat: same prefix when continuing the emission, extended
          // prefix only across a blank
          Hyp& nh = next[prefix];
          nh.log_pnb = lse2(nh.log_pnb, h.log_pnb + lp);
          nh.lm_acc = h.lm_acc;
          std::vector<int> ext = prefix;
          ext.push_back(tok);
          Hyp& eh = next[ext];
          eh.log_pnb = lse2(eh.log_pnb, h.log_pb + lp);
          eh.lm_acc = h.lm_acc + lm_delta(prefix, tok, boundary, cfg);
        } else {
          std::vector<int> ext = prefix;
          ext.push_back(tok);
          Hyp& eh = next[ext];
          eh.log_pnb = lse2(eh.log_pnb, total + lp);
          eh.lm_acc = h.lm_acc + lm_delta(prefix, tok, boundary, cfg);
        }
      }
    }
    // prune to the beam
    std::vector<std::pair<double, const std::vector<int>*>> ranked;
    ranked.reserve(next.size());
    for (const auto& [prefix, h] : next) ranked.emplace_back(h.score(), &prefix);
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    std::map<std::vector<int>, Hyp> kept;
    for (size_t i = 0; i < ranked.size() && i < static_cast<size_t>(cfg.beam_size); ++i)
      kept[*ranked[i].second] = next[*ranked[i].second];
    beams = std::move(kept);
  }

  // finalize: score the trailing partial word, then take the best prefix
  const std::vector<int>* best = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, h] : beams) {
    double fin = h.score() + lm_delta(prefix, boundary, boundary, cfg);
    if (fin > best_score) {
      best_score = fin;
      best = &prefix;
    }
  }
  JT_CHECK(best != nullptr, "beam_search: no surviving hypothesis");
  if (score) *score = best_score;
  return *best;
}

// ---- metrics ----------------------------------------------------------

namespace {
template <typename Seq>
long levenshtein(const Seq& ref, const Seq& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      long sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}
}  // namespace

EditStats word_errors(const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp) {
  return {levenshtein(ref, hyp), static_cast<long>(ref.size())};
}

EditStats char_errors(const std::string& ref, const std::string& hyp) {
  return {levenshtein(ref, hyp), static_cast<long>(ref.size())};
}

}  // namespace jt
