// tests/oracles.hpp
//
// Independent test oracles. Everything here is deliberately written
// without using the library's backward pass or dynamic-programming
// recursions, so it can check them.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "jt/tensor.hpp"

namespace jt::oracle {

// Central finite differences of f at x, step h.
inline std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Max relative error between two gradient vectors, with an absolute floor
// so near-zero entries compare on an absolute scale.
inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b,
                          double abs_floor = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), abs_floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Checks backward() grads of a scalar-valued graph against central finite
// differences, perturbing the given leaf tensor. `build` must construct a
// fresh graph from current leaf values and return the scalar loss value.
inline double grad_check(Tensor& leaf, const std::function<double()>& build_loss,
                         const std::vector<double>& analytic_grad,
                         double h = 1e-5) {
  std::vector<double> numeric(static_cast<size_t>(leaf.numel()));
  for (long i = 0; i < leaf.numel(); ++i) {
    double orig = leaf.value()[i];
    leaf.value()[i] = orig + h;
    double fp = build_loss();
    leaf.value()[i] = orig - h;
    double fm = build_loss();
    leaf.value()[i] = orig;
    numeric[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
  }
  return max_rel_err(analytic_grad, numeric);
}

// ---- CTC brute force --------------------------------------------------
//
// Enumerates all V^F frame paths and sums the probability of those whose
// collapse (merge repeats, drop blanks) equals the target. Returns the
// negative log of that sum; +inf when no path matches.
inline double ctc_bruteforce(const std::vector<std::vector<double>>& logprobs,
                             const std::vector<int>& target, int blank) {
  const int f = static_cast<int>(logprobs.size());
  const int v = static_cast<int>(logprobs[0].size());
  double total_paths = std::pow(static_cast<double>(v), f);
  if (total_paths > 1e7) throw Error("ctc_bruteforce: instance too large");

  double acc = -std::numeric_limits<double>::infinity();
  std::vector<int> path(static_cast<size_t>(f), 0);
  auto logsumexp2 = [](double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  };
  while (true) {
    // collapse
    std::vector<int> collapsed;
    int prev = -1;
    for (int t = 0; t < f; ++t) {
      int tok = path[static_cast<size_t>(t)];
      if (tok != prev && tok != blank) collapsed.push_back(tok);
      prev = tok;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (int t = 0; t < f; ++t)
        lp += logprobs[static_cast<size_t>(t)][static_cast<size_t>(path[static_cast<size_t>(t)])];
      acc = logsumexp2(acc, lp);
    }
    // next path (odometer)
    int pos = f - 1;
    while (pos >= 0 && ++path[static_cast<size_t>(pos)] == v) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return -acc;
}

// ---- Contrastive straight line ---------------------------------------
//
// Eq.-form contrastive loss with explicit loops and no graph: cosine
// similarities scaled by 1/tau inside the exponent, positive against the
// given negatives, averaged over anchors.
inline double contrastive_straightline(
    const std::vector<std::vector<double>>& z,
    const std::vector<std::vector<double>>& ztilde,
    const std::vector<int>& anchors,
    const std::vector<std::vector<int>>& negatives, double tau,
    double eps = 1e-8) {
  auto cosine = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
  };
  double total = 0.0;
  for (size_t i = 0; i < anchors.size(); ++i) {
    int t = anchors[i];
    double pos = std::exp(cosine(z[static_cast<size_t>(t)], ztilde[static_cast<size_t>(t)]) / tau);
    double denom = pos;
    for (int tp : negatives[i])
      denom += std::exp(cosine(z[static_cast<size_t>(tp)], ztilde[static_cast<size_t>(t)]) / tau);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(anchors.size());
}

// Direct Monte-Carlo simulation of the span-masking process, independent
// of MaskPlan bookkeeping: returns the masked fraction over `frames`
// simulated frames split into utterances of `utt_len` frames.
inline double masked_fraction_sim(int frames, int utt_len, double start_p,
                                  int span_len, Rng& rng) {
  long masked_total = 0;
  int done = 0;
  while (done < frames) {
    int n = std::min(utt_len, frames - done);
    std::vector<char> m(static_cast<size_t>(n), 0);
    bool any = false;
    for (int f = 0; f < n; ++f)
      if (rng.uniform() < start_p) {
        any = true;
        for (int j = f; j < std::min(f + span_len, n); ++j) m[static_cast<size_t>(j)] = 1;
      }
    if (!any) {
      int s = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      for (int j = s; j < std::min(s + span_len, n); ++j) m[static_cast<size_t>(j)] = 1;
    }
    for (char c : m) masked_total += c;
    done += n;
  }
  return static_cast<double>(masked_total) / static_cast<double>(frames);
}

}  // namespace jt::oracle
