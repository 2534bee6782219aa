// jt/losses.cpp

#include "jt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace jt {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace

std::vector<int> sample_negatives(const MaskPlan& plan, int num_frames,
                                  int anchor, const ContrastiveConfig& cfg,
                                  Rng& rng) {
  cfg.validate();
  JT_CHECK(num_frames >= 2, "sample_negatives: single-frame utterance has no negatives");
  JT_CHECK(std::binary_search(plan.indices.begin(), plan.indices.end(), anchor),
           "sample_negatives: anchor " << anchor << " not in mask plan");

  std::vector<int> pool;
  if (cfg.negative_pool == NegativePool::NonMaskedFrames) {
    std::vector<char> masked(static_cast<size_t>(num_frames), 0);
    for (int i : plan.indices) masked[static_cast<size_t>(i)] = 1;
    for (int f = 0; f < num_frames; ++f)
      if (!masked[static_cast<size_t>(f)]) pool.push_back(f);
  }
  if (pool.empty()) {  // OtherFrames, or every frame masked
    for (int f = 0; f < num_frames; ++f)
      if (f != anchor) pool.push_back(f);
  }

  const int k = cfg.num_negatives;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  if (static_cast<int>(pool.size()) >= k) {
    // partial Fisher-Yates: uniform draw without replacement
    for (int i = 0; i < k; ++i) {
      size_t j = static_cast<size_t>(i) +
                 static_cast<size_t>(rng.uniform_int(pool.size() - static_cast<size_t>(i)));
      std::swap(pool[static_cast<size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<size_t>(i)]);
    }
  } else {
    for (int i = 0; i < k; ++i)
      out.push_back(pool[static_cast<size_t>(rng.uniform_int(pool.size()))]);
  }
  return out;
}

Tensor contrastive_loss(const Tensor& z, const Tensor& ztilde,
                        const MaskPlan& plan, const ContrastiveConfig& cfg,
                        Rng& rng) {
  cfg.validate();
  JT_CHECK(!plan.empty(), "contrastive_loss: empty mask plan");
  JT_CHECK(z.ndim() == 2 && ztilde.ndim() == 2 && z.shape() == ztilde.shape(),
           "contrastive_loss: z " << shape_str(z.shape()) << " vs z̃ "
                                  << shape_str(ztilde.shape()));
  const int f = z.dim(0);
  JT_CHECK(f >= 2, "contrastive_loss: need at least 2 frames");

  Tensor zn = normalize_rows(z);
  Tensor cn = normalize_rows(ztilde);
  Tensor total;
  for (int t : plan.indices) {
    std::vector<int> cand = {t};
    for (int n : sample_negatives(plan, f, t, cfg, rng)) cand.push_back(n);
    Tensor rows = select_rows(zn, cand);               // (K+1)×D
    Tensor anchor = select_rows(cn, {t});              // 1×D
    Tensor logits = scale(matmul(rows, transpose(anchor)), 1.0 / cfg.temperature);
    Tensor lt = cross_entropy_from_logits(logits, 0);  // positive at slot 0
    total = total.defined() ? add(total, lt) : lt;
  }
  return scale(total, 1.0 / static_cast<double>(plan.size()));
}

int ctc_min_frames(const std::vector<int>& tokens) {
  int n = static_cast<int>(tokens.size());
  for (size_t i = 1; i < tokens.size(); ++i)
    if (tokens[i] == tokens[i - 1]) ++n;  // repeat needs a separating blank
  return n;
}

Tensor ctc_loss(const Tensor& logprobs, const CtcTarget& target, int blank) {
  JT_CHECK(logprobs.ndim() == 2, "ctc_loss: logprobs must be F×V");
  const int f = logprobs.dim(0);
  const int v = logprobs.dim(1);
  JT_CHECK(blank >= 0 && blank < v, "ctc_loss: blank id " << blank << " out of range");
  JT_CHECK(!target.tokens.empty(), "ctc_loss: empty target");
  for (int tok : target.tokens)
    JT_CHECK(tok >= 0 && tok < v && tok != blank,
             "ctc_loss: bad target token " << tok);
  JT_CHECK(f >= ctc_min_frames(target.tokens),
           "ctc_loss: alignment infeasible, " << f << " frames for target needing "
                                              << ctc_min_frames(target.tokens));

  // blank-interleaved target: blank y1 blank y2 ... blank
  const int n = static_cast<int>(target.tokens.size());
  const int s_len = 2 * n + 1;
  std::vector<int> lab(static_cast<size_t>(s_len), blank);
  for (int i = 0; i < n; ++i) lab[static_cast<size_t>(2 * i + 1)] = target.tokens[static_cast<size_t>(i)];

  CMapMat lp = logprobs.mat();
  auto allows_skip = [&](int s) {
    return s >= 2 && lab[static_cast<size_t>(s)] != blank &&
           lab[static_cast<size_t>(s)] != lab[static_cast<size_t>(s - 2)];
  };

  MatRM alpha = MatRM::Constant(f, s_len, kNegInf);
  alpha(0, 0) = lp(0, blank);
  if (s_len > 1) alpha(0, 1) = lp(0, lab[1]);
  for (int t = 1; t < f; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = logsumexp2(a, alpha(t - 1, s - 1));
      if (allows_skip(s)) a = logsumexp2(a, alpha(t - 1, s - 2));
      alpha(t, s) = a + lp(t, lab[static_cast<size_t>(s)]);
    }
  }
  double log_p = alpha(f - 1, s_len - 1);
  if (s_len > 1) log_p = logsumexp2(log_p, alpha(f - 1, s_len - 2));
  JT_CHECK(log_p != kNegInf, "ctc_loss: zero-probability alignment");

  // beta[t][s]: suffix probability from t+1 on, excluding emission at t
  MatRM beta = MatRM::Constant(f, s_len, kNegInf);
  beta(f - 1, s_len - 1) = 0.0;
  if (s_len > 1) beta(f - 1, s_len - 2) = 0.0;
  for (int t = f - 2; t >= 0; --t) {
    for (int s = 0; s < s_len; ++s) {
      double b = beta(t + 1, s) + lp(t + 1, lab[static_cast<size_t>(s)]);
      if (s + 1 < s_len)
        b = logsumexp2(b, beta(t + 1, s + 1) + lp(t + 1, lab[static_cast<size_t>(s + 1)]));
      if (s + 2 < s_len && allows_skip(s + 2))
        b = logsumexp2(b, beta(t + 1, s + 2) + lp(t + 1, lab[static_cast<size_t>(s + 2)]));
      beta(t, s) = b;
    }
  }

  // dLoss/dlogprob[t][k] = -exp(logsum_{s: lab[s]=k}(alpha+beta) - log_p)
  MatRM grad = MatRM::Zero(f, v);
  for (int t = 0; t < f; ++t) {
    std::vector<double> acc(static_cast<size_t>(v), kNegInf);
    for (int s = 0; s < s_len; ++s) {
      double g = alpha(t, s) + beta(t, s);
      if (g == kNegInf) continue;
      size_t k = static_cast<size_t>(lab[static_cast<size_t>(s)]);
      acc[k] = logsumexp2(acc[k], g);
    }
    for (int k = 0; k < v; ++k)
      if (acc[static_cast<size_t>(k)] != kNegInf)
        grad(t, k) = -std::exp(acc[static_cast<size_t>(k)] - log_p);
  }

  Vec out(1);
  out[0] = -log_p;
  auto li = logprobs.impl();
  return make_node({1}, std::move(out), {logprobs},
                   [li, grad, f, v](TensorImpl& self) {
                     if (!li->grad_ready) return;
                     MapMat(li->grad.data(), f, v) += self.grad[0] * grad;
                   });
}

}  // namespace jt
