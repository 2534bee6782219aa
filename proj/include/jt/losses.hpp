// jt/losses.hpp
//
// The two training objectives: the masked contrastive loss and CTC.

#pragma once

#include <string>
#include <vector>

#include "jt/mask.hpp"
#include "jt/tensor.hpp"

namespace jt {

enum class NegativePool {
  OtherFrames,      // all frames of the utterance except the anchor
  NonMaskedFrames,  // frames outside the mask plan (falls back to
                    // OtherFrames when every frame is masked)
};

struct ContrastiveConfig {
  double temperature = 0.1;
  int num_negatives = 100;
  NegativePool negative_pool = NegativePool::OtherFrames;

  void validate() const {
    JT_CHECK(temperature > 0.0, "contrastive: temperature must be positive");
    JT_CHECK(num_negatives >= 1, "contrastive: need at least one negative");
  }
};

struct CtcTarget {
  std::vector<int> tokens;  // no blanks, all in [0, V-1) excluding blank id
  std::string utt_id;
};

// K negative frame indices for one anchor, drawn uniformly from the
// configured pool; without replacement when the pool is large enough,
// with replacement otherwise. Throws when num_frames == 1 (no pool).
std::vector<int> sample_negatives(const MaskPlan& plan, int num_frames,
                                  int anchor, const ContrastiveConfig& cfg,
                                  Rng& rng);

// Masked contrastive loss. For each masked index t the anchor is z̃_t,
// the positive is the pre-mask z_t and the negatives are z rows at
// sampled indices; similarities are cosine, scaled by 1/temperature
// inside the exponent. Returns the mean over anchors.
Tensor contrastive_loss(const Tensor& z, const Tensor& ztilde,
                        const MaskPlan& plan, const ContrastiveConfig& cfg,
                        Rng& rng);

// CTC loss by the standard forward recursion over the blank-interleaved
// target in log space, with the forward-backward analytic gradient.
// Throws when no alignment of the target fits in F frames.
Tensor ctc_loss(const Tensor& logprobs, const CtcTarget& target, int blank);

// Minimum number of frames any valid alignment of `tokens` needs.
int ctc_min_frames(const std::vector<int>& tokens);

}  // namespace jt
