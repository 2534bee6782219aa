// jt/mask.hpp
//
// Span masking shared by the contrastive loss and the SpecAugment-style
// supervised augmentation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jt/common.hpp"

namespace jt {

// The masked frame set for one utterance: the union of spans
// [start, start+span_len) clipped to the sequence end.
struct MaskPlan {
  std::string utt_id;
  std::vector<int> indices;      // sorted, unique, within [0, num_frames)
  std::vector<int> span_starts;  // sorted span start frames
  std::uint64_t rng_tag = 0;     // stream draw count at sampling time

  bool empty() const { return indices.empty(); }
  int size() const { return static_cast<int>(indices.size()); }
};

// Each frame independently becomes a span start with probability start_p;
// every start masks span_len consecutive frames (clipped at the end) and
// overlapping spans merge. An empty draw forces one span at a uniformly
// random start so the contrastive loss always has at least one anchor.
MaskPlan sample_mask_plan(int num_frames, double start_p, int span_len,
                          Rng& rng);

}  // namespace jt
