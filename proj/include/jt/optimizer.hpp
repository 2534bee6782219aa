// jt/optimizer.hpp
//
// Adam with decoupled weight decay, plus the two learning-rate schedules.
// The trainer keeps one AdamState per loss; the states never share buffers.

#pragma once

#include <cstdint>
#include <vector>

#include "jt/model.hpp"
#include "jt/tensor.hpp"

namespace jt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const AdamConfig& cfg, const ModelParams& params);

  // Decoupled weight decay followed by the bias-corrected Adam update.
  // Every registered parameter must have an accumulated grad.
  void apply(ModelParams& params, double lr);

  long step_count() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  // FNV-1a over all moment buffers and the step count; used by the
  // state-isolation checks and cheap enough to run every step.
  std::uint64_t hash() const;

  // checkpoint access
  size_t num_params() const { return m_.size(); }
  Vec& first_moment(size_t i) { return m_[i]; }
  Vec& second_moment(size_t i) { return v_[i]; }
  const Vec& first_moment(size_t i) const { return m_[i]; }
  const Vec& second_moment(size_t i) const { return v_[i]; }
  void set_step_count(long s) { steps_ = s; }

 private:
  AdamConfig cfg_;
  std::vector<Vec> m_, v_;
  long steps_ = 0;
};

enum class ScheduleKind {
  WarmupLinearDecay,  // unsupervised: linear to peak, then linear to floor
  WarmupConstant,     // supervised: linear to peak, then constant
};

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::WarmupConstant;
  double peak = 0.0;
  long warmup_updates = 0;
  long total_updates = 0;
  double floor_frac = 0.1;

  // lr(0) = 0, lr(warmup) = peak, and for WarmupLinearDecay
  // lr(total) = floor_frac * peak exactly. Steps past total clamp.
  double lr_at(long step) const;
};

// Multiplies the grads of all convolutional-encoder parameters ("enc."
// prefix) by `factor`; other parameters untouched.
void scale_encoder_grads(ModelParams& params, double factor);

}  // namespace jt
