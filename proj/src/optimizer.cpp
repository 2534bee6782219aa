// jt/optimizer.cpp

#include "jt/optimizer.hpp"

#include <cmath>
#include <cstring>

namespace jt {

AdamState::AdamState(const AdamConfig& cfg, const ModelParams& params)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor& t : params.tensors) {
    m_.push_back(Vec::Zero(t.numel()));
    v_.push_back(Vec::Zero(t.numel()));
  }
}

void AdamState::apply(ModelParams& params, double lr) {
  JT_CHECK(params.size() == m_.size(),
           "adam: state built for " << m_.size() << " parameters, got "
                                    << params.size());
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.tensors[i];
    JT_CHECK(p.has_grad(), "adam: missing grad for parameter " << params.names[i]);
    const Vec& g = p.grad();
    p.value() -= (lr * cfg_.weight_decay) * p.value();  // decoupled decay
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value().array() -=
        lr * (m_[i].array() / bc1) /
        ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

std::uint64_t AdamState::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(&steps_, sizeof(steps_));
  for (size_t i = 0; i < m_.size(); ++i) {
    mix(m_[i].data(), sizeof(double) * static_cast<size_t>(m_[i].size()));
    mix(v_[i].data(), sizeof(double) * static_cast<size_t>(v_[i].size()));
  }
  return h;
}

double LrSchedule::lr_at(long step) const {
  JT_CHECK(step >= 0, "lr_at: negative step");
  JT_CHECK(warmup_updates >= 0 && total_updates >= warmup_updates,
           "lr_at: inconsistent schedule bounds");
  if (step > total_updates) step = total_updates;  // clamp past the end
  if (step <= warmup_updates) {
    if (warmup_updates == 0) return peak;
    return peak * static_cast<double>(step) / static_cast<double>(warmup_updates);
  }
  if (kind == ScheduleKind::WarmupConstant) return peak;
  const double frac = static_cast<double>(step - warmup_updates) /
                      static_cast<double>(total_updates - warmup_updates);
  // interpolated so lr_at(total) is exactly floor_frac * peak
  return peak * (1.0 - frac) + floor_frac * peak * frac;
}

void scale_encoder_grads(ModelParams& params, double factor) {
  for (size_t i = 0; i < params.size(); ++i) {
    if (params.names[i].rfind("enc.", 0) != 0) continue;
    Tensor& p = params.tensors[i];
    if (p.has_grad()) p.grad() *= factor;
  }
}

}  // namespace jt
