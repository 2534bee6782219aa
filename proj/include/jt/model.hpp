// jt/model.hpp
//
// The acoustic model: convolutional encoder f, frame masking, transformer
// context network g, linear classifier h.

#pragma once

#include <string>
#include <vector>

#include "jt/mask.hpp"
#include "jt/tensor.hpp"

namespace jt {

struct ModelConfig {
  std::vector<int> conv_kernels;
  std::vector<int> conv_strides;
  int conv_channels = 0;
  int ctx_layers = 0;
  int ctx_heads = 0;
  int ctx_hidden = 0;
  int ctx_ffn = 0;
  int pos_conv_kernel = 0;
  int pos_conv_groups = 0;
  double layer_drop_p = 0.0;
  double dropout_p = 0.0;
  double mask_start_p = 0.0;
  int mask_span = 1;
  int vocab_size = 0;
  int sample_rate = 0;

  void validate() const;

  int total_stride() const;
  int receptive_field() const;  // in samples
  // Frame count after the conv stack for a given sample count; throws when
  // the input is shorter than the receptive field.
  int frame_count(int num_samples) const;

  // 2 conv layers, 2 transformer layers, hidden 64. All experiments and
  // acceptance runs use this preset.
  static ModelConfig toy();
  // Sub-5k-parameter preset for end-to-end finite-difference checks.
  static ModelConfig tiny();
  // The Base architecture: 7 convs, 12 transformer layers, hidden 768.
  // Construction-tested only.
  static ModelConfig paper_base();
};

// All learnable parameters, registered by name. Names are stable and are
// the checkpoint/serialization key; encoder parameters carry the "enc."
// prefix so the per-loss encoder gradient scaling can find them.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  size_t size() const { return tensors.size(); }
  long total_scalars() const;
  void zero_grad();
  void ensure_grads();  // zero grads for parameters the loss never touched
};

class Model {
 public:
  Model(const ModelConfig& cfg, Rng& init_rng);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // z = f(x). Input is the normalized raw sample sequence; output is F×D.
  Tensor encode(const std::vector<double>& audio) const;

  MaskPlan sample_mask_plan(int num_frames, Rng& rng) const {
    return jt::sample_mask_plan(num_frames, cfg_.mask_start_p, cfg_.mask_span,
                                rng);
  }

  // ẑ = mask(z): masked rows replaced by the learned mask embedding.
  Tensor apply_mask(const Tensor& z, const MaskPlan& plan) const;

  // z̃ = g(ẑ): positional conv embedding plus the transformer stack.
  // At train time each layer is skipped with probability layer_drop_p
  // (one layer_drop_rng draw per layer). `attn_out`, when non-null,
  // receives the post-softmax attention weights of every executed head.
  Tensor contextualize(const Tensor& zhat, bool train, Rng& layer_drop_rng,
                       Rng& dropout_rng,
                       std::vector<Tensor>* attn_out = nullptr) const;

  // Eq. (3): per-frame log-probabilities over the vocabulary, F×V.
  Tensor classify(const Tensor& ztilde) const;

 private:
  Tensor transformer_layer(const Tensor& x, int layer, bool train,
                           Rng& dropout_rng,
                           std::vector<Tensor>* attn_out) const;

  ModelConfig cfg_;
  ModelParams params_;
};

// SpecAugment variant for supervised steps: samples a plan with the
// model's (mask_start_p, mask_span) and replaces masked frames with the
// learned mask embedding, exactly like the contrastive path. Eval mode is
// the identity and consumes no randomness.
Tensor specaugment_mask(const Model& model, const Tensor& z, bool train,
                        Rng& rng);

}  // namespace jt
