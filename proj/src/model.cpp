// jt/model.cpp

#include "jt/model.hpp"

#include <algorithm>
#include <cmath>

namespace jt {

MaskPlan sample_mask_plan(int num_frames, double start_p, int span_len,
                          Rng& rng) {
  JT_CHECK(num_frames >= 1, "sample_mask_plan: num_frames must be >= 1");
  JT_CHECK(start_p >= 0.0 && start_p <= 1.0, "sample_mask_plan: start_p out of [0,1]");
  JT_CHECK(span_len >= 1, "sample_mask_plan: span_len must be >= 1");
  MaskPlan plan;
  plan.rng_tag = rng.draw_count();
  for (int f = 0; f < num_frames; ++f)
    if (rng.uniform() < start_p) plan.span_starts.push_back(f);
  if (plan.span_starts.empty()) {
    plan.span_starts.push_back(
        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_frames))));
  }
  std::vector<char> masked(static_cast<size_t>(num_frames), 0);
  for (int s : plan.span_starts)
    for (int f = s; f < std::min(s + span_len, num_frames); ++f)
      masked[static_cast<size_t>(f)] = 1;
  for (int f = 0; f < num_frames; ++f)
    if (masked[static_cast<size_t>(f)]) plan.indices.push_back(f);
  return plan;
}

// ---------------------------------------------------------------------

void ModelConfig::validate() const {
  JT_CHECK(conv_kernels.size() == conv_strides.size(),
           "config: conv_kernels and conv_strides length mismatch");
  JT_CHECK(!conv_kernels.empty(), "config: empty conv stack");
  JT_CHECK(conv_channels >= 1 && ctx_layers >= 0 && ctx_heads >= 1 &&
               ctx_hidden >= 1 && ctx_ffn >= 1 && vocab_size >= 2 &&
               sample_rate >= 1,
           "config: non-positive dimension");
  JT_CHECK(ctx_hidden % ctx_heads == 0,
           "config: ctx_hidden " << ctx_hidden << " not divisible by heads "
                                 << ctx_heads);
  JT_CHECK(pos_conv_kernel >= 1 && pos_conv_groups >= 1 &&
               ctx_hidden % pos_conv_groups == 0,
           "config: bad positional conv kernel/groups");
  JT_CHECK(layer_drop_p >= 0.0 && layer_drop_p <= 1.0 && dropout_p >= 0.0 &&
               dropout_p < 1.0 && mask_start_p >= 0.0 && mask_start_p <= 1.0,
           "config: probability out of range");
  JT_CHECK(mask_span >= 1, "config: mask_span must be >= 1");
}

int ModelConfig::total_stride() const {
  int s = 1;
  for (int v : conv_strides) s *= v;
  return s;
}

int ModelConfig::receptive_field() const {
  // compose kernel extents across the stack
  int rf = 1, jump = 1;
  for (size_t i = 0; i < conv_kernels.size(); ++i) {
    rf += (conv_kernels[i] - 1) * jump;
    jump *= conv_strides[i];
  }
  return rf;
}

int ModelConfig::frame_count(int num_samples) const {
  int t = num_samples;
  for (size_t i = 0; i < conv_kernels.size(); ++i)
    t = conv1d_out_len(t, conv_kernels[i], conv_strides[i]);
  return t;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.conv_kernels = {4, 3};
  c.conv_strides = {2, 2};
  c.conv_channels = 64;
  c.ctx_layers = 2;
  c.ctx_heads = 2;
  c.ctx_hidden = 64;
  c.ctx_ffn = 128;
  c.pos_conv_kernel = 16;
  c.pos_conv_groups = 4;
  c.layer_drop_p = 0.05;
  c.dropout_p = 0.1;
  c.mask_start_p = 0.15;
  c.mask_span = 3;
  c.vocab_size = 29;
  c.sample_rate = 1000;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.conv_kernels = {4, 3};
  c.conv_strides = {2, 2};
  c.conv_channels = 8;
  c.ctx_layers = 1;
  c.ctx_heads = 2;
  c.ctx_hidden = 8;
  c.ctx_ffn = 16;
  c.pos_conv_kernel = 4;
  c.pos_conv_groups = 2;
  c.layer_drop_p = 0.0;
  c.dropout_p = 0.0;
  c.mask_start_p = 0.2;
  c.mask_span = 2;
  c.vocab_size = 5;
  c.sample_rate = 100;
  return c;
}

ModelConfig ModelConfig::paper_base() {
  ModelConfig c;
  c.conv_kernels = {10, 3, 3, 3, 3, 2, 2};
  c.conv_strides = {5, 2, 2, 2, 2, 2, 2};
  c.conv_channels = 512;
  c.ctx_layers = 12;
  c.ctx_heads = 8;
  c.ctx_hidden = 768;
  c.ctx_ffn = 3072;
  c.pos_conv_kernel = 128;
  c.pos_conv_groups = 16;
  c.layer_drop_p = 0.05;
  c.dropout_p = 0.1;
  c.mask_start_p = 0.075;
  c.mask_span = 10;
  c.vocab_size = 29;
  c.sample_rate = 16000;
  return c;
}

// ---------------------------------------------------------------------

Tensor& ModelParams::add(const std::string& name, Tensor t) {
  JT_CHECK(!has(name), "params: duplicate registration of " << name);
  names.push_back(name);
  tensors.push_back(std::move(t));
  return tensors.back();
}

Tensor& ModelParams::get(const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  JT_CHECK(false, "params: no parameter named " << name);
  return tensors[0];  // unreachable
}

const Tensor& ModelParams::get(const std::string& name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

bool ModelParams::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

long ModelParams::total_scalars() const {
  long n = 0;
  for (const Tensor& t : tensors) n += t.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (Tensor& t : tensors) t.zero_grad();
}

void ModelParams::ensure_grads() {
  for (Tensor& t : tensors) t.ensure_grad();
}

// ---------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.ctx_hidden;
  JT_CHECK(cfg_.conv_channels == d,
           "model: encoder output dim must equal ctx_hidden");

  int c_in = 1;
  for (size_t i = 0; i < cfg_.conv_kernels.size(); ++i) {
    const int k = cfg_.conv_kernels[i];
    const int c_out = cfg_.conv_channels;
    const double std = 1.0 / std::sqrt(static_cast<double>(c_in * k));
    const std::string p = "enc.conv" + std::to_string(i);
    params_.add(p + ".w", Tensor::randn({c_out, c_in, k}, std, rng, true));
    params_.add(p + ".b", Tensor::zeros({c_out}, true));
    params_.add(p + ".ln_g", Tensor::full({c_out}, 1.0, true));
    params_.add(p + ".ln_b", Tensor::zeros({c_out}, true));
    c_in = c_out;
  }

  params_.add("mask_emb", Tensor::randn({d}, 0.1, rng, true));

  const int pg = d / cfg_.pos_conv_groups;
  params_.add("pos_conv.w",
              Tensor::randn({d, pg, cfg_.pos_conv_kernel},
                            1.0 / std::sqrt(static_cast<double>(pg * cfg_.pos_conv_kernel)),
                            rng, true));
  params_.add("pos_conv.b", Tensor::zeros({d}, true));

  const double lin_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < cfg_.ctx_layers; ++l) {
    const std::string p = "ctx" + std::to_string(l);
    params_.add(p + ".ln1_g", Tensor::full({d}, 1.0, true));
    params_.add(p + ".ln1_b", Tensor::zeros({d}, true));
    for (const char* w : {"q", "k", "v", "o"}) {
      params_.add(p + ".attn_" + std::string(w) + ".w",
                  Tensor::randn({d, d}, lin_std, rng, true));
      params_.add(p + ".attn_" + std::string(w) + ".b", Tensor::zeros({d}, true));
    }
    params_.add(p + ".ln2_g", Tensor::full({d}, 1.0, true));
    params_.add(p + ".ln2_b", Tensor::zeros({d}, true));
    params_.add(p + ".ff1.w", Tensor::randn({d, cfg_.ctx_ffn}, lin_std, rng, true));
    params_.add(p + ".ff1.b", Tensor::zeros({cfg_.ctx_ffn}, true));
    params_.add(p + ".ff2.w",
                Tensor::randn({cfg_.ctx_ffn, d},
                              1.0 / std::sqrt(static_cast<double>(cfg_.ctx_ffn)),
                              rng, true));
    params_.add(p + ".ff2.b", Tensor::zeros({d}, true));
  }
  params_.add("final_ln_g", Tensor::full({d}, 1.0, true));
  params_.add("final_ln_b", Tensor::zeros({d}, true));

  params_.add("cls.w", Tensor::randn({d, cfg_.vocab_size}, lin_std, rng, true));
  params_.add("cls.b", Tensor::zeros({cfg_.vocab_size}, true));
}

Tensor Model::encode(const std::vector<double>& audio) const {
  JT_CHECK(static_cast<int>(audio.size()) >= cfg_.receptive_field(),
           "encode: input of " << audio.size()
                               << " samples shorter than receptive field "
                               << cfg_.receptive_field());
  Tensor h = Tensor::from_vector({1, static_cast<int>(audio.size())}, audio);
  for (size_t i = 0; i < cfg_.conv_kernels.size(); ++i) {
    const std::string p = "enc.conv" + std::to_string(i);
    h = conv1d(h, params_.get(p + ".w"), params_.get(p + ".b"),
               cfg_.conv_strides[i], 1);
    // per-frame layer norm over channels, then GELU
    h = transpose(h);
    h = gelu(layer_norm(h, params_.get(p + ".ln_g"), params_.get(p + ".ln_b")));
    h = transpose(h);
  }
  return transpose(h);  // F×D
}

Tensor Model::apply_mask(const Tensor& z, const MaskPlan& plan) const {
  return mask_rows(z, params_.get("mask_emb"), plan.indices);
}

Tensor Model::transformer_layer(const Tensor& x, int layer, bool train,
                                Rng& dropout_rng,
                                std::vector<Tensor>* attn_out) const {
  const std::string p = "ctx" + std::to_string(layer);
  const int d = cfg_.ctx_hidden;
  const int heads = cfg_.ctx_heads;
  const int dh = d / heads;

  Tensor a = layer_norm(x, params_.get(p + ".ln1_g"), params_.get(p + ".ln1_b"));
  Tensor q = add_bias(matmul(a, params_.get(p + ".attn_q.w")), params_.get(p + ".attn_q.b"));
  Tensor k = add_bias(matmul(a, params_.get(p + ".attn_k.w")), params_.get(p + ".attn_k.b"));
  Tensor v = add_bias(matmul(a, params_.get(p + ".attn_v.w")), params_.get(p + ".attn_v.b"));
  std::vector<Tensor> head_outs;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor weights = softmax(scores);
    if (attn_out) attn_out->push_back(weights);
    head_outs.push_back(matmul(dropout(weights, cfg_.dropout_p, train, dropout_rng), vh));
  }
  Tensor attn = add_bias(matmul(concat_cols(head_outs), params_.get(p + ".attn_o.w")),
                         params_.get(p + ".attn_o.b"));
  Tensor x1 = add(x, dropout(attn, cfg_.dropout_p, train, dropout_rng));

  Tensor b = layer_norm(x1, params_.get(p + ".ln2_g"), params_.get(p + ".ln2_b"));
  Tensor ff = add_bias(matmul(b, params_.get(p + ".ff1.w")), params_.get(p + ".ff1.b"));
  ff = gelu(ff);
  ff = add_bias(matmul(ff, params_.get(p + ".ff2.w")), params_.get(p + ".ff2.b"));
  return add(x1, dropout(ff, cfg_.dropout_p, train, dropout_rng));
}

Tensor Model::contextualize(const Tensor& zhat, bool train, Rng& layer_drop_rng,
                            Rng& dropout_rng,
                            std::vector<Tensor>* attn_out) const {
  JT_CHECK(zhat.ndim() == 2 && zhat.dim(1) == cfg_.ctx_hidden,
           "contextualize: bad input shape " << shape_str(zhat.shape()));
  Tensor pos = conv1d(transpose(zhat), params_.get("pos_conv.w"),
                      params_.get("pos_conv.b"), 1, cfg_.pos_conv_groups,
                      ConvPad::Symmetric);
  Tensor x = add(zhat, transpose(gelu(pos)));
  for (int l = 0; l < cfg_.ctx_layers; ++l) {
    if (train && layer_drop_rng.uniform() < cfg_.layer_drop_p) continue;
    x = transformer_layer(x, l, train, dropout_rng, attn_out);
  }
  return layer_norm(x, params_.get("final_ln_g"), params_.get("final_ln_b"));
}

Tensor specaugment_mask(const Model& model, const Tensor& z, bool train,
                        Rng& rng) {
  if (!train) return z;
  MaskPlan plan = model.sample_mask_plan(z.dim(0), rng);
  return model.apply_mask(z, plan);
}

Tensor Model::classify(const Tensor& ztilde) const {
  return log_softmax(add_bias(matmul(ztilde, params_.get("cls.w")),
                              params_.get("cls.b")));
}

}  // namespace jt
