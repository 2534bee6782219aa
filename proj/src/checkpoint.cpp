// jt/checkpoint.cpp

#include "jt/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace jt {

namespace {

constexpr char kMagic[4] = {'J', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_string(std::ofstream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& is) {
  std::uint64_t len = 0;
  read_pod(is, len);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

void write_doubles(std::ofstream& os, const double* data, std::uint64_t n) {
  write_pod(os, n);
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& is, double* data, std::uint64_t expect) {
  std::uint64_t n = 0;
  read_pod(is, n);
  JT_CHECK(n == expect, "checkpoint: buffer length " << n << " != " << expect);
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(double)));
}

json model_config_json(const ModelConfig& c) {
  return json{{"conv_kernels", c.conv_kernels},
              {"conv_strides", c.conv_strides},
              {"conv_channels", c.conv_channels},
              {"ctx_layers", c.ctx_layers},
              {"ctx_heads", c.ctx_heads},
              {"ctx_hidden", c.ctx_hidden},
              {"ctx_ffn", c.ctx_ffn},
              {"pos_conv_kernel", c.pos_conv_kernel},
              {"pos_conv_groups", c.pos_conv_groups},
              {"layer_drop_p", c.layer_drop_p},
              {"dropout_p", c.dropout_p},
              {"mask_start_p", c.mask_start_p},
              {"mask_span", c.mask_span},
              {"vocab_size", c.vocab_size},
              {"sample_rate", c.sample_rate}};
}

json trainer_config_json(const TrainerConfig& c) {
  return json{{"update_ratio", c.update_ratio},
              {"total_updates", c.total_updates},
              {"warmup_updates", c.warmup_updates},
              {"lr_unsup", c.lr_unsup},
              {"lr_sup", c.lr_sup},
              {"encoder_grad_scale", c.encoder_grad_scale},
              {"eval_every", c.eval_every},
              {"patience", c.patience},
              {"seed", c.seed},
              {"unsup_batch_seconds", c.unsup_batch_seconds},
              {"sup_batch_seconds", c.sup_batch_seconds},
              {"specaugment_enabled", c.specaugment_enabled},
              {"single_optimizer", c.single_optimizer},
              {"valid_fraction", c.valid_fraction},
              {"temperature", c.contrastive.temperature},
              {"num_negatives", c.contrastive.num_negatives},
              {"negative_pool",
               c.contrastive.negative_pool == NegativePool::OtherFrames ? 0 : 1}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  j.at("conv_kernels").get_to(c.conv_kernels);
  j.at("conv_strides").get_to(c.conv_strides);
  j.at("conv_channels").get_to(c.conv_channels);
  j.at("ctx_layers").get_to(c.ctx_layers);
  j.at("ctx_heads").get_to(c.ctx_heads);
  j.at("ctx_hidden").get_to(c.ctx_hidden);
  j.at("ctx_ffn").get_to(c.ctx_ffn);
  j.at("pos_conv_kernel").get_to(c.pos_conv_kernel);
  j.at("pos_conv_groups").get_to(c.pos_conv_groups);
  j.at("layer_drop_p").get_to(c.layer_drop_p);
  j.at("dropout_p").get_to(c.dropout_p);
  j.at("mask_start_p").get_to(c.mask_start_p);
  j.at("mask_span").get_to(c.mask_span);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("sample_rate").get_to(c.sample_rate);
  return c;
}

// Verifies magic/version and returns the config echo, leaving the stream
// positioned at the parameter section.
json read_header(std::ifstream& is, const std::string& path) {
  JT_CHECK(is.good(), "checkpoint: cannot read " << path);
  char magic[4];
  is.read(magic, 4);
  JT_CHECK(std::equal(magic, magic + 4, kMagic),
           "checkpoint: bad magic in " << path);
  std::uint32_t version = 0;
  read_pod(is, version);
  JT_CHECK(version == kVersion,
           "checkpoint: unsupported version " << version << " in " << path);
  return json::parse(read_string(is));
}

void read_params(std::ifstream& is, Model& model, const std::string& path) {
  ModelParams& params = model.params();
  std::uint64_t nparams = 0;
  read_pod(is, nparams);
  JT_CHECK(nparams == params.size(),
           "checkpoint: " << nparams << " params on disk, model has "
                          << params.size());
  for (std::uint64_t i = 0; i < nparams; ++i) {
    std::string name = read_string(is);
    JT_CHECK(params.has(name), "checkpoint: unknown parameter " << name);
    Tensor& t = params.get(name);
    std::uint32_t ndim = 0;
    read_pod(is, ndim);
    JT_CHECK(static_cast<int>(ndim) == t.ndim(),
             "checkpoint: rank mismatch for " << name);
    for (int d = 0; d < t.ndim(); ++d) {
      std::int64_t dim = 0;
      read_pod(is, dim);
      JT_CHECK(dim == t.dim(d), "checkpoint: shape mismatch for " << name);
    }
    read_doubles(is, t.value().data(), static_cast<std::uint64_t>(t.numel()));
  }
  JT_CHECK(is.good(), "checkpoint: truncated file " << path);
}

void write_adam(std::ofstream& os, const AdamState& a) {
  write_pod(os, static_cast<std::int64_t>(a.step_count()));
  write_pod(os, static_cast<std::uint64_t>(a.num_params()));
  for (size_t i = 0; i < a.num_params(); ++i) {
    write_doubles(os, a.first_moment(i).data(),
                  static_cast<std::uint64_t>(a.first_moment(i).size()));
    write_doubles(os, a.second_moment(i).data(),
                  static_cast<std::uint64_t>(a.second_moment(i).size()));
  }
}

void read_adam(std::ifstream& is, AdamState& a) {
  std::int64_t steps = 0;
  std::uint64_t nparams = 0;
  read_pod(is, steps);
  read_pod(is, nparams);
  JT_CHECK(nparams == a.num_params(),
           "checkpoint: optimizer tracks " << nparams << " params, model has "
                                           << a.num_params());
  a.set_step_count(steps);
  for (size_t i = 0; i < a.num_params(); ++i) {
    read_doubles(is, a.first_moment(i).data(),
                 static_cast<std::uint64_t>(a.first_moment(i).size()));
    read_doubles(is, a.second_moment(i).data(),
                 static_cast<std::uint64_t>(a.second_moment(i).size()));
  }
}

void write_stream(std::ofstream& os, const CorpusStream& s) {
  write_string(os, s.rng.serialize());
  write_pod(os, static_cast<std::uint64_t>(s.plan.batches.size()));
  for (const auto& batch : s.plan.batches) {
    write_pod(os, static_cast<std::uint64_t>(batch.size()));
    for (int idx : batch) write_pod(os, static_cast<std::int64_t>(idx));
  }
  write_pod(os, static_cast<std::uint64_t>(s.cursor));
}

void read_stream(std::ifstream& is, CorpusStream& s) {
  s.rng.deserialize(read_string(is));
  std::uint64_t nbatches = 0;
  read_pod(is, nbatches);
  s.plan.batches.assign(nbatches, {});
  for (auto& batch : s.plan.batches) {
    std::uint64_t len = 0;
    read_pod(is, len);
    batch.resize(len);
    for (auto& idx : batch) {
      std::int64_t v = 0;
      read_pod(is, v);
      idx = static_cast<int>(v);
    }
  }
  std::uint64_t cursor = 0;
  read_pod(is, cursor);
  s.cursor = cursor;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerConfig& tcfg, const TrainState& state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  JT_CHECK(os.good(), "checkpoint: cannot write " << path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  json cfg{{"model", model_config_json(model.config())},
           {"trainer", trainer_config_json(tcfg)}};
  write_string(os, cfg.dump());

  const ModelParams& params = model.params();
  write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    write_string(os, params.names[i]);
    const Tensor& t = params.tensors[i];
    write_pod(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d)
      write_pod(os, static_cast<std::int64_t>(t.dim(d)));
    write_doubles(os, t.value().data(), static_cast<std::uint64_t>(t.numel()));
  }

  write_pod(os, static_cast<std::int64_t>(state.global_updates));
  write_pod(os, static_cast<std::int64_t>(state.unsup_updates));
  write_pod(os, static_cast<std::int64_t>(state.sup_updates));
  write_pod(os, static_cast<std::int64_t>(state.skipped_single_frame));
  write_pod(os, static_cast<std::int64_t>(state.skipped_infeasible));
  write_pod(os, state.best_wer);
  write_pod(os, static_cast<std::int64_t>(state.evals_since_best));
  write_string(os, state.trace);
  write_adam(os, state.opt_unsup);
  write_adam(os, state.opt_sup);
  write_string(os, state.rng_mask.serialize());
  write_string(os, state.rng_neg.serialize());
  write_string(os, state.rng_layer_drop.serialize());
  write_string(os, state.rng_dropout.serialize());
  write_string(os, state.rng_aug.serialize());
  write_stream(os, state.stream_unsup);
  write_stream(os, state.stream_sup);
  JT_CHECK(os.good(), "checkpoint: write failed for " << path);
}

void load_checkpoint(const std::string& path, Model& model,
                     const TrainerConfig& tcfg, TrainState& state) {
  std::ifstream is(path, std::ios::binary);
  json cfg = read_header(is, path);
  JT_CHECK(cfg.at("model") == model_config_json(model.config()),
           "checkpoint: model config mismatch in " << path);
  JT_CHECK(cfg.at("trainer") == trainer_config_json(tcfg),
           "checkpoint: trainer config mismatch in " << path);
  read_params(is, model, path);

  state = TrainState::init(tcfg, model);
  std::int64_t v = 0;
  read_pod(is, v);
  state.global_updates = v;
  read_pod(is, v);
  state.unsup_updates = v;
  read_pod(is, v);
  state.sup_updates = v;
  read_pod(is, v);
  state.skipped_single_frame = v;
  read_pod(is, v);
  state.skipped_infeasible = v;
  read_pod(is, state.best_wer);
  read_pod(is, v);
  state.evals_since_best = v;
  state.trace = read_string(is);
  read_adam(is, state.opt_unsup);
  read_adam(is, state.opt_sup);
  state.rng_mask.deserialize(read_string(is));
  state.rng_neg.deserialize(read_string(is));
  state.rng_layer_drop.deserialize(read_string(is));
  state.rng_dropout.deserialize(read_string(is));
  state.rng_aug.deserialize(read_string(is));
  read_stream(is, state.stream_unsup);
  read_stream(is, state.stream_sup);
  JT_CHECK(is.good(), "checkpoint: truncated file " << path);
}

ModelConfig read_checkpoint_model_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  json cfg = read_header(is, path);
  return model_config_from_json(cfg.at("model"));
}

void load_checkpoint_params(const std::string& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  json cfg = read_header(is, path);
  JT_CHECK(cfg.at("model") == model_config_json(model.config()),
           "checkpoint: model config mismatch in " << path);
  read_params(is, model, path);
}

}  // namespace jt
