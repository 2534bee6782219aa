// jt/checkpoint.hpp
//
// Versioned binary checkpoint container: config echo, named parameter
// tensors, and the full training state (optimizer moments, RNG streams,
// data-stream positions). Loading verifies the config echo against the
// caller's config and rejects mismatches.

#pragma once

#include <string>

#include "jt/model.hpp"
#include "jt/trainer.hpp"

namespace jt {

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerConfig& tcfg, const TrainState& state);

// `model` must be constructed with the same ModelConfig that was saved;
// its parameters are overwritten in place. Throws jt::Error on version,
// config, or shape mismatch.
void load_checkpoint(const std::string& path, Model& model,
                     const TrainerConfig& tcfg, TrainState& state);

// Reads just the model-config echo, so a Model can be constructed to
// receive the parameters.
ModelConfig read_checkpoint_model_config(const std::string& path);

// Loads only the parameter tensors, ignoring the training state; used by
// evaluation, which needs no optimizer or RNG state.
void load_checkpoint_params(const std::string& path, Model& model);

}  // namespace jt
