#pragma once

// JSON (de)serialization for the config structs. Declarations only: the JSON
// library stays an implementation detail of the library, not of its headers.

#include <string>

#include "atlab/nn.hpp"
#include "atlab/training.hpp"

namespace atlab {

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace atlab
