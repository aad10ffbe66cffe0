#pragma once

#include <string>

#include <json.hpp>

#include "tcnet/network.hpp"
#include "tcnet/synthetic.hpp"
#include "tcnet/trainer.hpp"

namespace tcnet {

// JSON (de)serialization for the run configuration. Parsers reject unknown
// keys with the full field path; every field has a default so a {} document is
// a valid config.

nlohmann::json network_config_to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& path = "network");

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

nlohmann::json synth_spec_to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& path = "synth");

struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    SynthSpec synth;
    std::string dataset_dir = "data";
    std::string run_dir = "runs/default";
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

} // namespace tcnet
