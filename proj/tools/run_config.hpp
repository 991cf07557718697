#pragma once

#include <array>
#include <optional>
#include <string>

#include "avseg/model.hpp"
#include "avseg/synthdata.hpp"
#include "json.hpp"

namespace avseg::cli {

inline constexpr int kSchemaVersion = 1;

/// Contents of a run config file. Flags are applied on top by each command.
struct RunConfig {
  std::uint64_t seed = 7;  ///< dataset seed
  int clips = 300;
  std::array<double, 3> mix{0.4, 0.3, 0.3};
  synth::SynthConfig synth;
  model::ModelConfig model;
  nlohmann::json model_keys = nlohmann::json::object();  ///< model fields set explicitly
  std::string data, out, checkpoint;
};

RunConfig parse_run_config(const nlohmann::json& j);
/// Reads and validates a config file; an empty path yields the defaults.
RunConfig load_run_config(const std::string& path);

std::array<double, 3> parse_mix(const std::string& text);

/// Copies image, clip and class sizes of the dataset into the model config.
/// Explicitly configured values that disagree throw ConfigError.
model::ModelConfig bind_to_dataset(const RunConfig& rc, const synth::SynthConfig& data);

}  // namespace avseg::cli
