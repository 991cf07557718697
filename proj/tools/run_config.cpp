#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "avseg/errors.hpp"

namespace avseg::cli {

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("config: schema_version is required");
  RunConfig rc;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "schema_version") {
        if (v.get<int>() != kSchemaVersion) {
          throw ConfigError("config: unsupported schema_version " + v.dump() + " (expected " +
                            std::to_string(kSchemaVersion) + ")");
        }
      } else if (key == "seed") rc.seed = v.get<std::uint64_t>();
      else if (key == "clips") rc.clips = v.get<int>();
      else if (key == "mix") rc.mix = v.get<std::array<double, 3>>();
      else if (key == "synth") rc.synth = synth::synth_config_from_json(v);
      else if (key == "model") {
        rc.model = model::config_from_json(v);
        rc.model_keys = v;
      } else if (key == "data") rc.data = v.get<std::string>();
      else if (key == "out") rc.out = v.get<std::string>();
      else if (key == "checkpoint") rc.checkpoint = v.get<std::string>();
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(j);
}

std::array<double, 3> parse_mix(const std::string& text) {
  std::array<double, 3> mix{};
  std::istringstream is(text);
  std::string part;
  int n = 0;
  while (std::getline(is, part, ',')) {
    if (n == 3) throw ConfigError("--mix: expected three comma-separated fractions");
    try {
      std::size_t used = 0;
      mix[n] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("--mix: '" + part + "' is not a number");
    }
    ++n;
  }
  if (n != 3) throw ConfigError("--mix: expected three comma-separated fractions");
  return mix;
}

model::ModelConfig bind_to_dataset(const RunConfig& rc, const synth::SynthConfig& data) {
  model::ModelConfig m = rc.model;
  auto bind = [&](const char* key, auto& field, auto value) {
    if (rc.model_keys.contains(key) && field != value) {
      throw ConfigError(std::string("config: model.") + key + " = " + std::to_string(field) +
                        " but the dataset has " + std::to_string(value));
    }
    field = value;
  };
  bind("height", m.height, data.height);
  bind("width", m.width, data.width);
  bind("frames", m.frames, data.frames);
  bind("classes", m.classes, data.classes);
  bind("audio_dim", m.audio_dim, data.audio_dim);
  m.validate();
  return m;
}

}  // namespace avseg::cli
