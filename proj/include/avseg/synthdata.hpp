#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "avseg/rng.hpp"
#include "avseg/tensor.hpp"

/// Procedural audio-visual clips: coloured shapes whose per-frame sounding
/// state drives both the ground-truth masks and the audio descriptors.
namespace avseg::synth {

enum class ShapeKind { Disk, Square, Triangle };
enum class ClipKind { Easy, Case1, Case2 };

std::string to_string(ShapeKind s);
std::string to_string(ClipKind k);
ClipKind clip_kind_from(const std::string& s);

struct SynthConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t frames = 4;
  std::int64_t audio_dim = 16;
  int classes = 5;  ///< including background
  double kappa = 0.15;
  double audio_noise = 0.1;
  double pixel_noise = 0.02;
  double color_jitter = 0.05;
  double radius_min = 7.0;
  double radius_max = 12.0;

  void validate() const;
};

struct ObjectSpec {
  int class_id = 1;
  ShapeKind shape = ShapeKind::Disk;
  std::array<double, 3> color{};
  double cx = 0, cy = 0, radius = 2;
  std::vector<bool> sounding;  ///< one flag per frame
};

struct SceneSpec {
  ClipKind kind = ClipKind::Easy;
  std::int64_t height = 64, width = 64, frames = 4;
  double background = 0.15;
  double kappa = 0.0;  ///< brightness added to an object while it sounds
  double audio_noise = 0.1;
  double pixel_noise = 0.02;
  std::uint64_t seed = 0;  ///< noise stream for rendering
  std::vector<ObjectSpec> objects;

  /// Throws DataError when a field is out of range.
  void validate(int classes) const;
};

nlohmann::json to_json(const SynthConfig& cfg);
/// Overrides fields of `base` from a partial object; unknown keys and bad
/// values throw ConfigError.
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);

struct SyntheticSample {
  Tensor frames;  ///< [T, H, W, 3]
  Tensor audio;   ///< [T, D_a]
  Tensor gt;      ///< [T, H, W], class ids stored as floats
};

/// Class shape and base colour, fixed per class id in [1, 4].
ShapeKind class_shape(int class_id);
std::array<double, 3> class_color(int class_id);

/// Embedding table [C, D_a]; row 0 (background) is zero.
Tensor make_audio_table(Rng& rng, int classes, std::int64_t audio_dim);

/// Pure function of the spec and the table.
SyntheticSample render(const SceneSpec& spec, const Tensor& audio_table);

/// 1-3 objects of distinct classes, each sounding throughout or silent
/// throughout, at least one sounding.
SceneSpec generate_easy(Rng& rng, const SynthConfig& cfg);
/// Two objects of one class, close together, exactly one sounding per frame.
SceneSpec generate_case1(Rng& rng, const SynthConfig& cfg);
/// One or two objects; the first switches on->off and off->on.
SceneSpec generate_case2(Rng& rng, const SynthConfig& cfg);

struct ClipEntry {
  std::string name;
  ClipKind kind = ClipKind::Easy;
  std::string split;  ///< train, val or test
  SceneSpec spec;
  SyntheticSample sample;
};

struct Dataset {
  std::uint64_t seed = 0;
  SynthConfig config;
  Tensor audio_table;
  std::vector<ClipEntry> clips;

  std::vector<const ClipEntry*> split(const std::string& name) const;
};

/// Exact type counts from the mix (rounded, remainder to case2), shuffled;
/// the first 70% of clip indices train, the next 15% validate, the rest test.
Dataset generate_dataset(std::uint64_t seed, int n_clips, const std::array<double, 3>& mix,
                         const SynthConfig& cfg);

/// clip_XXXX/{frames,audio,gt}.avtk + spec.json per clip, audio_table.avtk
/// and manifest.json at the root.
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace avseg::synth
