#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "avseg/errors.hpp"
#include "avseg/synthdata.hpp"
#include "doctest.h"

using namespace avseg;
using namespace avseg::synth;
namespace fs = std::filesystem;

namespace {

SynthConfig quiet() {
  SynthConfig cfg;
  cfg.audio_noise = 0;
  cfg.pixel_noise = 0;
  return cfg;
}

Tensor table() {
  Rng rng(3);
  return make_audio_table(rng, 5, 16);
}

std::set<int> gt_classes(const SyntheticSample& s, std::int64_t t) {
  const auto px = s.gt.dim(1) * s.gt.dim(2);
  std::set<int> out;
  for (std::int64_t i = 0; i < px; ++i)
    if (s.gt[t * px + i] > 0) out.insert(int(s.gt[t * px + i]));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("empty scene renders background and noise-only audio") {
  SceneSpec spec;
  spec.frames = 3;
  spec.pixel_noise = 0;
  spec.background = 0.2;
  const auto s = render(spec, table());
  for (float v : s.frames.data()) CHECK(v == 0.2f);
  for (float v : s.gt.data()) CHECK(v == 0.0f);
  for (float v : s.audio.data()) CHECK(v != 0.0f);
}

TEST_CASE("a sounding disk is its own mask") {
  SceneSpec spec;
  spec.pixel_noise = 0;
  ObjectSpec disk;
  disk.class_id = 2;
  disk.cx = 30.2;
  disk.cy = 20.7;
  disk.radius = 9.5;
  disk.color = {0.5, 0.6, 0.7};
  disk.sounding.assign(4, true);
  spec.objects = {disk};
  const auto s = render(spec, table());
  for (std::int64_t t = 0; t < 4; ++t)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double dx = x + 0.5 - disk.cx, dy = y + 0.5 - disk.cy;
        const float want = dx * dx + dy * dy <= disk.radius * disk.radius ? 2.0f : 0.0f;
        CHECK(s.gt[(t * 64 + y) * 64 + x] == want);
      }
  const auto again = render(spec, table());
  CHECK(again.frames.bitwise_equal(s.frames));
  CHECK(again.audio.bitwise_equal(s.audio));
}

TEST_CASE("case 1 clips") {
  Rng rng(5);
  const Tensor emb = table();
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = generate_case1(rng, quiet());
    REQUIRE(spec.objects.size() == 2);
    const auto& a = spec.objects[0];
    const auto& b = spec.objects[1];
    CHECK(a.class_id == b.class_id);
    CHECK(a.shape == b.shape);
    CHECK(std::hypot(a.cx - b.cx, a.cy - b.cy) <= 1.5 * (a.radius + b.radius));
    const auto s = render(spec, emb);
    for (std::int64_t t = 0; t < 4; ++t) {
      CHECK(a.sounding[t] + b.sounding[t] == 1);
      const auto& on = a.sounding[t] ? a : b;
      const auto& off = a.sounding[t] ? b : a;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const float g = s.gt[(t * 64 + y) * 64 + x];
          const double don = std::hypot(x + 0.5 - on.cx, y + 0.5 - on.cy);
          const double doff = std::hypot(x + 0.5 - off.cx, y + 0.5 - off.cy);
          if (g > 0) CHECK(don <= 1.07 * on.radius);
          if (doff < 0.5 * off.radius) CHECK(g == 0.0f);
          if (don < 0.5 * on.radius) CHECK(g == float(on.class_id));
        }
      for (std::int64_t d = 0; d < 16; ++d) CHECK(s.audio.at(t, d) == emb.at(a.class_id, d));
    }
  }
}

TEST_CASE("case 1 without the brightness cue is visually ambiguous") {
  Rng rng(6);
  auto spec = generate_case1(rng, quiet());
  spec.kappa = 0;
  spec.objects[1].color = spec.objects[0].color;
  auto swapped = spec;
  for (std::int64_t t = 0; t < spec.frames; ++t) {
    swapped.objects[0].sounding[t] = !spec.objects[0].sounding[t];
    swapped.objects[1].sounding[t] = !spec.objects[1].sounding[t];
  }
  const auto s1 = render(spec, table());
  const auto s2 = render(swapped, table());
  CHECK(s1.frames.bitwise_equal(s2.frames));
  CHECK_FALSE(s1.gt.bitwise_equal(s2.gt));

  spec.kappa = swapped.kappa = 0.15;
  CHECK_FALSE(render(spec, table()).frames.bitwise_equal(render(swapped, table()).frames));
}

TEST_CASE("case 2 clips switch state") {
  Rng rng(7);
  const Tensor emb = table();
  for (int trial = 0; trial < 30; ++trial) {
    const auto spec = generate_case2(rng, quiet());
    const auto& o = spec.objects[0];
    int transitions = 0;
    bool down = false, up = false;
    for (std::int64_t t = 1; t < 4; ++t) {
      transitions += o.sounding[t] != o.sounding[t - 1];
      down = down || (o.sounding[t - 1] && !o.sounding[t]);
      up = up || (!o.sounding[t - 1] && o.sounding[t]);
    }
    CHECK(transitions >= 2);
    CHECK(down);
    CHECK(up);
    const auto s = render(spec, emb);
    const auto cx = std::int64_t(o.cx), cy = std::int64_t(o.cy);
    for (std::int64_t t = 1; t < 4; ++t)
      if (o.sounding[t] != o.sounding[t - 1])
        CHECK(s.gt[(t * 64 + cy) * 64 + cx] != s.gt[((t - 1) * 64 + cy) * 64 + cx]);
    for (std::int64_t t = 0; t < 4; ++t)
      for (std::int64_t d = 0; d < 16; ++d) {
        double want = 0;
        for (const auto& obj : spec.objects)
          if (obj.sounding[t]) want += emb.at(obj.class_id, d);
        CHECK(s.audio.at(t, d) == float(want));
      }
  }
}

TEST_CASE("dataset generation") {
  SynthConfig cfg;
  const auto data = generate_dataset(7, 100, {0.4, 0.3, 0.3}, cfg);
  int counts[3] = {0, 0, 0};
  for (const auto& c : data.clips) ++counts[int(c.kind)];
  CHECK(counts[0] == 40);
  CHECK(counts[1] == 30);
  CHECK(counts[2] == 30);
  CHECK(data.split("train").size() == 70);
  CHECK(data.split("val").size() == 15);
  CHECK(data.split("test").size() == 15);
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    const auto& c = data.clips[i];
    CHECK(c.split == (i < 70 ? "train" : i < 85 ? "val" : "test"));
  }

  SUBCASE("sound in the ground truth iff in the audio mix") {
    for (const auto& c : data.clips)
      for (std::int64_t t = 0; t < 4; ++t) {
        std::set<int> mixed;
        for (const auto& o : c.spec.objects)
          if (o.sounding[t]) mixed.insert(o.class_id);
        CHECK(gt_classes(c.sample, t) == mixed);
      }
  }
  SUBCASE("regeneration is identical") {
    const auto again = generate_dataset(7, 100, {0.4, 0.3, 0.3}, cfg);
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
      CHECK(again.clips[i].sample.frames.bitwise_equal(data.clips[i].sample.frames));
      CHECK(again.clips[i].sample.audio.bitwise_equal(data.clips[i].sample.audio));
    }
  }
  CHECK_THROWS_AS(generate_dataset(7, 9, {0.4, 0.3, 0.3}, cfg), ParameterError);
  CHECK_THROWS_AS(generate_dataset(7, 20, {0.5, 0.3, 0.3}, cfg), ParameterError);
}

TEST_CASE("dataset round trip on disk") {
  const auto data = generate_dataset(11, 10, {0.4, 0.3, 0.3}, SynthConfig{});
  const fs::path a = fs::temp_directory_path() / "avseg_synth_a";
  const fs::path b = fs::temp_directory_path() / "avseg_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  save_dataset(data, a.string());
  save_dataset(generate_dataset(11, 10, {0.4, 0.3, 0.3}, SynthConfig{}), b.string());
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    CHECK(slurp(entry.path()) == slurp(b / fs::relative(entry.path(), a)));
  }
  const auto loaded = load_dataset(a.string());
  REQUIRE(loaded.clips.size() == data.clips.size());
  CHECK(loaded.audio_table.bitwise_equal(data.audio_table));
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    CHECK(loaded.clips[i].name == data.clips[i].name);
    CHECK(loaded.clips[i].kind == data.clips[i].kind);
    CHECK(loaded.clips[i].split == data.clips[i].split);
    CHECK(loaded.clips[i].sample.gt.bitwise_equal(data.clips[i].sample.gt));
    CHECK(render(loaded.clips[i].spec, loaded.audio_table).frames.bitwise_equal(data.clips[i].sample.frames));
  }
  CHECK_THROWS_AS(load_dataset((a / "missing").string()), IoError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("synth config from partial JSON") {
  const auto c = synth::synth_config_from_json({{"kappa", 0.3}, {"frames", 5}});
  CHECK(c.kappa == 0.3);
  CHECK(c.frames == 5);
  CHECK(c.height == 64);
  CHECK(synth::to_json(synth::synth_config_from_json(synth::to_json(c))) == synth::to_json(c));
  CHECK_THROWS_AS(synth::synth_config_from_json({{"kapa", 0.3}}), ConfigError);
  CHECK_THROWS_AS(synth::synth_config_from_json({{"frames", 2}}), ConfigError);
  CHECK_THROWS_AS(synth::synth_config_from_json({{"kappa", "high"}}), ConfigError);
}
