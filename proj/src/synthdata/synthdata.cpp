#include "avseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "avseg/errors.hpp"
#include "avseg/tensor_file.hpp"

namespace avseg::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kManifestVersion = 1;

// Radius of the circle bounding each shape, relative to its nominal radius.
constexpr double kSquareHalfSide = 0.75;
constexpr double kExtent = 1.07;

bool inside(const ObjectSpec& o, double x, double y) {
  const double dx = x - o.cx, dy = y - o.cy, r = o.radius;
  switch (o.shape) {
    case ShapeKind::Disk:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square:
      return std::abs(dx) <= kSquareHalfSide * r && std::abs(dy) <= kSquareHalfSide * r;
    case ShapeKind::Triangle: {
      // Upward triangle inscribed in the circle of radius r.
      if (dy > 0.5 * r || dy < -r) return false;
      const double half_width = (dy + r) / 1.5 * 0.8660254037844386;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::array<double, 3> jittered(Rng& rng, int class_id, double jitter) {
  auto c = class_color(class_id);
  for (auto& v : c) v = clamp01(v + rng.uniform(-jitter, jitter));
  return c;
}

bool fits(const SynthConfig& cfg, double cx, double cy, double r) {
  const double m = kExtent * r + 1;
  return cx >= m && cy >= m && cx <= double(cfg.width) - m && cy <= double(cfg.height) - m;
}

bool separated(const std::vector<ObjectSpec>& placed, double cx, double cy, double r) {
  for (const auto& o : placed) {
    const double d = std::hypot(cx - o.cx, cy - o.cy);
    if (d < kExtent * (r + o.radius) + 1) return false;
  }
  return true;
}

ObjectSpec place(Rng& rng, const SynthConfig& cfg, const std::vector<ObjectSpec>& placed,
                 int class_id) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
    const double cx = rng.uniform(0, double(cfg.width));
    const double cy = rng.uniform(0, double(cfg.height));
    if (!fits(cfg, cx, cy, r) || !separated(placed, cx, cy, r)) continue;
    ObjectSpec o;
    o.class_id = class_id;
    o.shape = class_shape(class_id);
    o.color = jittered(rng, class_id, cfg.color_jitter);
    o.cx = cx;
    o.cy = cy;
    o.radius = r;
    return o;
  }
  throw ParameterError("synth: canvas too small to place objects without overlap");
}

SceneSpec base_scene(Rng& rng, const SynthConfig& cfg, ClipKind kind) {
  SceneSpec s;
  s.kind = kind;
  s.height = cfg.height;
  s.width = cfg.width;
  s.frames = cfg.frames;
  s.background = rng.uniform(0.05, 0.3);
  s.audio_noise = cfg.audio_noise;
  s.pixel_noise = cfg.pixel_noise;
  s.seed = rng.next_u64();
  return s;
}

std::vector<int> distinct_classes(Rng& rng, int classes, int count) {
  std::vector<int> ids;
  for (int c = 1; c < classes; ++c) ids.push_back(c);
  for (int i = int(ids.size()) - 1; i > 0; --i) std::swap(ids[i], ids[rng.uniform_int(i + 1)]);
  ids.resize(count);
  return ids;
}

// Binary schedule containing at least one on->off and one off->on change.
std::vector<bool> switching_schedule(Rng& rng, std::int64_t frames) {
  for (;;) {
    std::vector<bool> s(frames);
    for (std::int64_t t = 0; t < frames; ++t) s[t] = rng.bernoulli(0.5);
    bool down = false, up = false;
    for (std::int64_t t = 1; t < frames; ++t) {
      down = down || (s[t - 1] && !s[t]);
      up = up || (!s[t - 1] && s[t]);
    }
    if (down && up) return s;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

nlohmann::json config_json(const SynthConfig& c) {
  return {{"height", c.height},           {"width", c.width},
          {"frames", c.frames},           {"audio_dim", c.audio_dim},
          {"classes", c.classes},         {"kappa", c.kappa},
          {"audio_noise", c.audio_noise}, {"pixel_noise", c.pixel_noise},
          {"color_jitter", c.color_jitter}, {"radius_min", c.radius_min},
          {"radius_max", c.radius_max}};
}

SynthConfig config_from(const nlohmann::json& j) {
  SynthConfig c;
  c.height = j.at("height");
  c.width = j.at("width");
  c.frames = j.at("frames");
  c.audio_dim = j.at("audio_dim");
  c.classes = j.at("classes");
  c.kappa = j.at("kappa");
  c.audio_noise = j.at("audio_noise");
  c.pixel_noise = j.at("pixel_noise");
  c.color_jitter = j.at("color_jitter");
  c.radius_min = j.at("radius_min");
  c.radius_max = j.at("radius_max");
  return c;
}

}  // namespace

nlohmann::json to_json(const SynthConfig& cfg) { return config_json(cfg); }

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "height") c.height = v.get<std::int64_t>();
      else if (key == "width") c.width = v.get<std::int64_t>();
      else if (key == "frames") c.frames = v.get<std::int64_t>();
      else if (key == "audio_dim") c.audio_dim = v.get<std::int64_t>();
      else if (key == "classes") c.classes = v.get<int>();
      else if (key == "kappa") c.kappa = v.get<double>();
      else if (key == "audio_noise") c.audio_noise = v.get<double>();
      else if (key == "pixel_noise") c.pixel_noise = v.get<double>();
      else if (key == "color_jitter") c.color_jitter = v.get<double>();
      else if (key == "radius_min") c.radius_min = v.get<double>();
      else if (key == "radius_max") c.radius_max = v.get<double>();
      else throw ConfigError("synth config: unknown key '" + key + "'");
    }
    c.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "disk";
}

std::string to_string(ClipKind k) {
  switch (k) {
    case ClipKind::Easy: return "easy";
    case ClipKind::Case1: return "case1";
    case ClipKind::Case2: return "case2";
  }
  return "easy";
}

ClipKind clip_kind_from(const std::string& s) {
  if (s == "easy") return ClipKind::Easy;
  if (s == "case1") return ClipKind::Case1;
  if (s == "case2") return ClipKind::Case2;
  throw DataError("unknown clip kind '" + s + "'");
}

namespace {
ShapeKind shape_from(const std::string& s) {
  if (s == "disk") return ShapeKind::Disk;
  if (s == "square") return ShapeKind::Square;
  if (s == "triangle") return ShapeKind::Triangle;
  throw DataError("unknown shape '" + s + "'");
}
}  // namespace

void SynthConfig::validate() const {
  if (height < 16 || width < 16 || height % 16 || width % 16) {
    throw ParameterError("synth: canvas must be at least 16x16 and divisible by 16");
  }
  if (frames < 3) throw ParameterError("synth: at least 3 frames are needed for switching clips");
  if (audio_dim < 1) throw ParameterError("synth: audio_dim must be positive");
  if (classes < 2 || classes > 5) throw ParameterError("synth: classes must lie in [2, 5]");
  if (kappa < 0 || audio_noise < 0 || pixel_noise < 0 || color_jitter < 0) {
    throw ParameterError("synth: noise levels and kappa must be non-negative");
  }
  if (radius_min < 2 || radius_max < radius_min) throw ParameterError("synth: bad radius range");
}

void SceneSpec::validate(int classes) const {
  if (height <= 0 || width <= 0 || frames <= 0) throw DataError("scene: empty canvas");
  bool any = objects.empty();
  for (const auto& o : objects) {
    if (o.class_id < 1 || o.class_id >= classes) throw DataError("scene: class id out of range");
    if (o.radius < 2) throw DataError("scene: radius below 2 px");
    if (std::int64_t(o.sounding.size()) != frames) throw DataError("scene: schedule length mismatch");
    for (bool s : o.sounding) any = any || s;
  }
  if (!any) throw DataError("scene: every frame is silent");
}

nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : spec.objects) {
    std::vector<int> sched(o.sounding.begin(), o.sounding.end());
    objects.push_back({{"class_id", o.class_id},
                       {"shape", to_string(o.shape)},
                       {"color", o.color},
                       {"center", {o.cx, o.cy}},
                       {"radius", o.radius},
                       {"sounding", sched}});
  }
  return {{"kind", to_string(spec.kind)}, {"height", spec.height},
          {"width", spec.width},          {"frames", spec.frames},
          {"background", spec.background}, {"kappa", spec.kappa},
          {"audio_noise", spec.audio_noise}, {"pixel_noise", spec.pixel_noise},
          {"seed", spec.seed},            {"objects", objects}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    SceneSpec s;
    s.kind = clip_kind_from(j.at("kind"));
    s.height = j.at("height");
    s.width = j.at("width");
    s.frames = j.at("frames");
    s.background = j.at("background");
    s.kappa = j.at("kappa");
    s.audio_noise = j.at("audio_noise");
    s.pixel_noise = j.at("pixel_noise");
    s.seed = j.at("seed");
    for (const auto& o : j.at("objects")) {
      ObjectSpec obj;
      obj.class_id = o.at("class_id");
      obj.shape = shape_from(o.at("shape"));
      obj.color = o.at("color");
      obj.cx = o.at("center").at(0);
      obj.cy = o.at("center").at(1);
      obj.radius = o.at("radius");
      for (int v : o.at("sounding")) obj.sounding.push_back(v != 0);
      s.objects.push_back(std::move(obj));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scene spec: ") + e.what());
  }
}

ShapeKind class_shape(int class_id) {
  static constexpr ShapeKind shapes[] = {ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle,
                                         ShapeKind::Disk};
  if (class_id < 1 || class_id > 4) throw ParameterError("class id out of range");
  return shapes[class_id - 1];
}

std::array<double, 3> class_color(int class_id) {
  static constexpr std::array<double, 3> colors[] = {
      {0.80, 0.15, 0.15}, {0.15, 0.70, 0.25}, {0.15, 0.25, 0.80}, {0.80, 0.75, 0.15}};
  if (class_id < 1 || class_id > 4) throw ParameterError("class id out of range");
  return colors[class_id - 1];
}

Tensor make_audio_table(Rng& rng, int classes, std::int64_t audio_dim) {
  Tensor t(Shape{classes, audio_dim});
  for (std::int64_t c = 1; c < classes; ++c)
    for (std::int64_t d = 0; d < audio_dim; ++d) t.at(c, d) = float(rng.normal());
  return t;
}

SyntheticSample render(const SceneSpec& spec, const Tensor& audio_table) {
  const auto T = spec.frames, H = spec.height, W = spec.width;
  const auto Da = audio_table.dim(1);
  Rng rng(spec.seed);
  SyntheticSample s{Tensor(Shape{T, H, W, 3}), Tensor(Shape{T, Da}), Tensor(Shape{T, H, W})};
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        std::array<double, 3> c{spec.background, spec.background, spec.background};
        float label = 0;
        for (const auto& o : spec.objects) {
          if (!inside(o, double(x) + 0.5, double(y) + 0.5)) continue;
          const double lift = o.sounding[t] ? spec.kappa : 0.0;
          for (int k = 0; k < 3; ++k) c[k] = clamp01(o.color[k] + lift);
          label = o.sounding[t] ? float(o.class_id) : 0.0f;
        }
        float* px = s.frames.raw() + ((t * H + y) * W + x) * 3;
        for (int k = 0; k < 3; ++k) px[k] = float(clamp01(c[k] + rng.normal() * spec.pixel_noise));
        s.gt[(t * H + y) * W + x] = label;
      }
    for (std::int64_t d = 0; d < Da; ++d) {
      double v = 0;
      for (const auto& o : spec.objects)
        if (o.sounding[t]) v += audio_table.at(o.class_id, d);
      s.audio.at(t, d) = float(v + rng.normal() * spec.audio_noise);
    }
  }
  return s;
}

SceneSpec generate_easy(Rng& rng, const SynthConfig& cfg) {
  auto s = base_scene(rng, cfg, ClipKind::Easy);
  const int count = 1 + int(rng.uniform_int(std::min(3, cfg.classes - 1)));
  const auto ids = distinct_classes(rng, cfg.classes, count);
  const int forced = int(rng.uniform_int(count));
  for (int i = 0; i < count; ++i) {
    auto o = place(rng, cfg, s.objects, ids[i]);
    const bool on = i == forced || rng.bernoulli(0.5);
    o.sounding.assign(cfg.frames, on);
    s.objects.push_back(std::move(o));
  }
  return s;
}

SceneSpec generate_case1(Rng& rng, const SynthConfig& cfg) {
  auto s = base_scene(rng, cfg, ClipKind::Case1);
  s.kappa = cfg.kappa;
  const int id = 1 + int(rng.uniform_int(cfg.classes - 1));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
    const double cx = rng.uniform(0, double(cfg.width));
    const double cy = rng.uniform(0, double(cfg.height));
    const double angle = rng.uniform(0, 2 * M_PI);
    const double dist = rng.uniform(kExtent * 2 * r + 1, 1.5 * 2 * r);
    const double cx2 = cx + dist * std::cos(angle), cy2 = cy + dist * std::sin(angle);
    if (!fits(cfg, cx, cy, r) || !fits(cfg, cx2, cy2, r)) continue;
    ObjectSpec a;
    a.class_id = id;
    a.shape = class_shape(id);
    a.color = jittered(rng, id, cfg.color_jitter);
    a.cx = cx;
    a.cy = cy;
    a.radius = r;
    ObjectSpec b = a;
    b.color = jittered(rng, id, cfg.color_jitter);
    b.cx = cx2;
    b.cy = cy2;
    for (std::int64_t t = 0; t < cfg.frames; ++t) {
      const bool first = rng.bernoulli(0.5);
      a.sounding.push_back(first);
      b.sounding.push_back(!first);
    }
    s.objects = {std::move(a), std::move(b)};
    return s;
  }
  throw ParameterError("synth: canvas too small for a close pair");
}

SceneSpec generate_case2(Rng& rng, const SynthConfig& cfg) {
  auto s = base_scene(rng, cfg, ClipKind::Case2);
  const int count = cfg.classes > 2 && rng.bernoulli(0.5) ? 2 : 1;
  const auto ids = distinct_classes(rng, cfg.classes, count);
  for (int i = 0; i < count; ++i) {
    auto o = place(rng, cfg, s.objects, ids[i]);
    if (i == 0 || rng.bernoulli(0.5)) o.sounding = switching_schedule(rng, cfg.frames);
    else o.sounding.assign(cfg.frames, rng.bernoulli(0.5));
    s.objects.push_back(std::move(o));
  }
  return s;
}

std::vector<const ClipEntry*> Dataset::split(const std::string& name) const {
  std::vector<const ClipEntry*> out;
  for (const auto& c : clips)
    if (c.split == name) out.push_back(&c);
  return out;
}

Dataset generate_dataset(std::uint64_t seed, int n_clips, const std::array<double, 3>& mix,
                         const SynthConfig& cfg) {
  cfg.validate();
  if (n_clips < 10) throw ParameterError("generate_dataset: at least 10 clips are required");
  double total = 0;
  for (double m : mix) {
    if (m < 0) throw ParameterError("generate_dataset: negative mix fraction");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("generate_dataset: mix must sum to 1");

  Rng master(seed);
  Dataset data;
  data.seed = seed;
  data.config = cfg;
  Rng table_rng = master.derive(0xA0D10);
  data.audio_table = make_audio_table(table_rng, cfg.classes, cfg.audio_dim);

  const int n_easy = int(std::lround(mix[0] * n_clips));
  const int n_case1 = std::min(n_clips - n_easy, int(std::lround(mix[1] * n_clips)));
  std::vector<ClipKind> kinds(n_clips, ClipKind::Case2);
  std::fill_n(kinds.begin(), n_easy, ClipKind::Easy);
  std::fill_n(kinds.begin() + n_easy, n_case1, ClipKind::Case1);
  Rng shuffle = master.derive(0x5E1);
  for (int i = n_clips - 1; i > 0; --i) std::swap(kinds[i], kinds[shuffle.uniform_int(i + 1)]);

  const int n_train = n_clips * 70 / 100;
  const int n_val = n_clips * 15 / 100;
  for (int i = 0; i < n_clips; ++i) {
    Rng rng = master.derive(std::uint64_t(i) + 1);
    ClipEntry e;
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04d", i);
    e.name = name;
    e.kind = kinds[i];
    e.split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    switch (e.kind) {
      case ClipKind::Easy: e.spec = generate_easy(rng, cfg); break;
      case ClipKind::Case1: e.spec = generate_case1(rng, cfg); break;
      case ClipKind::Case2: e.spec = generate_case2(rng, cfg); break;
    }
    e.spec.validate(cfg.classes);
    e.sample = render(e.spec, data.audio_table);
    data.clips.push_back(std::move(e));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : data.clips) {
    const fs::path root = fs::path(dir) / c.name;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
    save_tensor((root / "frames.avtk").string(), c.sample.frames);
    save_tensor((root / "audio.avtk").string(), c.sample.audio);
    save_tensor((root / "gt.avtk").string(), c.sample.gt);
    write_text(root / "spec.json", to_json(c.spec).dump(2) + "\n");
    clips.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"split", c.split}});
  }
  save_tensor((fs::path(dir) / "audio_table.avtk").string(), data.audio_table);
  const nlohmann::json manifest{{"schema_version", kManifestVersion},
                                {"seed", data.seed},
                                {"config", config_json(data.config)},
                                {"clips", clips}};
  write_text(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const auto manifest = read_json(fs::path(dir) / "manifest.json");
  Dataset data;
  try {
    if (manifest.at("schema_version") != kManifestVersion) {
      throw DataError("manifest: unsupported schema_version");
    }
    data.seed = manifest.at("seed");
    data.config = config_from(manifest.at("config"));
    for (const auto& entry : manifest.at("clips")) {
      ClipEntry c;
      c.name = entry.at("name");
      c.kind = clip_kind_from(entry.at("kind"));
      c.split = entry.at("split");
      const fs::path root = fs::path(dir) / c.name;
      c.spec = scene_from_json(read_json(root / "spec.json"));
      c.sample.frames = load_tensor((root / "frames.avtk").string());
      c.sample.audio = load_tensor((root / "audio.avtk").string());
      c.sample.gt = load_tensor((root / "gt.avtk").string());
      data.clips.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  data.audio_table = load_tensor((fs::path(dir) / "audio_table.avtk").string());
  return data;
}

}  // namespace avseg::synth
