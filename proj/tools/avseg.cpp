#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "avseg/errors.hpp"
#include "avseg/gradient_suite.hpp"
#include "avseg/model.hpp"
#include "avseg/uncertainty.hpp"
#include "run_config.hpp"

using namespace avseg;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kIo = 3, kDivergence = 4, kMismatch = 5 };

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  throw ConfigError(std::string("missing ") + what);
}

const synth::ClipEntry& find_clip(const synth::Dataset& data, const std::string& key) {
  for (const auto& c : data.clips)
    if (c.name == key) return c;
  try {
    std::size_t used = 0;
    const long idx = std::stol(key, &used);
    if (used == key.size() && idx >= 0 && std::size_t(idx) < data.clips.size()) return data.clips[idx];
  } catch (const std::exception&) {
  }
  throw ParameterError("clip '" + key + "' not found (" + std::to_string(data.clips.size()) + " clips)");
}

model::Checkpoint checked_checkpoint(const std::string& dir, const synth::Dataset& data) {
  auto ck = model::load_checkpoint(dir);
  const auto& c = ck.config;
  const auto& d = data.config;
  if (c.height != d.height || c.width != d.width || c.frames != d.frames || c.classes != d.classes ||
      c.audio_dim != d.audio_dim) {
    throw ArtifactMismatch("checkpoint expects " + std::to_string(c.frames) + " frames of " +
                           std::to_string(c.height) + "x" + std::to_string(c.width) + ", " +
                           std::to_string(c.classes) + " classes, audio " + std::to_string(c.audio_dim) +
                           "; the dataset does not match");
  }
  return ck;
}

struct Options {
  std::string config, out, data, checkpoint, mix, ablate, split = "val", report, clip;
  std::optional<std::uint64_t> seed;
  std::optional<int> clips, steps;
  int frame = 0, level = 3;
  bool corrupt = false;
};

int cmd_synth(const Options& o) {
  auto rc = cli::load_run_config(o.config);
  if (o.seed) rc.seed = *o.seed;
  if (o.clips) rc.clips = *o.clips;
  if (!o.mix.empty()) rc.mix = cli::parse_mix(o.mix);
  const auto out = pick(o.out, rc.out, "--out");
  const auto data = synth::generate_dataset(rc.seed, rc.clips, rc.mix, rc.synth);
  synth::save_dataset(data, out);
  std::map<std::string, int> counts;
  std::map<std::string, int> splits;
  for (const auto& c : data.clips) {
    ++counts[synth::to_string(c.kind)];
    ++splits[c.split];
  }
  std::cout << "wrote " << data.clips.size() << " clips to " << out << "\n";
  for (const char* k : {"easy", "case1", "case2"}) std::cout << k << "\t" << counts[k] << "\n";
  for (const char* s : {"train", "val", "test"}) std::cout << s << "\t" << splits[s] << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  auto rc = cli::load_run_config(o.config);
  if (o.seed) rc.model.seed = *o.seed;
  if (o.steps) rc.model.steps = *o.steps;
  if (!o.ablate.empty()) rc.model.ablation = model::ablation_from(o.ablate);
  const auto data_dir = pick(o.data, rc.data, "--data");
  const auto out = pick(o.out, rc.out, "--out");
  const auto data = synth::load_dataset(data_dir);
  const auto cfg = cli::bind_to_dataset(rc, data.config);

  std::cout << "# started " << now_utc() << "\n";
  std::cout << "train ablation=" << model::to_string(cfg.ablation) << " seed=" << cfg.seed
            << " steps=" << cfg.steps << " clips=" << data.split("train").size() << "\n"
            << std::flush;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = model::train(data, cfg, [](const std::string& line) { std::cout << line << "\n" << std::flush; });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  model::save_checkpoint(out, result.params, cfg);
  write_file(fs::path(out) / "loss.csv", model::loss_csv(result.losses));
  write_file(fs::path(out) / "val_report.json", metrics::to_json(result.final_val).dump(2) + "\n");
  std::cout << "contrastive frames " << result.contrastive.frames << " empty_positive "
            << result.contrastive.empty_positive << " empty_negative " << result.contrastive.empty_negative
            << "\n";
  std::cout << metrics::format_table(result.final_val);
  std::cout << "# finished " << now_utc() << " after " << secs << " s\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const auto data = synth::load_dataset(o.data);
  const auto ck = checked_checkpoint(o.checkpoint, data);
  const auto clips = data.split(o.split);
  if (clips.empty()) throw ParameterError("split '" + o.split + "' has no clips");
  const auto report = model::evaluate(ck.params, ck.config, clips);
  const auto json = metrics::to_json(report).dump(2) + "\n";
  if (!o.report.empty()) write_file(o.report, json);
  else std::cout << json;
  std::cout << metrics::format_table(report);
  return kOk;
}

int cmd_groups(const Options& o) {
  const auto data = synth::load_dataset(o.data);
  const auto ck = checked_checkpoint(o.checkpoint, data);
  const auto& clip = find_clip(data, o.clip);
  if (o.level < 1 || o.level > 3) throw ParameterError("--level must be 1, 2 or 3");
  if (o.frame < 0 || o.frame >= ck.config.frames) {
    throw ParameterError("--frame must lie in [0, " + std::to_string(ck.config.frames) + ")");
  }
  const auto batch = model::make_batch(clip.sample);
  const Bound<float> p(ck.params, false);
  const auto fw = model::forward(p, ck.config, ad::constant(batch.frames), ad::constant(batch.audio));
  const auto& ga = fw.groups[o.level - 1][o.frame];
  const auto stride = model::kStrides[o.level - 1];
  const auto h = ck.config.height / stride, w = ck.config.width / stride;
  std::cout << clip.name << " frame " << o.frame << " level " << o.level << ": " << ga.labels.size()
            << " tokens (" << h << "x" << w << "), " << ga.num_groups << " groups\n";
  std::cout << grouping::format_table(ga);
  std::vector<std::uint8_t> px(ga.labels.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = ga.num_groups > 1 ? std::uint8_t(std::lround(255.0 * ga.labels[i] / (ga.num_groups - 1))) : 0;
  const std::string out = o.out.empty() ? clip.name + "_f" + std::to_string(o.frame) + "_l" +
                                              std::to_string(o.level) + "_groups.pgm"
                                        : o.out;
  uncertainty::write_pgm(out, w, h, px);
  std::cout << "label map " << out << "\n";
  return kOk;
}

int cmd_uncmap(const Options& o) {
  const auto data = synth::load_dataset(o.data);
  const auto ck = checked_checkpoint(o.checkpoint, data);
  const auto& clip = find_clip(data, o.clip);
  const auto batch = model::make_batch(clip.sample);
  const Bound<float> p(ck.params, false);
  const auto fw = model::forward(p, ck.config, ad::constant(batch.frames), ad::constant(batch.audio));
  const auto& dn = fw.delta_norm.value();
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create " + o.out + ": " + ec.message());
  const std::int64_t T = dn.dim(0);
  const std::size_t block = dn.size() / std::size_t(T);
  std::cout << clip.name << " (" << synth::to_string(clip.kind) << ")\nframe\tmean_delta_norm\tsounding\n";
  for (std::int64_t t = 0; t < T; ++t) {
    double s = 0;
    for (std::size_t i = 0; i < block; ++i) s += dn[t * block + i];
    int sounding = 0;
    for (const auto& obj : clip.spec.objects) sounding += obj.sounding[t] ? 1 : 0;
    char line[96];
    std::snprintf(line, sizeof line, "%lld\t%.6f\t%d\n", static_cast<long long>(t), s / double(block), sounding);
    std::cout << line;
    char name[32];
    std::snprintf(name, sizeof name, "frame_%02lld.pgm", static_cast<long long>(t));
    uncertainty::write_pgm((fs::path(o.out) / name).string(), ck.config.width, ck.config.height,
                           uncertainty::uncertainty_image(dn, t));
  }
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  const auto rc = cli::load_run_config(o.config);
  const auto entries = model::gradient_suite(o.seed.value_or(rc.model.seed), rc.model.contrastive, o.corrupt);
  std::cout << model::format_suite(entries);
  bool ok = true;
  for (const auto& e : entries) ok = ok && e.pass();
  std::cout << (ok ? "all components within tolerance\n" : "gradient check FAILED\n");
  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual segmentation with modality alignment and uncertainty estimation"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", o.config, "run config (JSON)");
  synth->add_option("--out", o.out, "dataset directory");
  synth->add_option("--seed", o.seed, "dataset seed");
  synth->add_option("--clips", o.clips, "number of clips");
  synth->add_option("--mix", o.mix, "easy,case1,case2 fractions");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", o.config, "run config (JSON)");
  train->add_option("--data", o.data, "dataset directory");
  train->add_option("--out", o.out, "checkpoint directory");
  train->add_option("--ablate", o.ablate, "none, no-sgsm, no-cst or no-ue");
  train->add_option("--seed", o.seed, "model seed");
  train->add_option("--steps", o.steps, "optimizer steps");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--split", o.split, "train, val or test");
  eval->add_option("--report", o.report, "write the JSON report here");

  auto* groups = app.add_subcommand("groups", "dump token groups of one frame");
  groups->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  groups->add_option("--data", o.data, "dataset directory")->required();
  groups->add_option("--clip", o.clip, "clip name or index")->required();
  groups->add_option("--frame", o.frame, "frame index");
  groups->add_option("--level", o.level, "AMA level 1-3");
  groups->add_option("--out", o.out, "label map PGM");

  auto* uncmap = app.add_subcommand("uncmap", "export uncertainty maps of a clip");
  uncmap->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  uncmap->add_option("--data", o.data, "dataset directory")->required();
  uncmap->add_option("--clip", o.clip, "clip name or index")->required();
  uncmap->add_option("--out", o.out, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every component");
  gradcheck->add_option("--config", o.config, "run config (JSON)");
  gradcheck->add_option("--seed", o.seed, "seed for inputs and parameters");
  gradcheck->add_flag("--test-corrupt", o.corrupt, "scale every checked adjoint by 1.5");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*groups) return cmd_groups(o);
    if (*uncmap) return cmd_uncmap(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const DataError& e) {
    std::cerr << "bad data: " << e.what() << "\n";
    return kMismatch;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}
