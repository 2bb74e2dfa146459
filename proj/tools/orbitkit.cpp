#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "orbitkit/config.hpp"
#include "orbitkit/dataset.hpp"
#include "orbitkit/io.hpp"
#include "orbitkit/metrics.hpp"
#include "orbitkit/parallel.hpp"
#include "orbitkit/png.hpp"
#include "orbitkit/sampler.hpp"
#include "orbitkit/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orbitkit;

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  int threads = 0;

  RunConfig load() const { return RunConfig::load(config, overrides); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config JSON (defaults used for missing keys)");
  cmd->add_option("--set", c.overrides, "override a config value, e.g. --set train.steps=100")->take_all();
  cmd->add_option("--threads", c.threads, "worker thread cap (0 = all cores; env ORBITKIT_THREADS)");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Tensor<float> load_image(const fs::path& path) {
  if (path.extension() == ".png") return read_png(path);
  auto t = read_onv(path);
  if (t.rank() != 3 || t.dim(2) != 3) throw ShapeError(path.string() + ": expected an [H,W,3] image, got " + shape_str(t.shape()));
  return t;
}

CodecConfig load_codec(const RunConfig& cfg) {
  if (cfg.codec.kind == "identity") return cfg.codec_config();
  if (cfg.codec.checkpoint.empty())
    throw ConfigError("codec.kind=learned needs codec.checkpoint (run train-codec first)");
  auto codec = CodecConfig::from_checkpoint(Checkpoint::load(cfg.codec.checkpoint));
  if (codec.spatial_factor != cfg.codec.spatial_factor || codec.latent_channels != cfg.codec.latent_channels)
    throw ConfigError("codec checkpoint " + cfg.codec.checkpoint + " does not match the codec section of the config");
  return codec;
}

void check_dataset(const RunConfig& cfg, const std::vector<SceneRecord>& scenes) {
  const auto& v = scenes.front().video;
  if (v.rgb.dim(1) != cfg.dataset.height || v.rgb.dim(2) != cfg.dataset.width)
    throw ConfigError("dataset frames are " + std::to_string(v.rgb.dim(1)) + "x" + std::to_string(v.rgb.dim(2)) +
                      " but the config says " + std::to_string(cfg.dataset.height) + "x" + std::to_string(cfg.dataset.width));
  if (v.trajectory.frame_count < cfg.train.frames)
    throw ConfigError("dataset orbits have fewer frames than train.frames");
}

int cmd_render_dataset(const Common& common, const std::string& out) {
  const auto cfg = common.load();
  const auto manifest = render_dataset(cfg.dataset, out, [](int done, int total) {
    std::cerr << "\rrendered " << done << "/" << total << std::flush;
  });
  std::cerr << "\n";
  std::cout << "wrote " << manifest["scenes"].size() << " scenes to " << out << "\n";
  return kOk;
}

int cmd_train_codec(const Common& common, const std::string& data, const std::string& out) {
  const auto cfg = common.load();
  if (cfg.codec.kind != "learned") throw ConfigError("train-codec needs codec.kind=learned");
  const auto scenes = load_dataset(data);
  check_dataset(cfg, scenes);
  // The last scene is held out when there is more than one.
  const std::size_t n_train = scenes.size() > 1 ? scenes.size() - 1 : 1;
  auto stack = [&](std::size_t from, std::size_t to) {
    std::int64_t frames = 0;
    for (std::size_t i = from; i < to; ++i) frames += scenes[i].video.rgb.dim(0);
    const auto& v0 = scenes[from].video.rgb;
    Tensor<float> out_t({frames, v0.dim(1), v0.dim(2), 3});
    std::size_t off = 0;
    for (std::size_t i = from; i < to; ++i) {
      const auto& v = scenes[i].video.rgb;
      std::copy(v.values().begin(), v.values().end(), out_t.data() + off);
      off += v.size();
    }
    return out_t;
  };
  const auto train_frames = stack(0, n_train);
  const auto heldout = scenes.size() > 1 ? stack(n_train, scenes.size()) : Tensor<float>();
  auto codec = cfg.codec_config();
  const auto report = train_codec(codec, train_frames, heldout, cfg.codec.train_steps, cfg.codec.lr, cfg.codec.batch,
                                  derive_seed(cfg.seed, "codec.train"));
  Checkpoint ck;
  codec.to_checkpoint(ck);
  ck.save(out);
  std::cout << "final train mse " << (report.losses.empty() ? 0.0 : report.losses.back());
  if (heldout.size()) std::cout << ", held-out mse " << report.heldout_mse;
  std::cout << "\nwrote " << out << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& data, const std::string& out, int stage,
              const std::string& resume) {
  auto cfg = common.load();
  if (stage != 0) cfg.train.stage = stage;
  if (cfg.train.stage == 2 && resume.empty()) throw ConfigError("--stage 2 requires --resume <stage-1 checkpoint>");
  const auto tcfg = cfg.train_config();
  const auto scenes = load_dataset(data);
  check_dataset(cfg, scenes);

  TrainState state = resume.empty() ? TrainState::fresh(cfg.model_config(), load_codec(cfg), tcfg)
                                    : TrainState::from_checkpoint(Checkpoint::load(resume), tcfg);
  fs::create_directories(out);
  write_file_atomic(fs::path(out) / "run_config.json", cfg.to_json().dump(2) + "\n");
  const auto source = window_source(scenes, state.model.frames, cfg.train.frame_stride);
  double window = 0;
  int count = 0;
  train(state, tcfg, source, fs::path(out), {[&](std::int64_t step, const LossReport& r) {
          window += r.total;
          if (++count == 50) {
            std::cerr << "step " << step << " mean loss " << window / count << "\n";
            window = 0;
            count = 0;
          }
        }});
  std::cout << "wrote " << (fs::path(out) / "final.onvc").string() << "\n";
  return kOk;
}

int cmd_sample(const Common& common, const std::string& ckpt_path, const std::string& scene_dir,
               const std::string& trajectory_path, const std::vector<std::string>& refs, const std::string& out,
               int steps, long long seed, bool png) {
  const auto cfg = common.load();
  const auto ck = Checkpoint::load(ckpt_path);
  const auto model = ModelConfig::from_checkpoint(ck);
  const auto codec = CodecConfig::from_checkpoint(ck);
  ParamSet<float> params = init_params(model, 0);
  params.from_checkpoint(ck, "param.");

  SampleConfig sc;
  sc.steps = steps > 0 ? steps : cfg.sample.steps;
  sc.seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seed;
  sc.guidance = cfg.sample.guidance;
  sc.height = model.latent_h * codec.spatial_factor;
  sc.width = model.latent_w * codec.spatial_factor;
  std::map<int, Tensor<float>> references;
  if (!scene_dir.empty()) {
    const auto gt = read_scene(scene_dir);
    sc.trajectory = gt.trajectory;
    references[0] = frame_of(gt.rgb, 0);
  } else {
    if (trajectory_path.empty()) throw ConfigError("sample needs --scene or --trajectory");
    const json doc = json::parse(read_file(trajectory_path), nullptr, false);
    if (doc.is_discarded()) throw ConfigError(trajectory_path + " is not valid JSON");
    sc.trajectory = trajectory_from_json(doc);
  }
  for (const auto& r : refs) {
    const auto eq = r.find('=');
    if (eq == std::string::npos) throw ConfigError("--ref expects FRAME=PATH, got " + r);
    references[std::stoi(r.substr(0, eq))] = load_image(r.substr(eq + 1));
  }
  if (sc.trajectory.frame_count != model.frames)
    throw ConfigError("trajectory has " + std::to_string(sc.trajectory.frame_count) + " frames; the checkpoint model expects " +
                      std::to_string(model.frames));
  for (auto& [f, img] : references) {
    if (img.dim(0) != sc.height || img.dim(1) != sc.width)
      throw ShapeError("reference frame " + std::to_string(f) + " is " + std::to_string(img.dim(0)) + "x" +
                       std::to_string(img.dim(1)) + "; the checkpoint works at " + std::to_string(sc.height) + "x" +
                       std::to_string(sc.width));
    sc.references.emplace_back(f, std::move(img));
  }

  auto result = euler_sample(params, model, codec, sc);
  replace_reference_frames(result, sc);
  fs::create_directories(out);
  const fs::path dir(out);
  write_onv(dir / "rgb.onv", result.rgb);
  if (result.normal.size()) write_onv(dir / "normal.onv", result.normal);
  write_file_atomic(dir / "trajectory.json", trajectory_to_json(sc.trajectory).dump(2));
  json ref_frames = json::array();
  for (const auto& [f, img] : sc.references) ref_frames.push_back(f);
  const json provenance{{"checkpoint", ckpt_path},
                        {"checkpoint_crc64", hex64(crc64(read_file(ckpt_path)))},
                        {"seed", sc.seed},
                        {"steps", sc.steps},
                        {"guidance", sc.guidance},
                        {"reference_frames", ref_frames},
                        {"clamp_fraction", result.clamp_fraction},
                        {"config", cfg.to_json()}};
  write_file_atomic(dir / "provenance.json", provenance.dump(2) + "\n");
  if (png || cfg.sample.png) {
    write_png_frames(dir, "rgb", result.rgb);
    if (result.normal.size()) write_png_frames(dir, "normal", result.normal);
  }
  std::cout << "wrote " << out << " (clamped " << 100.0 * result.clamp_fraction << "% of values)\n";
  return kOk;
}

int cmd_eval(const Common& common, const std::string& gen, const std::string& gt, const std::string& report,
             bool all_frames) {
  const auto cfg = common.load();
  const auto r = evaluate_run(gen, gt, cfg.eval.skip_reference_frames && !all_frames);
  const auto summary = r.summary();
  if (!report.empty()) {
    write_file_atomic(report, r.csv());
    auto json_path = fs::path(report);
    json_path.replace_extension(".json");
    write_file_atomic(json_path, summary.dump(2) + "\n");
  }
  std::cout << summary.dump(2) << "\n";
  return kOk;
}

int cmd_selftest() {
  int failed = 0;
  std::printf("%-32s %-6s %s\n", "check", "result", "detail");
  run_selftest([&](const SelfTestResult& r) {
    failed += !r.passed;
    std::printf("%-32s %-6s %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.detail.c_str());
    std::fflush(stdout);
  });
  std::printf("%s\n", failed ? "selftest FAILED" : "selftest passed");
  return failed ? kNumerical : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbitkit: orbital novel-view video generation at desk scale"};
  app.require_subcommand(1);
  Common common;

  std::string out, data, resume, ckpt, scene, trajectory, gen, gt, report;
  std::vector<std::string> refs;
  int stage = 0, steps = 0;
  long long seed = -1;
  bool png = false, all_frames = false;

  auto* render = app.add_subcommand("render-dataset", "render procedural scenes into a dataset directory");
  add_common(render, common);
  render->add_option("--out", out, "dataset directory")->required();

  auto* codec = app.add_subcommand("train-codec", "pre-train the learned latent codec on a dataset");
  add_common(codec, common);
  codec->add_option("--data", data, "dataset directory")->required();
  codec->add_option("--out", out, "codec checkpoint to write")->required();

  auto* trainc = app.add_subcommand("train", "train the camera-conditioned denoiser");
  add_common(trainc, common);
  trainc->add_option("--data", data, "dataset directory")->required();
  trainc->add_option("--out", out, "run directory")->required();
  trainc->add_option("--stage", stage, "1 = latent loss, 2 = latent + pixel loss")->check(CLI::IsMember({1, 2}));
  trainc->add_option("--resume", resume, "checkpoint to continue from (required for stage 2)");

  auto* sample = app.add_subcommand("sample", "generate an orbit video from reference frames");
  add_common(sample, common);
  sample->add_option("--ckpt", ckpt, "training checkpoint")->required();
  sample->add_option("--scene", scene, "ground-truth scene dir: uses its trajectory and frame 0 as reference");
  sample->add_option("--trajectory", trajectory, "trajectory JSON");
  sample->add_option("--ref", refs, "reference frame as FRAME=PATH (.png or .onv)")->take_all();
  sample->add_option("--out", out, "output directory")->required();
  sample->add_option("--steps", steps, "Euler steps (default from config)");
  sample->add_option("--seed", seed, "noise seed (default from config)");
  sample->add_flag("--png", png, "also write per-frame PNGs");

  auto* eval = app.add_subcommand("eval", "score a generated orbit against ground truth");
  add_common(eval, common);
  eval->add_option("--gen", gen, "generated directory")->required();
  eval->add_option("--gt", gt, "ground-truth scene directory")->required();
  eval->add_option("--report", report, "per-frame CSV (a JSON summary is written next to it)");
  eval->add_flag("--all-frames", all_frames, "include reference frames in the means");

  auto* self = app.add_subcommand("selftest", "run the invariant suite");
  add_common(self, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (common.threads > 0) set_thread_limit(common.threads);
    if (*render) return cmd_render_dataset(common, out);
    if (*codec) return cmd_train_codec(common, data, out);
    if (*trainc) return cmd_train(common, data, out, stage, resume);
    if (*sample) return cmd_sample(common, ckpt, scene, trajectory, refs, out, steps, seed, png);
    if (*eval) return cmd_eval(common, gen, gt, report, all_frames);
    if (*self) return cmd_selftest();
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kUsage;
}
