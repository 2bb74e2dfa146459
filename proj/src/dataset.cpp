#include "orbitkit/dataset.hpp"

#include <cstdio>

#include "orbitkit/io.hpp"
#include "orbitkit/png.hpp"
#include "orbitkit/rng.hpp"

namespace orbitkit {
namespace {

using nlohmann::json;

constexpr const char* kSceneFiles[] = {"rgb.onv", "normal.onv", "alpha.onv", "trajectory.json"};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json scene_checksums(const std::filesystem::path& dir) {
  json files = json::object();
  for (const char* name : kSceneFiles) files[name] = hex64(crc64(read_file(dir / name)));
  return files;
}

bool scene_intact(const std::filesystem::path& root, const json& entry) {
  const auto dir = root / entry.at("dir").get<std::string>();
  for (const char* name : kSceneFiles)
    if (!std::filesystem::exists(dir / name)) return false;
  return scene_checksums(dir) == entry.at("files");
}

}  // namespace

std::string scene_dir_name(std::uint64_t seed) { return "scene_" + std::to_string(seed); }

int scene_complexity(const DatasetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, "dataset.complexity");
  return static_cast<int>(rng.integer(cfg.complexity_min, cfg.complexity_max));
}

void write_scene(const std::filesystem::path& dir, const OrbitVideo& video, bool png) {
  std::filesystem::create_directories(dir);
  write_onv(dir / "rgb.onv", video.rgb);
  write_onv(dir / "normal.onv", video.normals);
  write_onv(dir / "alpha.onv", video.alpha);
  write_file_atomic(dir / "trajectory.json", trajectory_to_json(video.trajectory).dump(2));
  if (png) {
    write_png_frames(dir, "rgb", video.rgb);
    write_png_frames(dir, "normal", video.normals);
  }
}

OrbitVideo read_scene(const std::filesystem::path& dir) {
  OrbitVideo v;
  v.rgb = read_onv(dir / "rgb.onv");
  if (std::filesystem::exists(dir / "normal.onv")) v.normals = read_onv(dir / "normal.onv");
  if (std::filesystem::exists(dir / "alpha.onv")) v.alpha = read_onv(dir / "alpha.onv");
  const json doc = json::parse(read_file(dir / "trajectory.json"), nullptr, false);
  if (doc.is_discarded()) throw FormatError((dir / "trajectory.json").string() + ": invalid JSON");
  v.trajectory = trajectory_from_json(doc);
  if (v.rgb.rank() != 4 || v.rgb.dim(0) != v.trajectory.frame_count)
    throw FormatError(dir.string() + ": rgb frames do not match the trajectory");
  return v;
}

json render_dataset(const DatasetConfig& cfg, const std::filesystem::path& out,
                    const std::function<void(int, int)>& progress) {
  std::filesystem::create_directories(out);
  const json cfg_json = cfg;
  const auto manifest_path = out / "manifest.json";
  json previous = json::object();
  if (std::filesystem::exists(manifest_path)) {
    previous = json::parse(read_file(manifest_path), nullptr, false);
    if (previous.is_discarded() || !previous.contains("config")) throw FormatError(manifest_path.string() + ": unreadable manifest");
    if (previous["config"] != cfg_json)
      throw ConfigError(out.string() + " already holds a dataset rendered with a different config");
  }

  json manifest{{"format", "orbitkit-dataset"}, {"version", 1}, {"config", cfg_json}, {"scenes", json::array()}};
  for (int i = 0; i < cfg.scenes; ++i) {
    const std::uint64_t seed = cfg.first_seed + static_cast<std::uint64_t>(i);
    const std::string dir = scene_dir_name(seed);
    const json* done = nullptr;
    if (previous.contains("scenes"))
      for (const auto& e : previous["scenes"])
        if (e.at("dir") == dir) done = &e;
    if (done && scene_intact(out, *done)) {
      manifest["scenes"].push_back(*done);
    } else {
      const int complexity = scene_complexity(cfg, seed);
      const auto traj = orbital_trajectory(cfg.frames, cfg.amplitude_deg, cfg.frequency, cfg.radius, 0.0,
                                           Eigen::Vector3d::Zero(),
                                           Intrinsics::for_image(cfg.height, cfg.width, 0.6, cfg.radius));
      const auto video = render_orbit(procedural_scene(seed, complexity), traj, cfg.height, cfg.width);
      write_scene(out / dir, video, cfg.png);
      manifest["scenes"].push_back(
          json{{"seed", seed}, {"complexity", complexity}, {"dir", dir}, {"files", scene_checksums(out / dir)}});
    }
    write_file_atomic(manifest_path, manifest.dump(2));
    if (progress) progress(i + 1, cfg.scenes);
  }
  return manifest;
}

std::vector<SceneRecord> load_dataset(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("scenes")) throw FormatError((dir / "manifest.json").string() + ": unreadable manifest");
  std::vector<SceneRecord> scenes;
  for (const auto& e : manifest["scenes"]) {
    if (!scene_intact(dir, e)) throw FormatError(dir.string() + "/" + e.at("dir").get<std::string>() + ": checksum mismatch");
    scenes.push_back({e.at("seed").get<std::uint64_t>(), e.at("complexity").get<int>(),
                      read_scene(dir / e.at("dir").get<std::string>())});
  }
  if (scenes.empty()) throw FormatError(dir.string() + ": dataset has no scenes");
  return scenes;
}

TrainingExample orbit_window(const OrbitVideo& video, int start, int frames, int stride) {
  const int T = video.trajectory.frame_count;
  if (frames < 1 || stride < 1 || frames > T) throw std::invalid_argument("orbit_window: bad window for a " + std::to_string(T) + "-frame orbit");
  const std::int64_t H = video.rgb.dim(1), W = video.rgb.dim(2), frame = H * W * 3;
  TrainingExample ex{Tensor<float>({frames, H, W, 3}), Tensor<float>({frames, H, W, 3}), video.trajectory};
  auto& tr = ex.trajectory;
  tr.poses.clear();
  tr.azimuths.clear();
  tr.elevations.clear();
  for (int k = 0; k < frames; ++k) {
    const int src = (start + k * stride) % T;
    std::copy_n(video.rgb.data() + src * frame, frame, ex.rgb.data() + k * frame);
    std::copy_n(video.normals.data() + src * frame, frame, ex.normal.data() + k * frame);
    tr.poses.push_back(video.trajectory.poses[static_cast<std::size_t>(src)]);
    tr.azimuths.push_back(video.trajectory.azimuths[static_cast<std::size_t>(src)]);
    tr.elevations.push_back(video.trajectory.elevations[static_cast<std::size_t>(src)]);
  }
  tr.frame_count = frames;
  tr.initial_azimuth = tr.azimuths.front();
  return ex;
}

ExampleSource window_source(const std::vector<SceneRecord>& scenes, int frames, int stride) {
  if (scenes.empty()) throw std::invalid_argument("window_source: no scenes");
  return [&scenes, frames, stride](Rng& rng) {
    const auto& s = scenes[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(scenes.size()) - 1))];
    const int start = static_cast<int>(rng.integer(0, s.video.trajectory.frame_count - 1));
    return orbit_window(s.video, start, frames, stride);
  };
}

}  // namespace orbitkit
