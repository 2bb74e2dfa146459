#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orbitkit/config.hpp"
#include "orbitkit/flow.hpp"
#include "orbitkit/render.hpp"

namespace orbitkit {

/// One ground-truth orbit on disk: scene_<seed>/{rgb,normal,alpha}.onv and trajectory.json.
struct SceneRecord {
  std::uint64_t seed = 0;
  int complexity = 1;
  OrbitVideo video;
};

std::string scene_dir_name(std::uint64_t seed);
int scene_complexity(const DatasetConfig& cfg, std::uint64_t seed);

/// Renders every scene of the config into `out`, writing manifest.json after each scene. Scenes
/// already listed in a manifest with the same config and matching checksums are skipped, so an
/// interrupted run resumes where it stopped. Returns the manifest.
nlohmann::json render_dataset(const DatasetConfig& cfg, const std::filesystem::path& out,
                              const std::function<void(int done, int total)>& progress = {});

/// Loads and checksum-verifies every scene listed in the manifest.
std::vector<SceneRecord> load_dataset(const std::filesystem::path& dir);

void write_scene(const std::filesystem::path& dir, const OrbitVideo& video, bool png = false);
/// Reads rgb/normal/alpha/trajectory from a scene directory. Missing normal or alpha files yield empty tensors.
OrbitVideo read_scene(const std::filesystem::path& dir);

/// Training windows: `frames` poses taken every `stride` dataset frames (wrapping around the
/// orbit) from a random start in a random scene.
ExampleSource window_source(const std::vector<SceneRecord>& scenes, int frames, int stride);
TrainingExample orbit_window(const OrbitVideo& video, int start, int frames, int stride);

}  // namespace orbitkit
