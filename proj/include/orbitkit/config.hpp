#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "orbitkit/codec.hpp"
#include "orbitkit/flow.hpp"
#include "orbitkit/model.hpp"

namespace orbitkit {

/// Bad configuration or command-line input (unknown key, wrong type, out-of-range value).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
  int scenes = 64;
  std::uint64_t first_seed = 0;
  int complexity_min = 1;
  int complexity_max = 4;
  int frames = 61;
  int height = 32;
  int width = 32;
  double amplitude_deg = 30.0;
  double frequency = 3.0;
  double radius = 4.0;
  bool png = false;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct CodecSection {
  std::string kind = "identity";
  int spatial_factor = 4;
  int latent_channels = 16;  // learned kind; identity always uses 3*s*s
  int hidden = 32;
  std::string checkpoint;  // trained learned codec, empty for identity
  int train_steps = 2000;
  double lr = 3e-3;
  int batch = 8;
};

struct ModelSection {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int patch = 2;
  int adapter_hidden = 32;
  int pixel_cell = 4;
  bool dual_branch = true;
  double min_one_minus_t = 0.05;
};

struct TrainSection {
  int stage = 1;
  int steps = 2000;
  int batch = 1;
  double lr_pretrained = 1e-5;
  double lr_new = 1e-4;
  double pixel_loss_weight = 1.0;
  double grad_clip = 1.0;
  int checkpoint_every = 500;
  int frames = 16;       // orbit length seen by the model
  int frame_stride = 4;  // dataset frames between consecutive training frames
};

struct SampleSection {
  int steps = 32;
  double guidance = 1.0;
  bool png = false;
};

struct EvalSection {
  bool skip_reference_frames = true;
};

/// Every knob of a run. Unknown keys and type mismatches are rejected when parsing.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  CodecSection codec;
  ModelSection model;
  TrainSection train;
  SampleSection sample;
  EvalSection eval;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  /// Defaults, then the file (if non-empty), then each "a.b=value" override in order.
  static RunConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

  void validate() const;
  ModelConfig model_config() const;
  /// Fresh codec for the configured kind (learned weights are loaded separately).
  CodecConfig codec_config() const;
  TrainConfig train_config() const;
};

/// Applies "a.b.c=value" to a document; the path must already exist. The value is parsed as JSON
/// when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace orbitkit
