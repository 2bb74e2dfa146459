#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "orbitkit/codec.hpp"
#include "orbitkit/model.hpp"
#include "orbitkit/optim.hpp"
#include "orbitkit/render.hpp"
#include "orbitkit/rng.hpp"

namespace orbitkit {

/// x_t = t*x1 + (1-t)*x0.
template <typename Real>
Tensor<Real> interpolate(const Tensor<Real>& x1, const Tensor<Real>& x0, Real t);
template <typename Real>
Var<Real> interpolate(Var<Real> x1, Var<Real> x0, Real t);

/// v = x1 - x0 (independent of t).
template <typename Real>
Tensor<Real> velocity_target(const Tensor<Real>& x1, const Tensor<Real>& x0);

/// Mean squared difference between predicted and target velocity.
template <typename Real>
Var<Real> latent_loss(Var<Real> v_hat, Var<Real> v);

/// mean |D(t*x1 + (1-t)*x0) - D(x0 + t*v_hat)|^2 with gradients through the decoder.
template <typename Real>
Var<Real> pixel_loss(Var<Real> x1, Var<Real> x0, Real t, Var<Real> v_hat, const CodecConfig& codec);

struct TrainConfig {
  int stage = 1;
  int steps = 1000;
  int batch = 1;
  double lr_pretrained = 1e-5;
  double lr_new = 1e-4;
  double pixel_loss_weight = 1.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;

  void validate() const;
};

/// One training orbit in pixel space.
struct TrainingExample {
  Tensor<float> rgb;     // [T,H,W,3]
  Tensor<float> normal;  // [T,H,W,3], encoded (n+1)/2
  Trajectory trajectory;
};

struct OrbitSampling {
  int frames = 16;
  int height = 32;
  int width = 32;
  double radius = 4.0;
  double max_amplitude_deg = 60.0;
};

/// Draws a scene and random orbit parameters (amplitude in [0, max], frequency in {1,2,3},
/// initial azimuth in [0, 2pi)) and renders the orbit.
TrainingExample sample_training_example(const std::vector<Scene>& scenes, const OrbitSampling& sampling, Rng& rng);

struct LossReport {
  double latent_rgb = 0, latent_normal = 0, pixel_rgb = 0, pixel_normal = 0, total = 0, grad_norm = 0;
};

struct TrainState {
  ModelConfig model;
  CodecConfig codec;
  ParamSet<float> params;
  Adam opt;
  int stage = 1;

  static TrainState fresh(const ModelConfig& model, const CodecConfig& codec, const TrainConfig& cfg);
  Checkpoint to_checkpoint() const;
  /// Restores model, codec, parameters and optimizer moments; learning rates come from cfg.
  static TrainState from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg);
};

/// One grouped-Adam update on the mean loss over `batch`. Stage 1 never decodes.
LossReport train_step(TrainState& state, const std::vector<TrainingExample>& batch, const TrainConfig& cfg, Rng& rng);

using ExampleSource = std::function<TrainingExample(Rng&)>;

struct TrainHooks {
  std::function<void(std::int64_t step, const LossReport&)> on_step;
};

/// Runs cfg.steps updates from the state's current step. With an output directory, writes
/// config.json, metrics.csv, periodic checkpoints and final.onvc.
std::vector<LossReport> train(TrainState& state, const TrainConfig& cfg, const ExampleSource& source,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                              const TrainHooks& hooks = {});

}  // namespace orbitkit
