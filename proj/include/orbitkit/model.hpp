#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "orbitkit/camera.hpp"
#include "orbitkit/params.hpp"

namespace orbitkit {

struct ModelConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int patch = 2;
  int frames = 16;
  int latent_h = 8;
  int latent_w = 8;
  int latent_channels = 48;
  int adapter_hidden = 32;
  int pixel_cell = 4;  // image pixels per latent cell (the codec factor)
  bool dual_branch = true;
  // The network regresses the clean latent; velocity is (x1_hat - x_t) / max(1 - t, this).
  double min_one_minus_t = 0.05;

  void validate() const;
  int grid_h() const { return latent_h / patch; }
  int grid_w() const { return latent_w / patch; }
  int tokens_per_branch(int T) const { return T * grid_h() * grid_w(); }
  int token_dim_in() const { return patch * patch * (2 * latent_channels + 1); }
  int token_dim_out() const { return patch * patch * latent_channels; }

  void to_checkpoint(Checkpoint& ck) const;
  static ModelConfig from_checkpoint(const Checkpoint& ck);
};

/// Fresh parameters. Adapter output layers, AdaLN tables and the output head start at zero.
ParamSet<float> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// [T,h,w,C] -> [T*(h/p)*(w/p), p*p*C], patch-major within a token as (dy, dx, c).
template <typename Real>
Tensor<Real> patchify(const Tensor<Real>& x, int p);
template <typename Real>
Tensor<Real> unpatchify(const Tensor<Real>& tokens, const Shape& latent_shape, int p);
template <typename Real>
Var<Real> patchify(Var<Real> x, int p);
template <typename Real>
Var<Real> unpatchify(Var<Real> tokens, const Shape& latent_shape, int p);

/// Average-pools a Plücker grid [6,T,H,W] over cell x cell pixels into [T,6,H/cell,W/cell].
template <typename Real>
Tensor<Real> pool_pluecker(const PlueckerGrid& grid, int cell);

/// Plücker input at token resolution for a trajectory rendered at height x width.
template <typename Real>
Tensor<Real> camera_input(const ModelConfig& cfg, const Trajectory& traj, int height, int width);

template <typename Real>
struct Modulation {
  Var<Real> mu;     // [N, width]
  Var<Real> sigma;  // [N, width]
};

/// Camera adapter `index` (0 = before the first block, k + 1 = inside block k) applied to
/// pooled Plücker input [T,6,gh,gw]; returns per-token shift and scale.
template <typename Real>
Modulation<Real> camera_adapter(const Bound<Real>& params, const ModelConfig& cfg, int index, Var<Real> pluecker);

/// Channel concat [noised | ref | mask broadcast]; mask[0] must be 1.
template <typename Real>
Var<Real> assemble_condition(Var<Real> noised, Var<Real> ref, const Tensor<Real>& mask);
template <typename Real>
Tensor<Real> assemble_condition(const Tensor<Real>& noised, const Tensor<Real>& ref, const Tensor<Real>& mask);

/// Reference latent (zero outside referenced frames) and binary mask from encoded frames.
template <typename Real>
struct Conditioning {
  Tensor<Real> ref_latent;  // [T,h,w,Cl]
  Tensor<Real> mask;        // [T]
  Tensor<Real> pluecker;    // [T,6,gh,gw]
};

/// Builds ref_latent/mask from a full latent video by keeping `ref_frames` (must include 0).
template <typename Real>
Conditioning<Real> make_conditioning(const Tensor<Real>& latent, const std::vector<int>& ref_frames,
                                     Tensor<Real> pluecker);

struct ForwardOptions {
  bool swap_branches = false;  // sequence order [null | normal | rgb]
  bool drop_normal = false;    // run a dual-branch model without normal tokens
};

template <typename Real>
struct Velocity {
  Var<Real> rgb;
  std::optional<Var<Real>> normal;
};

/// v_hat for both branches at time t. x_normal is ignored (and may be empty) when the
/// model is RGB-only or options.drop_normal is set.
template <typename Real>
Velocity<Real> predict_velocity(const Bound<Real>& params, const ModelConfig& cfg, Var<Real> x_rgb,
                                std::optional<Var<Real>> x_normal, Real t, const Conditioning<Real>& cond,
                                ForwardOptions options = {});

struct VelocityTensors {
  Tensor<float> rgb;
  Tensor<float> normal;  // empty when no normal branch ran
};

/// Graph-free convenience wrapper over predict_velocity.
VelocityTensors predict_velocity(const ParamSet<float>& params, const ModelConfig& cfg, const Tensor<float>& x_rgb,
                                 const Tensor<float>* x_normal, float t, const Conditioning<float>& cond,
                                 ForwardOptions options = {});

}  // namespace orbitkit
