#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "orbitkit/params.hpp"

namespace orbitkit {

enum class CodecKind { Identity, Learned };

/// Latent codec: video [T,H,W,3] <-> latent [T,H/s,W/s,Cl].
struct CodecConfig {
  CodecKind kind = CodecKind::Identity;
  int spatial_factor = 4;
  int latent_channels = 48;  // fixed to 3*s*s for the identity kind
  int hidden = 32;           // learned kind only
  ParamSet<float> params;    // learned kind only

  static CodecConfig identity(int s = 4);
  /// Learned codec with freshly initialized weights; s must be a power of two.
  static CodecConfig learned(int s, int latent_channels, int hidden, std::uint64_t seed);

  Shape latent_shape(const Shape& video_shape) const;
  Shape video_shape(const Shape& latent_shape) const;

  void to_checkpoint(Checkpoint& ck) const;
  static CodecConfig from_checkpoint(const Checkpoint& ck);
};

Tensor<float> encode(const Tensor<float>& video, const CodecConfig& cfg);
Tensor<float> decode(const Tensor<float>& latent, const CodecConfig& cfg);

/// Differentiable decode. Learned weights come from `bound` if given, otherwise they are
/// placed on the tape as constants.
template <typename Real>
Var<Real> decode(Var<Real> latent, const CodecConfig& cfg, const Bound<Real>* bound = nullptr);
template <typename Real>
Var<Real> encode(Var<Real> video, const CodecConfig& cfg, const Bound<Real>* bound = nullptr);

/// Total decoder evaluations since the last reset (tensor and graph paths).
std::int64_t decode_call_count();
void reset_decode_call_count();

struct CodecTrainReport {
  std::vector<double> losses;
  double heldout_mse = 0.0;
};

/// Fits a learned codec to frames [N,H,W,3] by Adam on reconstruction MSE.
/// `heldout` frames are only evaluated. Throws NumericalError on divergence.
CodecTrainReport train_codec(CodecConfig& cfg, const Tensor<float>& frames, const Tensor<float>& heldout, int steps,
                             double lr, int batch, std::uint64_t seed);

}  // namespace orbitkit
