#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "orbitkit/codec.hpp"
#include "orbitkit/model.hpp"

namespace orbitkit {

struct SampleConfig {
  int steps = 32;
  std::uint64_t seed = 0;
  Trajectory trajectory;
  std::vector<std::pair<int, Tensor<float>>> references;  // (frame, image [H,W,3]); frame 0 required
  int height = 32;
  int width = 32;
  double guidance = 1.0;  // accepted for config compatibility; sampling is unguided

  void validate() const;
};

struct SampleResult {
  Tensor<float> rgb;     // [T,H,W,3] clamped to [0,1]
  Tensor<float> normal;  // [T,H,W,3] or empty for RGB-only models
  double clamp_fraction = 0.0;
};

/// Latent velocity field v(x, t).
using LatentField = std::function<Tensor<float>(const Tensor<float>& x, float t)>;

/// Forward Euler from t=0 to 1 with `steps` uniform steps. Throws NumericalError naming the
/// step if the state stops being finite.
Tensor<float> euler_integrate(const LatentField& field, Tensor<float> x0, int steps);

/// Samples both branches jointly. Reference frames are encoded once for the condition channels.
SampleResult euler_sample(const ParamSet<float>& params, const ModelConfig& model, const CodecConfig& codec,
                          const SampleConfig& cfg, ForwardOptions options = {});

/// Decodes a latent and clamps it to [0,1]; adds the count of values more than half an 8-bit
/// level outside the range to *clamped.
Tensor<float> decode_clamped(const Tensor<float>& latent, const CodecConfig& codec, std::size_t* clamped = nullptr);

/// Copies each reference image over its frame of result.rgb.
void replace_reference_frames(SampleResult& result, const SampleConfig& cfg);

}  // namespace orbitkit
