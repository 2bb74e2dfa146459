#include "orbitkit/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "orbitkit/rng.hpp"

namespace orbitkit {

void SampleConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
  if (references.empty() || references[0].first != 0)
    throw std::invalid_argument("sample: frame 0 must be a reference frame");
  int prev = -1;
  for (const auto& [frame, image] : references) {
    if (frame <= prev || frame >= trajectory.frame_count)
      throw std::invalid_argument("sample: reference frames must be increasing and inside the trajectory");
    prev = frame;
    if (image.shape() != Shape{height, width, 3})
      throw ShapeError("sample: reference image " + shape_str(image.shape()) + " does not match " +
                       std::to_string(height) + "x" + std::to_string(width));
  }
}

Tensor<float> euler_integrate(const LatentField& field, Tensor<float> x, int steps) {
  if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
  const float h = 1.0f / static_cast<float>(steps);
  for (int k = 0; k < steps; ++k) {
    const float t = static_cast<float>(k) / static_cast<float>(steps);
    const auto v = field(x, t);
    if (v.shape() != x.shape()) throw ShapeError("euler_integrate: field changed the state shape");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h * v[i];
    if (!x.all_finite()) throw NumericalError("euler_integrate: non-finite state at step " + std::to_string(k));
  }
  return x;
}

Tensor<float> decode_clamped(const Tensor<float>& latent, const CodecConfig& codec, std::size_t* clamped) {
  auto out = decode(latent, codec);
  // Overshoot below half an 8-bit level is not counted: a white background sits exactly on 1.
  constexpr float slack = 0.5f / 255.0f;
  std::size_t n = 0;
  for (auto& v : out.values()) {
    if (v < -slack || v > 1.0f + slack) ++n;
    v = std::clamp(v, 0.0f, 1.0f);
  }
  if (clamped) *clamped += n;
  return out;
}

SampleResult euler_sample(const ParamSet<float>& params, const ModelConfig& model, const CodecConfig& codec,
                          const SampleConfig& cfg, ForwardOptions options) {
  cfg.validate();
  const int T = cfg.trajectory.frame_count;
  Tensor<float> ref_video({T, cfg.height, cfg.width, 3});
  const auto frame = static_cast<std::size_t>(cfg.height * cfg.width * 3);
  std::vector<int> ref_frames;
  for (const auto& [f, image] : cfg.references) {
    std::copy_n(image.data(), frame, ref_video.data() + static_cast<std::size_t>(f) * frame);
    ref_frames.push_back(f);
  }
  const auto cond = make_conditioning(encode(ref_video, codec), ref_frames,
                                      camera_input<float>(model, cfg.trajectory, cfg.height, cfg.width));
  const Shape ls = codec.latent_shape(ref_video.shape());
  const bool dual = model.dual_branch && !options.drop_normal;

  // Both branches integrate as one state stacked along the frame axis.
  Shape joint = ls;
  if (dual) joint[0] *= 2;
  Tensor<float> x0(joint);
  Rng rng_rgb(cfg.seed, "sample.noise.rgb"), rng_nrm(cfg.seed, "sample.noise.normal");
  const std::size_t half = static_cast<std::size_t>(shape_numel(ls));
  for (std::size_t i = 0; i < half; ++i) x0[i] = static_cast<float>(rng_rgb.normal());
  if (dual)
    for (std::size_t i = 0; i < half; ++i) x0[half + i] = static_cast<float>(rng_nrm.normal());

  auto split = [&](const Tensor<float>& x, std::size_t offset) {
    return Tensor<float>(ls, std::vector<float>(x.data() + offset, x.data() + offset + half));
  };
  const LatentField field = [&](const Tensor<float>& x, float t) {
    const auto xr = split(x, 0);
    Tensor<float> xn;
    if (dual) xn = split(x, half);
    const auto v = predict_velocity(params, model, xr, dual ? &xn : nullptr, t, cond, options);
    Tensor<float> out(joint);
    std::copy(v.rgb.values().begin(), v.rgb.values().end(), out.data());
    if (dual) std::copy(v.normal.values().begin(), v.normal.values().end(), out.data() + half);
    return out;
  };
  const auto x1 = euler_integrate(field, std::move(x0), cfg.steps);

  SampleResult result;
  std::size_t clamped = 0;
  result.rgb = decode_clamped(split(x1, 0), codec, &clamped);
  std::size_t total = result.rgb.size();
  if (dual) {
    result.normal = decode_clamped(split(x1, half), codec, &clamped);
    total += result.normal.size();
  }
  result.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(total);
  return result;
}

void replace_reference_frames(SampleResult& result, const SampleConfig& cfg) {
  const auto frame = static_cast<std::size_t>(cfg.height * cfg.width * 3);
  for (const auto& [f, image] : cfg.references) {
    if (image.size() != frame || static_cast<std::int64_t>(f) >= result.rgb.dim(0))
      throw ShapeError("replace_reference_frames: reference does not fit the output");
    std::copy_n(image.data(), frame, result.rgb.data() + static_cast<std::size_t>(f) * frame);
  }
}

}  // namespace orbitkit
