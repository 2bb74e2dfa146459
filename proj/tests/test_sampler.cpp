#include <cmath>

#include "doctest.h"
#include "orbitkit/metrics.hpp"
#include "orbitkit/rng.hpp"
#include "orbitkit/sampler.hpp"

using namespace orbitkit;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.depth = 1;
  c.width = 16;
  c.heads = 2;
  c.patch = 1;
  c.frames = 3;
  c.latent_h = 2;
  c.latent_w = 2;
  c.latent_channels = 12;
  c.adapter_hidden = 4;
  c.pixel_cell = 2;
  return c;
}

SampleConfig tiny_sample(int steps) {
  SampleConfig s;
  s.steps = steps;
  s.seed = 4;
  s.height = s.width = 4;
  s.trajectory = orbital_trajectory(3, 20.0, 1.0, 4.0, 0.0, Eigen::Vector3d::Zero(), Intrinsics::for_image(4, 4));
  Rng rng(3);
  s.references = {{0, rng.uniform_tensor<float>({4, 4, 3}, 0, 1)}};
  return s;
}

ParamSet<float> random_params(const ModelConfig& c) {
  auto p = init_params(c, 1);
  Rng rng(2);
  for (auto& e : p.entries())
    for (auto& v : e.value.values()) v = static_cast<float>(0.2 * rng.normal());
  return p;
}

double mean_abs(const Tensor<float>& a, const Tensor<float>& b) { return mean_abs_diff(a, b); }

}  // namespace

TEST_CASE("Euler on the contracting oracle field converges to the closed-form solution") {
  const auto codec = CodecConfig::identity(4);
  Rng rng(10);
  const Shape ls{4, 4, 4, 48};
  const auto target = rng.uniform_tensor<float>(ls, 0, 1);  // decodes to a valid image
  const auto x0 = rng.normal_tensor<float>(ls);
  const LatentField field = [&](const Tensor<float>& x, float) {
    Tensor<float> v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = target[i] - x[i];
    return v;
  };
  // dx/dt = x1* - x  =>  x(1) = x1* + (x0 - x1*) / e.
  Tensor<float> exact(ls);
  for (std::size_t i = 0; i < exact.size(); ++i)
    exact[i] = static_cast<float>(target[i] + (double(x0[i]) - target[i]) * std::exp(-1.0));
  const auto ref = decode_clamped(exact, codec);
  std::vector<double> err;
  for (int n : {8, 16, 32, 64}) err.push_back(mean_abs(decode_clamped(euler_integrate(field, x0, n), codec), ref));
  MESSAGE("oracle errors N=8,16,32,64: " << err[0] << " " << err[1] << " " << err[2] << " " << err[3]);
  CHECK(err[3] < err[0]);
  CHECK(err[3] < 0.02);
  for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] < err[i - 1]);

  // The field (x1* - x) / (1 - t) transports any x0 to x1* in finitely many Euler steps.
  const LatentField point_mass = [&](const Tensor<float>& x, float t) {
    Tensor<float> v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (target[i] - x[i]) / (1.0f - t);
    return v;
  };
  for (int n : {1, 8, 64}) CHECK(max_abs_diff(euler_integrate(point_mass, x0, n), target) < 1e-4f);
}

TEST_CASE("single Euler step") {
  const auto model = tiny_model();
  const auto codec = CodecConfig::identity(2);
  const auto params = random_params(model);
  const auto cfg = tiny_sample(1);
  const auto out = euler_sample(params, model, codec, cfg);

  const Shape ls{3, 2, 2, 12};
  Rng rr(cfg.seed, "sample.noise.rgb"), rn(cfg.seed, "sample.noise.normal");
  Tensor<float> xr(ls), xn(ls);
  for (auto& v : xr.values()) v = static_cast<float>(rr.normal());
  for (auto& v : xn.values()) v = static_cast<float>(rn.normal());
  Tensor<float> refs({3, 4, 4, 3});
  std::copy(cfg.references[0].second.values().begin(), cfg.references[0].second.values().end(), refs.data());
  const auto cond = make_conditioning(encode(refs, codec), {0}, camera_input<float>(model, cfg.trajectory, 4, 4));
  const auto v = predict_velocity(params, model, xr, &xn, 0.0f, cond);
  Tensor<float> yr(ls), yn(ls);
  for (std::size_t i = 0; i < yr.size(); ++i) {
    yr[i] = xr[i] + v.rgb[i];
    yn[i] = xn[i] + v.normal[i];
  }
  CHECK(out.rgb == decode_clamped(yr, codec));
  CHECK(out.normal == decode_clamped(yn, codec));
}

TEST_CASE("sampling is deterministic and reference replacement is exact") {
  const auto model = tiny_model();
  const auto codec = CodecConfig::identity(2);
  const auto params = random_params(model);
  auto cfg = tiny_sample(4);
  auto a = euler_sample(params, model, codec, cfg);
  const auto b = euler_sample(params, model, codec, cfg);
  CHECK(a.rgb == b.rgb);
  CHECK(a.normal == b.normal);
  CHECK(a.clamp_fraction >= 0.0);
  CHECK(a.clamp_fraction <= 1.0);
  for (float v : a.rgb.values()) CHECK((v >= 0.0f && v <= 1.0f));

  const auto before = a.rgb;
  replace_reference_frames(a, cfg);
  CHECK(frame_of(a.rgb, 0) == cfg.references[0].second);
  CHECK(std::isinf(psnr(frame_of(a.rgb, 0), cfg.references[0].second)));
  for (int f = 1; f < 3; ++f) CHECK(frame_of(a.rgb, f) == frame_of(before, f));

  cfg.seed = 5;
  CHECK(!(euler_sample(params, model, codec, cfg).rgb == b.rgb));
}

TEST_CASE("sample config validation") {
  const auto model = tiny_model();
  const auto codec = CodecConfig::identity(2);
  const auto params = random_params(model);
  auto cfg = tiny_sample(2);
  cfg.references[0].first = 1;
  CHECK_THROWS(euler_sample(params, model, codec, cfg));
  cfg = tiny_sample(2);
  cfg.references.push_back({2, Tensor<float>({4, 5, 3})});
  CHECK_THROWS_AS(euler_sample(params, model, codec, cfg), ShapeError);
  cfg = tiny_sample(0);
  CHECK_THROWS(euler_sample(params, model, codec, cfg));

  const LatentField blowup = [](const Tensor<float>& x, float) { return Tensor<float>(x.shape(), 1e38f); };
  CHECK_THROWS_AS(euler_integrate(blowup, Tensor<float>({2}, 3e38f), 4), NumericalError);
}
