#include "orbitkit/selftest.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include "orbitkit/flow.hpp"
#include "orbitkit/gradcheck.hpp"
#include "orbitkit/io.hpp"
#include "orbitkit/metrics.hpp"
#include "orbitkit/render.hpp"
#include "orbitkit/rng.hpp"
#include "orbitkit/sampler.hpp"

namespace orbitkit {
namespace {

using V64 = Var<double>;
using T64 = Tensor<double>;
using Op = std::function<V64(std::span<const V64>)>;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

double projected_check(const Op& op, const std::vector<T64>& inputs) {
  return grad_check(
             [&](Tape<double>& t, std::span<const V64> x) {
               auto out = op(x);
               Rng rng(7, "projection");
               return ad::sum(ad::mul(out, t.constant(rng.normal_tensor<double>(out.shape()))));
             },
             inputs)
      .max_rel_err;
}

SelfTestResult primitive_gradients() {
  Rng rng(11);
  double worst = 0;
  for (const Shape& s : std::vector<Shape>{{1, 1}, {2, 3}, {3, 5}, {4, 4}, {6, 2}}) {
    const auto a = rng.normal_tensor<double>(s), b = rng.normal_tensor<double>(s), c = rng.normal_tensor<double>(s);
    const auto r1 = rng.normal_tensor<double>({s[1]}), r2 = rng.normal_tensor<double>({s[1]});
    const auto w = rng.normal_tensor<double>({s[1], 3}), bias = rng.normal_tensor<double>({3});
    const std::vector<std::pair<Op, std::vector<T64>>> cases = {
        {[](auto x) { return ad::mul(x[0], x[1]); }, {a, b}},
        {[](auto x) { return ad::silu(x[0]); }, {a}},
        {[](auto x) { return ad::modulate_rows(x[0], x[1], x[2]); }, {a, r1, r2}},
        {[](auto x) { return ad::adaln_modulate(x[0], x[1], x[2]); }, {a, b, c}},
        {[](auto x) { return ad::mse(x[0], x[1]); }, {a, b}},
        {[](auto x) { return ad::layer_norm(x[0], x[1], x[2]); }, {a, r1, r2}},
        {[](auto x) { return ad::permute(x[0], {1, 0}); }, {a}},
        {[](auto x) { return ad::concat<double>({x[0], x[1]}, 1); }, {a, b}},
        {[](auto x) { return ad::linear(x[0], x[1], x[2]); }, {a, w, bias}},
    };
    for (const auto& [op, in] : cases) worst = std::max(worst, projected_check(op, in));
  }
  const Shape qs{1, 2, 4, 8};
  worst = std::max(worst, projected_check([](auto x) { return ad::attention(x[0], x[1], x[2]); },
                                          {rng.normal_tensor<double>(qs), rng.normal_tensor<double>(qs),
                                           rng.normal_tensor<double>(qs)}));
  worst = std::max(worst, projected_check([](auto x) { return ad::conv2d<double>(x[0], x[1], x[2], 2, 1); },
                                          {rng.normal_tensor<double>({2, 3, 6, 5}), rng.normal_tensor<double>({4, 3, 3, 3}),
                                           rng.normal_tensor<double>({4})}));
  worst = std::max(worst, projected_check([](auto x) { return ad::conv_transpose2d<double>(x[0], x[1], x[2], 2, 1); },
                                          {rng.normal_tensor<double>({2, 3, 3, 4}), rng.normal_tensor<double>({3, 2, 4, 4}),
                                           rng.normal_tensor<double>({2})}));
  return {"primitive gradients", worst < 1e-4, "max rel err " + fmt(worst)};
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.depth = 1;
  c.width = 8;
  c.heads = 2;
  c.patch = 1;
  c.frames = 2;
  c.latent_h = 2;
  c.latent_w = 2;
  c.latent_channels = 3;
  c.adapter_hidden = 3;
  c.pixel_cell = 1;
  return c;
}

SelfTestResult model_gradient() {
  const auto c = tiny_model();
  auto p = init_params(c, 2).cast<double>();
  Rng rng(21);
  for (auto& e : p.entries())
    for (auto& v : e.value.values()) v = 0.3 * rng.normal();
  const auto traj = orbital_trajectory(2, 30, 2, 4, 0.2, Eigen::Vector3d::Zero(), Intrinsics::for_image(2, 2));
  const Shape ls{2, 2, 2, 3};
  const auto x1r = rng.normal_tensor<double>(ls), x1n = rng.normal_tensor<double>(ls);
  const auto x0r = rng.normal_tensor<double>(ls), x0n = rng.normal_tensor<double>(ls);
  const double t = 0.4;
  const auto cond = make_conditioning(x1r, {0}, camera_input<double>(c, traj, 2, 2));
  std::vector<T64> inputs;
  for (const auto& e : p.entries()) inputs.push_back(e.value);
  const auto res = grad_check(
      [&](Tape<double>& tape, std::span<const V64> x) {
        Bound<double> b(p, std::vector<V64>(x.begin(), x.end()));
        const auto v = predict_velocity(b, c, tape.constant(interpolate(x1r, x0r, t)),
                                        std::optional<V64>(tape.constant(interpolate(x1n, x0n, t))), t, cond);
        return ad::add(latent_loss(v.rgb, tape.constant(velocity_target(x1r, x0r))),
                       latent_loss(*v.normal, tape.constant(velocity_target(x1n, x0n))));
      },
      inputs, 1e-2, 4);
  return {"tiny model gradient", res.max_rel_err < 1e-4,
          "max rel err " + fmt(res.max_rel_err) + " over " + std::to_string(res.checked) + " params"};
}

SelfTestResult zero_init_neutrality() {
  ModelConfig c = tiny_model();
  c.latent_h = c.latent_w = 4;
  c.pixel_cell = 2;
  c.frames = 3;
  const auto p = init_params(c, 4);
  Rng rng(6);
  const Shape ls{3, 4, 4, 3};
  const auto xr = rng.normal_tensor<float>(ls), xn = rng.normal_tensor<float>(ls), lat = rng.normal_tensor<float>(ls);
  auto run = [&](double a0, double amp) {
    const auto traj = orbital_trajectory(3, amp, 2, 4, a0, Eigen::Vector3d::Zero(), Intrinsics::for_image(8, 8));
    return predict_velocity(p, c, xr, &xn, 0.37f, make_conditioning(lat, {0}, camera_input<float>(c, traj, 8, 8)));
  };
  const auto a = run(0.0, 30), b = run(2.0, 55);
  return {"zero-init neutrality", a.rgb == b.rgb && a.normal == b.normal, "bitwise comparison of both branches"};
}

SelfTestResult flow_identities() {
  const auto codec = CodecConfig::identity(2);
  Rng rng(3);
  const Shape ls{2, 3, 2, 12};
  bool ok = true;
  double worst = 0;
  Tape<double> tape;
  for (int draw = 0; draw < 100; ++draw) {
    const auto x1 = rng.normal_tensor<double>(ls), x0 = rng.normal_tensor<double>(ls);
    ok = ok && interpolate(x1, x0, 1.0) == x1 && interpolate(x1, x0, 0.0) == x0;
    const auto vh = tape.constant(rng.normal_tensor<double>(ls));
    const auto v = tape.constant(velocity_target(x1, x0));
    const double t = rng.uniform();
    const double pix = pixel_loss(tape.constant(x1), tape.constant(x0), t, vh, codec).value().item();
    const double lat = latent_loss(vh, v).value().item();
    worst = std::max(worst, std::abs(pix - t * t * lat) / (t * t * lat));
    ok = ok && latent_loss(v, v).value().item() == 0.0;
  }
  return {"flow identities", ok && worst < 1e-10, "pixel vs t^2 latent rel err " + fmt(worst)};
}

SelfTestResult metric_oracles() {
  const Tensor<float> a({16, 16, 3}, 0.5f);
  bool ok = std::isinf(psnr(a, a)) && std::abs(psnr(a, Tensor<float>({16, 16, 3}, 0.6f)) - 20.0) < 1e-4;
  Rng rng(12);
  const auto x = rng.uniform_tensor<float>({16, 16, 3}, 0, 1), y = rng.uniform_tensor<float>({16, 16, 3}, 0, 1);
  ok = ok && psnr(x, y) == psnr(y, x) && std::abs(ssim(x, x) - 1.0) < 1e-9 && std::abs(ssim(x, y)) <= 1.0;
  Tensor<float> up({4, 1, 3}, 0.5f), side({4, 1, 3}, 0.5f);
  for (int i = 0; i < 4; ++i) {
    up[static_cast<std::size_t>(3 * i + 2)] = 1.0f;
    side[static_cast<std::size_t>(3 * i)] = 1.0f;
  }
  const auto st = normal_angular_stats(side, up, Tensor<float>({4, 1}, 1.0f));
  ok = ok && std::abs(st.mean_deg - 90.0) < 1e-6 && st.below[2] == 0.0;
  return {"metric closed forms", ok, "psnr 20 dB step, ssim identity, 90 degree normals"};
}

SelfTestResult renderer_oracles() {
  Scene scene;
  Primitive prim;
  prim.half_extents = Eigen::Vector3d::Ones();
  scene.primitives.push_back(prim);
  const auto pose = pose_from_spherical(0.7, 0.3, 4, Eigen::Vector3d::Zero(), Intrinsics::for_image(32, 32));
  const auto f = render_frame(scene, pose, 32, 32);
  double worst = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      const std::size_t px = static_cast<std::size_t>(r * 32 + c);
      if (f.alpha[px] == 0.0f) continue;
      const Eigen::Vector3d d = pose.ray_direction(c + 0.5, r + 0.5);
      const double b = pose.position.dot(d);
      const Eigen::Vector3d hit = pose.position + (-b - std::sqrt(b * b - pose.position.squaredNorm() + 1)) * d;
      const Eigen::Vector3d n = pose.rotation.transpose() * decode_normal(f.normal[3 * px], f.normal[3 * px + 1], f.normal[3 * px + 2]);
      worst = std::max(worst, (n - hit).norm());
    }
  const auto traj = orbital_trajectory(5, 40, 3, 4, 0.2, Eigen::Vector3d::Zero(), Intrinsics::for_image(8, 8));
  const auto grid = pluecker_grid(traj, 8, 8);
  const std::size_t n = grid.data.size() / 6;
  double plk = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d d, m;
    for (int k = 0; k < 3; ++k) {
      d[k] = grid.data[static_cast<std::size_t>(k) * n + i];
      m[k] = grid.data[static_cast<std::size_t>(k + 3) * n + i];
    }
    plk = std::max({plk, std::abs(d.norm() - 1.0), std::abs(d.dot(m))});
  }
  return {"renderer and pluecker oracles", worst < 1e-6 && plk < 1e-9,
          "sphere normal err " + fmt(worst) + ", pluecker err " + fmt(plk)};
}

SelfTestResult sampler_oracle() {
  const auto codec = CodecConfig::identity(4);
  Rng rng(10);
  const Shape ls{2, 4, 4, 48};
  const auto target = rng.uniform_tensor<float>(ls, 0, 1), x0 = rng.normal_tensor<float>(ls);
  const LatentField field = [&](const Tensor<float>& x, float) {
    Tensor<float> v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = target[i] - x[i];
    return v;
  };
  Tensor<float> exact(ls);
  for (std::size_t i = 0; i < exact.size(); ++i)
    exact[i] = static_cast<float>(target[i] + (double(x0[i]) - target[i]) * std::exp(-1.0));
  const auto ref = decode_clamped(exact, codec);
  const double e8 = mean_abs_diff(decode_clamped(euler_integrate(field, x0, 8), codec), ref);
  const double e64 = mean_abs_diff(decode_clamped(euler_integrate(field, x0, 64), codec), ref);
  return {"sampler convergence", e64 < e8 && e64 < 0.02, "N=8 " + fmt(e8) + ", N=64 " + fmt(e64)};
}

SelfTestResult checkpoint_round_trip() {
  Rng rng(4);
  Checkpoint ck;
  ck.add("a", rng.normal_tensor<float>({3, 4}));
  ck.add("b", rng.normal_tensor<float>({5}));
  const auto bytes = ck.serialize();
  bool ok = Checkpoint::deserialize(bytes).serialize() == bytes;
  int missed = 0;
  for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
    try {
      Checkpoint::deserialize(bad);
      ++missed;
    } catch (const FormatError&) {
    }
  }
  return {"checkpoint round trip", ok && missed == 0, std::to_string(bytes.size()) + " single-bit flips detected"};
}

}  // namespace

std::vector<SelfTestResult> run_selftest(const std::function<void(const SelfTestResult&)>& on_result) {
  const std::vector<std::pair<std::string, std::function<SelfTestResult()>>> checks = {
      {"primitive gradients", primitive_gradients},     {"tiny model gradient", model_gradient},
      {"zero-init neutrality", zero_init_neutrality},   {"flow identities", flow_identities},
      {"metric closed forms", metric_oracles},          {"renderer and pluecker oracles", renderer_oracles},
      {"sampler convergence", sampler_oracle},          {"checkpoint round trip", checkpoint_round_trip},
  };
  std::vector<SelfTestResult> out;
  for (const auto& [name, fn] : checks) {
    SelfTestResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {name, false, std::string("threw: ") + e.what()};
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace orbitkit
