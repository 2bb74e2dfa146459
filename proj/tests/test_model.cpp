#include <cmath>
#include <set>

#include "doctest.h"
#include "orbitkit/flow.hpp"
#include "orbitkit/gradcheck.hpp"
#include "orbitkit/model.hpp"

using namespace orbitkit;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.patch = 2;
  c.frames = 3;
  c.latent_h = 4;
  c.latent_w = 4;
  c.latent_channels = 12;
  c.adapter_hidden = 6;
  c.pixel_cell = 2;
  return c;
}

Trajectory orbit(const ModelConfig& c, double a0, double amplitude) {
  const int size = c.latent_h * c.pixel_cell;
  return orbital_trajectory(c.frames, amplitude, 2.0, 4.0, a0, Eigen::Vector3d::Zero(), Intrinsics::for_image(size, size));
}

template <typename Real>
void randomize(ParamSet<Real>& p, std::uint64_t seed, bool keep_adapter_outputs) {
  Rng rng(seed);
  for (auto& e : p.entries()) {
    if (keep_adapter_outputs && e.name.find("adapters.") == 0 && e.name.find(".out.") != std::string::npos) continue;
    for (auto& v : e.value.values()) v = static_cast<Real>(0.3 * rng.normal());
  }
}

template <typename Real>
struct Inputs {
  Tensor<Real> xr, xn;
  Conditioning<Real> cond;
};

template <typename Real>
Inputs<Real> make_inputs(const ModelConfig& c, const Trajectory& traj, std::uint64_t seed) {
  Rng rng(seed);
  const Shape ls{c.frames, c.latent_h, c.latent_w, c.latent_channels};
  const int size = c.latent_h * c.pixel_cell;
  auto latent = rng.normal_tensor<Real>(ls);
  return {rng.normal_tensor<Real>(ls), rng.normal_tensor<Real>(ls),
          make_conditioning(latent, {0}, camera_input<Real>(c, traj, size, size))};
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> run(const ParamSet<Real>& p, const ModelConfig& c, const Inputs<Real>& in, Real t,
                                          ForwardOptions opt = {}) {
  Tape<Real> tape;
  Bound<Real> b(tape, p, false);
  auto v = predict_velocity(b, c, tape.constant(in.xr), std::optional<Var<Real>>(tape.constant(in.xn)), t, in.cond, opt);
  return {v.rgb.value(), v.normal ? v.normal->value() : Tensor<Real>()};
}

}  // namespace

TEST_CASE("patchify round trip and token layout") {
  Rng rng(1);
  const auto x = rng.normal_tensor<float>({3, 4, 6, 5});
  CHECK(patchify(x, 1).storage() == x.storage());
  CHECK(patchify(x, 1).shape() == Shape{72, 5});
  const auto tok = patchify(x, 2);
  CHECK(tok.shape() == Shape{3 * 2 * 3, 20});
  CHECK(unpatchify(tok, x.shape(), 2) == x);
  // Token (frame 1, row 1, col 2), entry (dy=1, dx=0, c=3) is pixel (3, 4).
  const std::size_t token = 1 * 6 + 1 * 3 + 2;
  CHECK(tok[token * 20 + (1 * 2 + 0) * 5 + 3] == x[((1 * 4 + 3) * 6 + 4) * 5 + 3]);
  CHECK_THROWS_AS(patchify(x, 4), ShapeError);

  Tape<double> t;
  const auto xd = rng.normal_tensor<double>({2, 4, 4, 3});
  CHECK(unpatchify(patchify(t.constant(xd), 2), xd.shape(), 2).value() == xd);
}

TEST_CASE("adaln_modulate identities") {
  Rng rng(5);
  Tape<double> t;
  const auto z = t.constant(rng.normal_tensor<double>({7, 9}));
  const auto zero = t.constant(Tensor<double>({7, 9}));
  CHECK(ad::adaln_modulate(z, zero, zero).value() == z.value());
  const auto mu = t.constant(rng.normal_tensor<double>({7, 9}));
  CHECK(ad::adaln_modulate(z, mu, t.constant(Tensor<double>({7, 9}, -1.0))).value() == mu.value());
  const auto sigma = t.constant(rng.normal_tensor<double>({7, 9}));
  const auto out = ad::adaln_modulate(z, mu, sigma).value();
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(std::abs(out[i] - ((1.0 + sigma.value()[i]) * z.value()[i] + mu.value()[i])) < 1e-12);
}

TEST_CASE("assemble_condition layout") {
  Rng rng(2);
  const auto latent = rng.normal_tensor<float>({4, 2, 2, 3});
  const auto noised = rng.normal_tensor<float>({4, 2, 2, 3});
  const auto cond = make_conditioning(latent, {0, 2}, Tensor<float>({4, 6, 1, 1}));
  CHECK(cond.mask == Tensor<float>({4}, std::vector<float>{1, 0, 1, 0}));
  const auto in = assemble_condition(noised, cond.ref_latent, cond.mask);
  REQUIRE(in.shape() == Shape{4, 2, 2, 7});
  for (int f = 0; f < 4; ++f)
    for (int cell = 0; cell < 4; ++cell) {
      const std::size_t base = static_cast<std::size_t>((f * 4 + cell) * 7);
      const std::size_t lat = static_cast<std::size_t>((f * 4 + cell) * 3);
      for (int c = 0; c < 3; ++c) {
        CHECK(in[base + static_cast<std::size_t>(c)] == noised[lat + static_cast<std::size_t>(c)]);
        const float ref = in[base + 3 + static_cast<std::size_t>(c)];
        CHECK(ref == (f % 2 == 0 ? latent[lat + static_cast<std::size_t>(c)] : 0.0f));
      }
      CHECK(in[base + 6] == (f % 2 == 0 ? 1.0f : 0.0f));
    }
  CHECK_THROWS(assemble_condition(noised, cond.ref_latent, Tensor<float>({4}, std::vector<float>{0, 1, 0, 0})));
  CHECK_THROWS(assemble_condition(noised, cond.ref_latent, Tensor<float>({4}, std::vector<float>{1, 0.5f, 0, 0})));
  CHECK_THROWS(make_conditioning(latent, {1}, Tensor<float>({4, 6, 1, 1})));
}

TEST_CASE("camera adapter is zero at initialization and deterministic") {
  const auto c = small_config();
  const auto p = init_params(c, 3);
  Tape<float> tape;
  Bound<float> b(tape, p, false);
  for (double a0 : {0.0, 1.3}) {
    const auto plk = tape.constant(camera_input<float>(c, orbit(c, a0, 40), 8, 8));
    for (int i = 0; i <= c.depth; ++i) {
      const auto m = camera_adapter(b, c, i, plk);
      CHECK(m.mu.shape() == Shape{c.frames * 4, c.width});
      for (float v : m.mu.value().values()) CHECK(v == 0.0f);
      for (float v : m.sigma.value().values()) CHECK(v == 0.0f);
    }
  }
  auto q = p;
  randomize(q, 8, false);
  Tape<float> t2;
  Bound<float> b2(t2, q, false);
  const auto plk = t2.constant(camera_input<float>(c, orbit(c, 0.4, 20), 8, 8));
  const auto m1 = camera_adapter(b2, c, 1, plk), m2 = camera_adapter(b2, c, 1, plk);
  CHECK(m1.mu.value() == m2.mu.value());
  double mag = 0;
  for (float v : m1.sigma.value().values()) mag += std::abs(v);
  CHECK(mag > 0);
  CHECK_THROWS_AS(camera_adapter(b2, c, 0, t2.constant(Tensor<float>({3, 6, 2, 3}))), ShapeError);
}

TEST_CASE("zero-init neutrality across trajectories") {
  const auto c = small_config();
  const auto tr_a = orbit(c, 0.0, 30), tr_b = orbit(c, 2.0, 55);
  for (bool random_backbone : {false, true}) {
    auto p = init_params(c, 4);
    if (random_backbone) randomize(p, 12, true);
    auto in_a = make_inputs<float>(c, tr_a, 6);
    auto in_b = in_a;
    in_b.cond.pluecker = camera_input<float>(c, tr_b, 8, 8);
    REQUIRE(!(in_a.cond.pluecker == in_b.cond.pluecker));
    const auto ya = run(p, c, in_a, 0.37f), yb = run(p, c, in_b, 0.37f);
    CHECK(ya.first == yb.first);
    CHECK(ya.second == yb.second);
    CHECK(ya.first.shape() == in_a.xr.shape());
    CHECK(ya.second.shape() == in_a.xn.shape());
  }
}

TEST_CASE("branches share one copy of every weight") {
  const auto c = small_config();
  const auto p = init_params(c, 1);
  const std::int64_t d = c.width, A = c.adapter_hidden, in = c.token_dim_in(), out = c.token_dim_out();
  const std::int64_t block = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d) +
                             (d * 6 * d + 6 * d);
  const std::int64_t adapter = (A * 6 * 9 + A) + A * 6 + (A * A * 9 + A) + (2 * d * A + 2 * d);
  const std::int64_t expected = (in * d + d) + 2 * d + d + 2 * (d * d + d) + c.depth * block + 2 * d +
                                (d * 2 * d + 2 * d) + (d * out + out) + (c.depth + 1) * adapter;
  CHECK(p.scalar_count() == expected);
  std::set<std::string> names;
  for (const auto& e : p.entries()) {
    CHECK(e.name.find("rgb") == std::string::npos);
    CHECK(e.name.find("normal") == std::string::npos);
    names.insert(e.name);
  }
  CHECK(names.size() == p.size());

  // A loss on the normal branch alone still trains the shared block weights.
  auto q = init_params(c, 1).cast<double>();
  randomize(q, 2, false);
  const auto inputs = make_inputs<double>(c, orbit(c, 0, 20), 3);
  Tape<double> tape;
  Bound<double> b(tape, q, true);
  const auto v = predict_velocity(b, c, tape.constant(inputs.xr), std::optional<Var<double>>(tape.constant(inputs.xn)),
                                  0.5, inputs.cond);
  tape.backward(ad::mean(ad::mul(*v.normal, *v.normal)));
  double g = 0;
  for (double x : tape.grad(b("blocks.0.mlp.0.w")).values()) g += std::abs(x);
  CHECK(g > 0);
  double ge = 0;
  for (double x : tape.grad(b("branch_embed")).values()) ge += std::abs(x);
  CHECK(ge > 0);
}

TEST_CASE("joint attention is symmetric in branch order") {
  const auto c = small_config();
  auto p = init_params(c, 5).cast<double>();
  randomize(p, 9, false);
  const auto in = make_inputs<double>(c, orbit(c, 0.3, 30), 4);
  const auto a = run(p, c, in, 0.6);
  const auto b = run(p, c, in, 0.6, ForwardOptions{true, false});
  CHECK(max_abs_diff(a.first, b.first) < 1e-12);
  CHECK(max_abs_diff(a.second, b.second) < 1e-12);

  const auto solo = run(p, c, in, 0.6, ForwardOptions{false, true});
  CHECK(solo.second.empty());
  CHECK(mean_abs_diff(solo.first, a.first) > 0.0);
}

TEST_CASE("predict_velocity contract") {
  const auto c = small_config();
  const auto p = init_params(c, 5);
  const auto in = make_inputs<float>(c, orbit(c, 0, 0), 1);
  CHECK_THROWS_AS(run(p, c, in, 1.5f), std::invalid_argument);
  CHECK_THROWS_AS(run(p, c, in, -0.1f), std::invalid_argument);
  // Zero head at init: x1_hat = 0, so v = -x_t / (1 - t).
  const auto y = run(p, c, in, 0.5f);
  for (std::size_t i = 0; i < y.first.size(); i += 97) CHECK(y.first[i] == doctest::Approx(-2.0f * in.xr[i]));

  auto rgb_only = c;
  rgb_only.dual_branch = false;
  const auto q = init_params(rgb_only, 5);
  const auto r = run(q, rgb_only, in, 0.5f);
  CHECK(r.second.empty());
  CHECK(r.first.shape() == in.xr.shape());

  Checkpoint ck;
  c.to_checkpoint(ck);
  const auto back = ModelConfig::from_checkpoint(ck);
  CHECK(back.width == c.width);
  CHECK(back.pixel_cell == c.pixel_cell);
  CHECK(back.dual_branch);
}

TEST_CASE("end-to-end gradient check on a tiny model") {
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
  auto p = init_params(c, 2).cast<double>();
  randomize(p, 21, false);
  const auto traj = orbit(c, 0.2, 30);
  Rng rng(8);
  const Shape ls{2, 2, 2, 3};
  const auto x1r = rng.normal_tensor<double>(ls), x1n = rng.normal_tensor<double>(ls);
  const auto x0r = rng.normal_tensor<double>(ls), x0n = rng.normal_tensor<double>(ls);
  const double t = 0.4;
  const auto cond = make_conditioning(x1r, {0}, camera_input<double>(c, traj, 2, 2));

  std::vector<Tensor<double>> inputs;
  for (const auto& e : p.entries()) inputs.push_back(e.value);
  const auto res = grad_check(
      [&](Tape<double>& tape, std::span<const Var<double>> x) {
        Bound<double> b(p, std::vector<Var<double>>(x.begin(), x.end()));
        const auto v = predict_velocity(b, c, tape.constant(interpolate(x1r, x0r, t)),
                                        std::optional<Var<double>>(tape.constant(interpolate(x1n, x0n, t))), t, cond);
        return ad::add(latent_loss(v.rgb, tape.constant(velocity_target(x1r, x0r))),
                       latent_loss(*v.normal, tape.constant(velocity_target(x1n, x0n))));
      },
      inputs, 1e-2, 4);
  MESSAGE("tiny model: max rel err " << res.max_rel_err << " over " << res.checked << " entries, worst "
                                     << p.entries()[res.worst_input].name << "[" << res.worst_index << "] ad "
                                     << res.worst_ad << " fd " << res.worst_fd);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.checked == static_cast<std::size_t>(p.scalar_count()));
}
