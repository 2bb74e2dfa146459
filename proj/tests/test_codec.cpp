#include <cmath>

#include "doctest.h"
#include "orbitkit/codec.hpp"
#include "orbitkit/gradcheck.hpp"
#include "orbitkit/render.hpp"
#include "orbitkit/rng.hpp"

using namespace orbitkit;

namespace {

Tensor<float> orbit_frames(std::uint64_t seed, int T, int size) {
  const auto traj = orbital_trajectory(T, 30.0, 2.0, 4.0, 0.1 * double(seed), Eigen::Vector3d::Zero(),
                                       Intrinsics::for_image(size, size));
  return render_orbit(procedural_scene(seed, 3), traj, size, size).rgb;
}

}  // namespace

TEST_CASE("identity codec is space-to-depth") {
  const auto c = CodecConfig::identity(2);
  CHECK(c.latent_channels == 12);
  Tensor<float> img({1, 2, 2, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  const auto z = encode(img, c);
  REQUIRE(z.shape() == Shape{1, 1, 1, 12});
  // One 2x2 block becomes one latent cell holding the same 12 values in (dy, dx, c) order.
  for (std::size_t i = 0; i < 12; ++i) CHECK(z[i] == static_cast<float>(i));

  Tensor<float> wide({1, 2, 4, 3});
  for (std::size_t i = 0; i < wide.size(); ++i) wide[i] = static_cast<float>(i);
  const auto zw = encode(wide, c);
  REQUIRE(zw.shape() == Shape{1, 1, 2, 12});
  // Second cell, dy=1, dx=0, c=2 comes from pixel (1, 2).
  CHECK(zw[12 + 6 + 2] == wide[(1 * 4 + 2) * 3 + 2]);
}

TEST_CASE("identity codec round trip and isometry") {
  Rng rng(11);
  const auto c = CodecConfig::identity(4);
  const auto v = rng.uniform_tensor<float>({3, 8, 12, 3}, 0, 1);
  const auto z = encode(v, c);
  CHECK(z.shape() == Shape{3, 2, 3, 48});
  CHECK(decode(z, c) == v);

  Tape<double> tape;
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = tape.constant(rng.normal_tensor<double>({2, 2, 3, 48}));
    const auto b = tape.constant(rng.normal_tensor<double>({2, 2, 3, 48}));
    const double latent = std::sqrt(ad::sum(ad::mul(ad::sub(a, b), ad::sub(a, b))).value().item());
    const auto da = decode(a, c), db = decode(b, c);
    const double pixel = std::sqrt(ad::sum(ad::mul(ad::sub(da, db), ad::sub(da, db))).value().item());
    CHECK(std::abs(pixel - latent) <= 1e-12 * latent);
  }
}

TEST_CASE("codec shape errors") {
  const auto c = CodecConfig::identity(4);
  CHECK_THROWS_AS(encode(Tensor<float>({1, 6, 8, 3}), c), ShapeError);
  CHECK_THROWS_AS(encode(Tensor<float>({1, 8, 8, 4}), c), ShapeError);
  CHECK_THROWS_AS(decode(Tensor<float>({1, 2, 2, 47}), c), ShapeError);
  const auto l = CodecConfig::learned(4, 8, 6, 1);
  CHECK(encode(Tensor<float>({2, 8, 16, 3}), l).shape() == Shape{2, 2, 4, 8});
  CHECK(decode(Tensor<float>({2, 2, 4, 8}), l).shape() == Shape{2, 8, 16, 3});
  CHECK_THROWS_AS(decode(Tensor<float>({2, 2, 4, 7}), l), ShapeError);
  CHECK_THROWS(CodecConfig::learned(3, 8, 6, 1));
}

TEST_CASE("learned decoder gradients match finite differences") {
  const auto c = CodecConfig::learned(4, 3, 4, 5);
  const auto p64 = c.params.cast<double>();
  Rng rng(2);
  std::vector<Tensor<double>> inputs{rng.normal_tensor<double>({1, 2, 2, 3})};
  for (const auto& e : p64.entries()) inputs.push_back(e.value);
  const auto proj = rng.normal_tensor<double>({1, 8, 8, 3});
  const auto res = grad_check(
      [&](Tape<double>& t, std::span<const Var<double>> x) {
        Bound<double> b(p64, std::vector<Var<double>>(x.begin() + 1, x.end()));
        return ad::sum(ad::mul(decode(x[0], c, &b), t.constant(proj)));
      },
      inputs);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.checked > 300);
}

TEST_CASE("decode counter") {
  reset_decode_call_count();
  const auto c = CodecConfig::identity(2);
  decode(Tensor<float>({1, 1, 1, 12}), c);
  Tape<float> t;
  decode(t.constant(Tensor<float>({1, 1, 1, 12})), c);
  encode(Tensor<float>({1, 2, 2, 3}), c);
  CHECK(decode_call_count() == 2);
}

TEST_CASE("learned codec training is deterministic, decreases loss and survives a checkpoint") {
  const auto frames = orbit_frames(3, 24, 16);
  const auto heldout = orbit_frames(4, 4, 16);
  auto a = CodecConfig::learned(4, 12, 16, 9);
  auto b = CodecConfig::learned(4, 12, 16, 9);
  const auto ra = train_codec(a, frames, heldout, 60, 3e-3, 4, 1);
  const auto rb = train_codec(b, frames, heldout, 60, 3e-3, 4, 1);
  CHECK(ra.losses == rb.losses);
  CHECK(a.params["dec.1.w"] == b.params["dec.1.w"]);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += ra.losses[static_cast<std::size_t>(i)];
    last += ra.losses[ra.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last < 0.5 * first);
  CHECK(std::isfinite(ra.heldout_mse));

  Checkpoint ck;
  a.to_checkpoint(ck);
  const auto back = CodecConfig::from_checkpoint(Checkpoint::deserialize(ck.serialize()));
  CHECK(back.kind == CodecKind::Learned);
  CHECK(decode(encode(heldout, back), back) == decode(encode(heldout, a), a));
}
