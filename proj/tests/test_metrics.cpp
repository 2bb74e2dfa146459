#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "orbitkit/camera.hpp"
#include "orbitkit/io.hpp"
#include "orbitkit/metrics.hpp"
#include "orbitkit/rng.hpp"

using namespace orbitkit;

namespace {

long double brute_psnr(const Tensor<float>& a, const Tensor<float>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
    s += d * d;
  }
  return -10.0L * std::log10(s / static_cast<long double>(a.size()));
}

// SSIM straight from the definition, one window at a time, with an unnormalized kernel
// divided out at the end.
double brute_ssim(const Tensor<float>& a, const Tensor<float>& b) {
  const int H = static_cast<int>(a.dim(0)), W = static_cast<int>(a.dim(1)), C = static_cast<int>(a.dim(2));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int c = 0; c < C; ++c) {
    double chan = 0;
    int windows = 0;
    for (int y0 = 0; y0 + 11 <= H; ++y0)
      for (int x0 = 0; x0 + 11 <= W; ++x0) {
        long double sw = 0, sa = 0, sb = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const long double w = std::exp(-(dy * dy + dx * dx) / 4.5L);
            const std::size_t k = static_cast<std::size_t>(((y0 + 5 + dy) * W + x0 + 5 + dx) * C + c);
            sw += w;
            sa += w * a[k];
            sb += w * b[k];
          }
        const long double ma = sa / sw, mb = sb / sw;
        long double va = 0, vb = 0, cov = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const long double w = std::exp(-(dy * dy + dx * dx) / 4.5L) / sw;
            const std::size_t k = static_cast<std::size_t>(((y0 + 5 + dy) * W + x0 + 5 + dx) * C + c);
            va += w * (a[k] - ma) * (a[k] - ma);
            vb += w * (b[k] - mb) * (b[k] - mb);
            cov += w * (a[k] - ma) * (b[k] - mb);
          }
        chan += static_cast<double>(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        ++windows;
      }
    total += chan / windows;
  }
  return total / C;
}

struct Angles {
  double mean;
  double below[3];
};

Angles brute_angles(const Tensor<float>& p, const Tensor<float>& g, const Tensor<float>& alpha) {
  double sum = 0;
  double n = 0, below[3] = {0, 0, 0};
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] < 0.5f) continue;
    Eigen::Vector3d a(2.0 * p[3 * i] - 1, 2.0 * p[3 * i + 1] - 1, 2.0 * p[3 * i + 2] - 1);
    Eigen::Vector3d b(2.0 * g[3 * i] - 1, 2.0 * g[3 * i + 1] - 1, 2.0 * g[3 * i + 2] - 1);
    const double deg = std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
    sum += deg;
    n += 1;
    below[0] += deg < 11.25;
    below[1] += deg < 22.5;
    below[2] += deg < 30.0;
  }
  return {sum / n, {below[0] / n, below[1] / n, below[2] / n}};
}

Tensor<float> encode_normals(const std::vector<Eigen::Vector3d>& n) {
  Tensor<float> t({static_cast<std::int64_t>(n.size()), 1, 3});
  for (std::size_t i = 0; i < n.size(); ++i)
    for (int k = 0; k < 3; ++k) t[3 * i + static_cast<std::size_t>(k)] = static_cast<float>((n[i][k] + 1) / 2);
  return t;
}

}  // namespace

TEST_CASE("psnr closed forms") {
  const Tensor<float> a({4, 4, 3}, 0.5f);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, Tensor<float>({4, 4, 3}, 0.6f)) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(Tensor<float>({2, 2, 3}, 0.25f), Tensor<float>({2, 2, 3}, 0.375f)) == doctest::Approx(10 * std::log10(64.0)));
  CHECK_THROWS_AS(psnr(a, Tensor<float>({4, 3, 3})), ShapeError);
}

TEST_CASE("metric oracles over ten random fixtures") {
  Rng rng(12);
  for (int fixture = 0; fixture < 10; ++fixture) {
    const int H = static_cast<int>(rng.integer(11, 24)), W = static_cast<int>(rng.integer(11, 24));
    const auto a = rng.uniform_tensor<float>({H, W, 3}, 0, 1);
    auto b = a;
    const double noise = rng.uniform(0.01, 0.4);
    for (auto& v : b.values()) v = std::clamp(v + static_cast<float>(noise * rng.normal()), 0.0f, 1.0f);

    CHECK(std::abs(psnr(a, b) - static_cast<double>(brute_psnr(a, b))) < 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));
    const double s = ssim(a, b);
    CHECK(std::abs(s - brute_ssim(a, b)) < 1e-6);
    CHECK(std::abs(s) <= 1.0);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);

    const auto gt = rng.uniform_tensor<float>({H, W, 3}, 0, 1);
    auto pred = gt;
    for (auto& v : pred.values()) v = std::clamp(v + static_cast<float>(noise * rng.normal()), 0.0f, 1.0f);
    auto alpha = rng.uniform_tensor<float>({H, W}, 0, 1);
    for (auto& v : alpha.values()) v = v < 0.3f ? 0.0f : 1.0f;
    const auto st = normal_angular_stats(pred, gt, alpha);
    const auto bf = brute_angles(pred, gt, alpha);
    CHECK(std::abs(st.mean_deg - bf.mean) < 1e-6);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(st.below[static_cast<std::size_t>(k)] - bf.below[k]) < 1e-6);
    CHECK(st.below[0] <= st.below[1]);
    CHECK(st.below[1] <= st.below[2]);
    CHECK(st.mean_deg >= 0.0);
    CHECK(st.mean_deg <= 180.0);
  }
}

TEST_CASE("ssim of a binary image against its inverse is negative") {
  Tensor<float> a({16, 16, 1});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) a[static_cast<std::size_t>(y * 16 + x)] = ((x + y) % 2) ? 1.0f : 0.0f;
  Tensor<float> b(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = 1.0f - a[i];

  // For b = 1 - a: mu_b = 1 - mu_a, var_b = var_a = m(1-m), cov = -var_a.
  const double c1 = 1e-4, c2 = 9e-4;
  double expected = 0;
  for (int y0 = 0; y0 + 11 <= 16; ++y0)
    for (int x0 = 0; x0 + 11 <= 16; ++x0) {
      double sw = 0, m = 0;
      for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) {
          const double w = std::exp(-(dy * dy + dx * dx) / 4.5);
          sw += w;
          m += w * a[static_cast<std::size_t>((y0 + 5 + dy) * 16 + x0 + 5 + dx)];
        }
      m /= sw;
      const double var = m * (1 - m);
      expected += ((2 * m * (1 - m) + c1) * (-2 * var + c2)) / ((m * m + (1 - m) * (1 - m) + c1) * (2 * var + c2));
    }
  expected /= 36.0;
  const double s = ssim(a, b);
  CHECK(s < -0.9);
  CHECK(s == doctest::Approx(expected).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Tensor<float>({10, 20, 3}), Tensor<float>({10, 20, 3})), ShapeError);
}

TEST_CASE("angular stats closed forms") {
  const std::vector<Eigen::Vector3d> z(6, Eigen::Vector3d(0, 0, 1)), x(6, Eigen::Vector3d(1, 0, 0));
  const Tensor<float> alpha({6, 1}, 1.0f);
  const auto same = normal_angular_stats(encode_normals(z), encode_normals(z), alpha);
  CHECK(same.mean_deg == doctest::Approx(0.0));
  for (double f : same.below) CHECK(f == 1.0);
  const auto ortho = normal_angular_stats(encode_normals(x), encode_normals(z), alpha);
  CHECK(ortho.mean_deg == doctest::Approx(90.0));
  for (double f : ortho.below) CHECK(f == 0.0);
  CHECK(kAngleThresholds == std::array<double, 3>{11.25, 22.5, 30.0});
  CHECK_THROWS(normal_angular_stats(encode_normals(z), encode_normals(z), Tensor<float>({6, 1})));
}

TEST_CASE("evaluate_run excludes reference frames and checks trajectories") {
  const auto root = std::filesystem::temp_directory_path() / "orbitkit_test_metrics";
  std::filesystem::remove_all(root);
  const auto gen = root / "gen", gt = root / "gt";
  std::filesystem::create_directories(gen);
  std::filesystem::create_directories(gt);
  Rng rng(3);
  const auto traj = orbital_trajectory(3, 30, 3, 4, 0, Eigen::Vector3d::Zero(), Intrinsics::for_image(12, 12));
  const auto truth = rng.uniform_tensor<float>({3, 12, 12, 3}, 0, 1);
  auto out = truth;
  for (std::size_t i = out.size() / 3; i < out.size(); ++i) out[i] = std::clamp(out[i] + 0.05f, 0.0f, 1.0f);
  write_onv(gt / "rgb.onv", truth);
  write_onv(gen / "rgb.onv", out);
  write_onv(gt / "normal.onv", truth);
  write_onv(gen / "normal.onv", truth);
  write_onv(gt / "alpha.onv", Tensor<float>({3, 12, 12}, 1.0f));
  write_file_atomic(gt / "trajectory.json", trajectory_to_json(traj).dump());
  write_file_atomic(gen / "trajectory.json", trajectory_to_json(traj).dump());
  write_file_atomic(gen / "provenance.json", R"({"reference_frames":[0]})");

  const auto r = evaluate_run(gen, gt);
  CHECK(r.frames.size() == 2);
  CHECK(r.excluded_frames == 1);
  CHECK(std::isfinite(r.mean_psnr));
  CHECK(r.has_normal);
  CHECK(r.normal.mean_deg < 1e-3);
  const auto all = evaluate_run(gen, gt, false);
  CHECK(all.frames.size() == 3);
  CHECK(std::isinf(all.frames[0].psnr));
  CHECK(r.csv().rfind("frame,psnr,ssim,normal_mean,frac_11_25,frac_22_5,frac_30\n", 0) == 0);
  CHECK(r.summary()["frames_evaluated"] == 2);

  const auto other = orbital_trajectory(3, 30, 3, 4, 0.5, Eigen::Vector3d::Zero(), Intrinsics::for_image(12, 12));
  write_file_atomic(gen / "trajectory.json", trajectory_to_json(other).dump());
  CHECK_THROWS(evaluate_run(gen, gt));
  std::filesystem::remove_all(root);
}
