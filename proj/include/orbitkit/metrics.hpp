#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <vector>

#include "json.hpp"
#include "orbitkit/tensor.hpp"

namespace orbitkit {

/// 10*log10(1/MSE) for images in [0,1]; +infinity when the images are identical.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// Windowed SSIM (11x11 Gaussian, sigma 1.5, K1 0.01, K2 0.03, range 1) over valid windows,
/// per channel, averaged. Images are [H,W,C].
double ssim(const Tensor<float>& a, const Tensor<float>& b);

inline constexpr std::array<double, 3> kAngleThresholds{11.25, 22.5, 30.0};

struct AngularStats {
  double mean_deg = 0.0;
  std::array<double, 3> below{};  // fractions under kAngleThresholds
  std::int64_t pixels = 0;
};

/// Angular error between (n+1)/2-encoded normal maps [...,3] over pixels with alpha > 0.5.
AngularStats normal_angular_stats(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& alpha);

struct FrameMetrics {
  int frame = 0;
  double psnr = 0, ssim = 0;
  AngularStats normal;
  bool has_normal = false;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;  // evaluated frames only
  double mean_psnr = 0, mean_ssim = 0;
  AngularStats normal;  // pooled over evaluated frames
  bool has_normal = false;
  double amplitude_deg = 0;
  int reference_count = 0;
  int excluded_frames = 0;

  std::string csv() const;
  nlohmann::json summary() const;
};

/// Per-frame metrics for videos [T,H,W,3]; frames listed in `skip` are left out.
EvalReport evaluate_videos(const Tensor<float>& rgb, const Tensor<float>& gt_rgb, const Tensor<float>* normal,
                           const Tensor<float>* gt_normal, const Tensor<float>* gt_alpha,
                           const std::vector<int>& skip = {});

/// Compares a sample output directory against a ground-truth scene directory.
EvalReport evaluate_run(const std::filesystem::path& generated, const std::filesystem::path& ground_truth,
                        bool skip_reference_frames = true);

/// Frame i of a [T,...] tensor.
Tensor<float> frame_of(const Tensor<float>& video, std::int64_t i);

}  // namespace orbitkit
