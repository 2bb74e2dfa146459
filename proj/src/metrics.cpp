#include "orbitkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "orbitkit/camera.hpp"
#include "orbitkit/io.hpp"

namespace orbitkit {

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(a.size()) / sq);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.shape() != b.shape()) throw ShapeError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.rank() != 3) throw ShapeError("ssim: expected [H,W,C], got " + shape_str(a.shape()));
  const int H = static_cast<int>(a.dim(0)), W = static_cast<int>(a.dim(1)), C = static_cast<int>(a.dim(2));
  if (H < kWin || W < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");

  double g1[kWin], gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g1[i] = std::exp(-x * x / (2 * kSigma * kSigma));
    gsum += g1[i];
  }
  double w[kWin][kWin], wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) wsum += (w[i][j] = g1[i] * g1[j] / (gsum * gsum));

  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    double chan = 0.0;
    for (int y = 0; y + kWin <= H; ++y)
      for (int x = 0; x + kWin <= W; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const std::size_t k = static_cast<std::size_t>(((y + i) * W + x + j) * C + c);
            const double va = a[k], vb = b[k], wij = w[i][j] / wsum;
            ma += wij * va;
            mb += wij * vb;
            saa += wij * va * va;
            sbb += wij * vb * vb;
            sab += wij * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        chan += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
      }
    total += chan / ((H - kWin + 1) * (W - kWin + 1));
  }
  return total / C;
}

AngularStats normal_angular_stats(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& alpha) {
  if (pred.shape() != gt.shape() || pred.shape().empty() || pred.shape().back() != 3)
    throw ShapeError("normal_angular_stats: normal maps must match and end in 3 channels");
  if (static_cast<std::size_t>(shape_numel(alpha.shape())) * 3 != pred.size())
    throw ShapeError("normal_angular_stats: alpha does not match the normal maps");
  AngularStats s;
  double sum = 0.0;
  std::array<std::int64_t, 3> below{};
  for (std::size_t p = 0; p < alpha.size(); ++p) {
    if (!(alpha[p] > 0.5f)) continue;
    double a[3], b[3], na = 0, nb = 0, dot = 0;
    for (int k = 0; k < 3; ++k) {
      a[k] = 2.0 * pred[3 * p + static_cast<std::size_t>(k)] - 1.0;
      b[k] = 2.0 * gt[3 * p + static_cast<std::size_t>(k)] - 1.0;
      na += a[k] * a[k];
      nb += b[k] * b[k];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    for (int k = 0; k < 3; ++k) dot += (na > 0 ? a[k] / na : 0.0) * (nb > 0 ? b[k] / nb : 0.0);
    const double deg = std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    sum += deg;
    for (int t = 0; t < 3; ++t)
      if (deg < kAngleThresholds[static_cast<std::size_t>(t)]) ++below[static_cast<std::size_t>(t)];
    ++s.pixels;
  }
  if (s.pixels == 0) throw std::invalid_argument("normal_angular_stats: empty foreground");
  s.mean_deg = sum / static_cast<double>(s.pixels);
  for (int t = 0; t < 3; ++t)
    s.below[static_cast<std::size_t>(t)] =
        static_cast<double>(below[static_cast<std::size_t>(t)]) / static_cast<double>(s.pixels);
  return s;
}

Tensor<float> frame_of(const Tensor<float>& video, std::int64_t i) {
  Shape s(video.shape().begin() + 1, video.shape().end());
  const auto n = static_cast<std::size_t>(shape_numel(s));
  const float* src = video.data() + static_cast<std::size_t>(i) * n;
  return Tensor<float>(std::move(s), std::vector<float>(src, src + n));
}

EvalReport evaluate_videos(const Tensor<float>& rgb, const Tensor<float>& gt_rgb, const Tensor<float>* normal,
                           const Tensor<float>* gt_normal, const Tensor<float>* gt_alpha,
                           const std::vector<int>& skip) {
  if (rgb.shape() != gt_rgb.shape()) throw ShapeError("evaluate: generated and ground-truth videos differ in shape");
  EvalReport r;
  r.has_normal = normal && gt_normal && gt_alpha && !normal->empty();
  double sum_deg = 0;
  std::array<double, 3> below{};
  for (std::int64_t t = 0; t < rgb.dim(0); ++t) {
    if (std::find(skip.begin(), skip.end(), static_cast<int>(t)) != skip.end()) {
      ++r.excluded_frames;
      continue;
    }
    FrameMetrics fm;
    fm.frame = static_cast<int>(t);
    const auto a = frame_of(rgb, t), b = frame_of(gt_rgb, t);
    fm.psnr = psnr(a, b);
    fm.ssim = ssim(a, b);
    if (r.has_normal) {
      const auto alpha = frame_of(*gt_alpha, t);
      bool any = false;
      for (float v : alpha.values()) any = any || v > 0.5f;
      if (any) {
        fm.normal = normal_angular_stats(frame_of(*normal, t), frame_of(*gt_normal, t), alpha);
        fm.has_normal = true;
        sum_deg += fm.normal.mean_deg * static_cast<double>(fm.normal.pixels);
        for (int k = 0; k < 3; ++k)
          below[static_cast<std::size_t>(k)] += fm.normal.below[static_cast<std::size_t>(k)] * double(fm.normal.pixels);
        r.normal.pixels += fm.normal.pixels;
      }
    }
    r.mean_psnr += fm.psnr;
    r.mean_ssim += fm.ssim;
    r.frames.push_back(fm);
  }
  if (r.frames.empty()) throw std::invalid_argument("evaluate: no frames left to evaluate");
  r.mean_psnr /= static_cast<double>(r.frames.size());
  r.mean_ssim /= static_cast<double>(r.frames.size());
  if (r.normal.pixels > 0) {
    r.normal.mean_deg = sum_deg / static_cast<double>(r.normal.pixels);
    for (int k = 0; k < 3; ++k)
      r.normal.below[static_cast<std::size_t>(k)] = below[static_cast<std::size_t>(k)] / double(r.normal.pixels);
  } else {
    r.has_normal = false;
  }
  return r;
}

std::string EvalReport::csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "frame,psnr,ssim,normal_mean,frac_11_25,frac_22_5,frac_30\n";
  for (const auto& f : frames) {
    out << f.frame << ',' << f.psnr << ',' << f.ssim;
    if (f.has_normal)
      out << ',' << f.normal.mean_deg << ',' << f.normal.below[0] << ',' << f.normal.below[1] << ',' << f.normal.below[2];
    else
      out << ",,,,";
    out << '\n';
  }
  return out.str();
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json j{{"frames_evaluated", frames.size()},
                   {"frames_excluded", excluded_frames},
                   {"mean_psnr", std::isinf(mean_psnr) ? nlohmann::json("inf") : nlohmann::json(mean_psnr)},
                   {"mean_ssim", mean_ssim},
                   {"amplitude_deg", amplitude_deg},
                   {"reference_count", reference_count},
                   {"lpips", nullptr},
                   {"note", "LPIPS is not computed"}};
  if (has_normal)
    j["normal"] = {{"mean_deg", normal.mean_deg},
                   {"frac_11_25", normal.below[0]},
                   {"frac_22_5", normal.below[1]},
                   {"frac_30", normal.below[2]}};
  return j;
}

EvalReport evaluate_run(const std::filesystem::path& gen, const std::filesystem::path& gt, bool skip_reference_frames) {
  const auto gen_traj = trajectory_from_json(nlohmann::json::parse(read_file(gen / "trajectory.json")));
  const auto gt_traj = trajectory_from_json(nlohmann::json::parse(read_file(gt / "trajectory.json")));
  if (gen_traj.frame_count != gt_traj.frame_count)
    throw std::invalid_argument("evaluate: trajectories have different frame counts");
  for (int i = 0; i < gt_traj.frame_count; ++i) {
    const auto& p = gen_traj.poses[static_cast<std::size_t>(i)];
    const auto& q = gt_traj.poses[static_cast<std::size_t>(i)];
    if ((p.position - q.position).norm() > 1e-6 || (p.rotation - q.rotation).norm() > 1e-6)
      throw std::invalid_argument("evaluate: trajectory mismatch at frame " + std::to_string(i));
  }
  std::vector<int> refs{0};
  if (std::filesystem::exists(gen / "provenance.json")) {
    const auto prov = nlohmann::json::parse(read_file(gen / "provenance.json"));
    if (prov.contains("reference_frames")) refs = prov["reference_frames"].get<std::vector<int>>();
  }
  const auto rgb = read_onv(gen / "rgb.onv");
  const auto gt_rgb = read_onv(gt / "rgb.onv");
  Tensor<float> normal, gt_normal, gt_alpha;
  const bool normals = std::filesystem::exists(gen / "normal.onv") && std::filesystem::exists(gt / "normal.onv") &&
                       std::filesystem::exists(gt / "alpha.onv");
  if (normals) {
    normal = read_onv(gen / "normal.onv");
    gt_normal = read_onv(gt / "normal.onv");
    gt_alpha = read_onv(gt / "alpha.onv");
  }
  auto r = evaluate_videos(rgb, gt_rgb, normals ? &normal : nullptr, normals ? &gt_normal : nullptr,
                           normals ? &gt_alpha : nullptr, skip_reference_frames ? refs : std::vector<int>{});
  r.amplitude_deg = gt_traj.amplitude_deg;
  r.reference_count = static_cast<int>(refs.size());
  return r;
}

}  // namespace orbitkit
