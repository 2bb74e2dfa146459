#include "orbitkit/flow.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace orbitkit {

template <typename Real>
Tensor<Real> interpolate(const Tensor<Real>& x1, const Tensor<Real>& x0, Real t) {
  if (x1.shape() != x0.shape()) throw ShapeError("interpolate: shape mismatch");
  if (!(t >= Real(0) && t <= Real(1))) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  Tensor<Real> out(x1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * x1[i] + (Real(1) - t) * x0[i];
  return out;
}

template <typename Real>
Var<Real> interpolate(Var<Real> x1, Var<Real> x0, Real t) {
  if (!(t >= Real(0) && t <= Real(1))) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  return ad::add(ad::scale(x1, t), ad::scale(x0, Real(1) - t));
}

template <typename Real>
Tensor<Real> velocity_target(const Tensor<Real>& x1, const Tensor<Real>& x0) {
  if (x1.shape() != x0.shape()) throw ShapeError("velocity_target: shape mismatch");
  Tensor<Real> out(x1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x1[i] - x0[i];
  return out;
}

template <typename Real>
Var<Real> latent_loss(Var<Real> v_hat, Var<Real> v) {
  return ad::mse(v_hat, v);
}

template <typename Real>
Var<Real> pixel_loss(Var<Real> x1, Var<Real> x0, Real t, Var<Real> v_hat, const CodecConfig& codec) {
  const auto target = decode(interpolate(x1, x0, t), codec);
  const auto pred = decode(ad::add(x0, ad::scale(v_hat, t)), codec);
  return ad::mse(target, pred);
}

#define ORBITKIT_INSTANTIATE_FLOW(R)                                              \
  template Tensor<R> interpolate(const Tensor<R>&, const Tensor<R>&, R);          \
  template Var<R> interpolate(Var<R>, Var<R>, R);                                 \
  template Tensor<R> velocity_target(const Tensor<R>&, const Tensor<R>&);         \
  template Var<R> latent_loss(Var<R>, Var<R>);                                    \
  template Var<R> pixel_loss(Var<R>, Var<R>, R, Var<R>, const CodecConfig&);

ORBITKIT_INSTANTIATE_FLOW(float)
ORBITKIT_INSTANTIATE_FLOW(double)

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (steps < 0 || batch < 1) fail("steps must be >= 0 and batch >= 1");
  if (!(lr_pretrained >= 0) || !(lr_new >= 0)) fail("learning rates must be non-negative");
  if (!(pixel_loss_weight >= 0)) fail("pixel_loss_weight must be non-negative");
  if (checkpoint_every < 1) fail("checkpoint_every must be positive");
}

TrainingExample sample_training_example(const std::vector<Scene>& scenes, const OrbitSampling& s, Rng& rng) {
  if (scenes.empty()) throw std::invalid_argument("sample_training_example: empty dataset");
  const auto& scene = scenes[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(scenes.size()) - 1))];
  const double amplitude = rng.uniform(0.0, s.max_amplitude_deg);
  const double frequency = static_cast<double>(rng.integer(1, 3));
  const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto traj = orbital_trajectory(s.frames, amplitude, frequency, s.radius, a0, Eigen::Vector3d::Zero(),
                                       Intrinsics::for_image(s.height, s.width, 0.6, s.radius));
  auto video = render_orbit(scene, traj, s.height, s.width);
  return {std::move(video.rgb), std::move(video.normals), traj};
}

TrainState TrainState::fresh(const ModelConfig& model, const CodecConfig& codec, const TrainConfig& cfg) {
  TrainState s{model, codec, init_params(model, cfg.seed), {}, cfg.stage};
  s.opt = Adam(s.params, AdamConfig{cfg.lr_pretrained, cfg.lr_new});
  return s;
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint ck;
  model.to_checkpoint(ck);
  codec.to_checkpoint(ck);
  ck.add("train.stage", Tensor<float>({1}, static_cast<float>(stage)));
  params.to_checkpoint(ck, "param.");
  opt.to_checkpoint(ck, params);
  return ck;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg) {
  TrainState s;
  s.model = ModelConfig::from_checkpoint(ck);
  s.codec = CodecConfig::from_checkpoint(ck);
  s.stage = static_cast<int>(ck.at("train.stage")[0]);
  s.params = init_params(s.model, 0);
  s.params.from_checkpoint(ck, "param.");
  s.opt = Adam(s.params, AdamConfig{cfg.lr_pretrained, cfg.lr_new});
  if (ck.contains("opt.step")) s.opt.from_checkpoint(ck, s.params);
  return s;
}

LossReport train_step(TrainState& state, const std::vector<TrainingExample>& batch, const TrainConfig& cfg, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const bool dual = state.model.dual_branch;
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  std::vector<Tensor<float>> grads;
  for (const auto& e : state.params.entries()) grads.emplace_back(e.value.shape(), 0.0f);
  LossReport rep;
  const auto step = state.opt.steps();
  try {
    for (const auto& ex : batch) {
      const int H = static_cast<int>(ex.rgb.dim(1)), W = static_cast<int>(ex.rgb.dim(2));
      const auto x1r = encode(ex.rgb, state.codec);
      const auto cond = make_conditioning(x1r, {0}, camera_input<float>(state.model, ex.trajectory, H, W));
      const auto t = static_cast<float>(rng.uniform(0.0, 1.0));
      const auto x0r = rng.normal_tensor<float>(x1r.shape());
      Tensor<float> x1n, x0n;
      if (dual) {
        x1n = encode(ex.normal, state.codec);
        x0n = rng.normal_tensor<float>(x1n.shape());
      }

      Tape<float> tape;
      Bound<float> P(tape, state.params, true);
      std::optional<Var<float>> xtn;
      if (dual) xtn = tape.constant(interpolate(x1n, x0n, t));
      const auto v = predict_velocity(P, state.model, tape.constant(interpolate(x1r, x0r, t)), xtn, t, cond);
      const auto lr = latent_loss(v.rgb, tape.constant(velocity_target(x1r, x0r)));
      auto total = lr;
      rep.latent_rgb += lr.value().item() * inv_b;
      if (dual) {
        const auto ln = latent_loss(*v.normal, tape.constant(velocity_target(x1n, x0n)));
        total = ad::add(total, ln);
        rep.latent_normal += ln.value().item() * inv_b;
      }
      if (cfg.stage == 2) {
        const auto pr = pixel_loss(tape.constant(x1r), tape.constant(x0r), t, v.rgb, state.codec);
        auto pix = pr;
        rep.pixel_rgb += pr.value().item() * inv_b;
        if (dual) {
          const auto pn = pixel_loss(tape.constant(x1n), tape.constant(x0n), t, *v.normal, state.codec);
          pix = ad::add(pix, pn);
          rep.pixel_normal += pn.value().item() * inv_b;
        }
        total = ad::add(total, ad::scale(pix, static_cast<float>(cfg.pixel_loss_weight)));
      }
      total = ad::scale(total, inv_b);
      rep.total += total.value().item();
      tape.backward(total);
      for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto g = tape.grad(P.vars()[i]);
        auto dst = grads[i].values();
        auto src = g.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  } catch (const NumericalError& e) {
    throw NumericalError("step " + std::to_string(step) + ": " + e.what());
  }
  if (!std::isfinite(rep.total)) throw NumericalError("step " + std::to_string(step) + ": non-finite loss");
  rep.grad_norm = clip_grad_norm(grads, cfg.grad_clip);
  if (!std::isfinite(rep.grad_norm)) throw NumericalError("step " + std::to_string(step) + ": non-finite gradient");
  state.opt.step(state.params, grads);
  return rep;
}

namespace {

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"steps", c.steps},
          {"batch", c.batch},
          {"lr_pretrained", c.lr_pretrained},
          {"lr_new", c.lr_new},
          {"pixel_loss_weight", c.pixel_loss_weight},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"t_distribution", "uniform(0,1)"}};
}

nlohmann::json model_config_json(const ModelConfig& m) {
  return {{"depth", m.depth},       {"width", m.width},
          {"heads", m.heads},       {"patch", m.patch},
          {"frames", m.frames},     {"latent_h", m.latent_h},
          {"latent_w", m.latent_w}, {"latent_channels", m.latent_channels},
          {"adapter_hidden", m.adapter_hidden}, {"pixel_cell", m.pixel_cell},
          {"dual_branch", m.dual_branch},       {"min_one_minus_t", m.min_one_minus_t}};
}

}  // namespace

std::vector<LossReport> train(TrainState& state, const TrainConfig& cfg, const ExampleSource& source,
                              const std::optional<std::filesystem::path>& out_dir, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.stage == 2 && state.opt.steps() == 0)
    throw std::invalid_argument("stage 2 requires a stage-1 checkpoint");
  state.stage = cfg.stage;
  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    nlohmann::json doc{{"train", train_config_json(cfg)},
                       {"model", model_config_json(state.model)},
                       {"codec",
                        {{"kind", state.codec.kind == CodecKind::Learned ? "learned" : "identity"},
                         {"spatial_factor", state.codec.spatial_factor},
                         {"latent_channels", state.codec.latent_channels}}}};
    write_file_atomic(*out_dir / "config.json", doc.dump(2) + "\n");
    const auto path = *out_dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(path);
    metrics.open(path, std::ios::app);
    if (fresh) metrics << "step,total,latent_rgb,latent_normal,pixel_rgb,pixel_normal,grad_norm,wall_time\n";
  }
  const auto start_time = std::chrono::steady_clock::now();
  const auto base = derive_seed(cfg.seed, "train");
  std::vector<LossReport> reports;
  for (int s = 0; s < cfg.steps; ++s) {
    const std::int64_t step = state.opt.steps();
    // Per-step stream, so resuming from a checkpoint replays the same draws.
    Rng rng(splitmix64(base ^ static_cast<std::uint64_t>(step)));
    std::vector<TrainingExample> batch;
    for (int b = 0; b < cfg.batch; ++b) batch.push_back(source(rng));
    const auto rep = train_step(state, batch, cfg, rng);
    reports.push_back(rep);
    if (metrics.is_open()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
      metrics << step + 1 << ',' << rep.total << ',' << rep.latent_rgb << ',' << rep.latent_normal << ','
              << rep.pixel_rgb << ',' << rep.pixel_normal << ',' << rep.grad_norm << ',' << wall << '\n';
    }
    if (out_dir && (step + 1) % cfg.checkpoint_every == 0)
      state.to_checkpoint().save(*out_dir / ("ckpt_" + std::to_string(step + 1) + ".onvc"));
    if (hooks.on_step) hooks.on_step(step + 1, rep);
  }
  if (out_dir) state.to_checkpoint().save(*out_dir / "final.onvc");
  return reports;
}

}  // namespace orbitkit
