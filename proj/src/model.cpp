#include "orbitkit/model.hpp"

#include <cmath>

#include "orbitkit/rng.hpp"

namespace orbitkit {

namespace {

std::string blk(int k, const char* name) { return "blocks." + std::to_string(k) + "." + name; }
std::string adp(int i, const char* name) { return "adapters." + std::to_string(i) + "." + name; }

Tensor<float> xavier(Rng& rng, std::int64_t in, std::int64_t out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return rng.uniform_tensor<float>({in, out}, -bound, bound);
}

Tensor<float> conv_init(Rng& rng, std::int64_t out, std::int64_t in, std::int64_t k) {
  return rng.normal_tensor<float>({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)));
}

template <typename Real>
Tensor<Real> position_embedding(const ModelConfig& cfg, int T) {
  const int d = cfg.width;
  const int axis_dim = 2 * (d / 6);
  const int gh = cfg.grid_h(), gw = cfg.grid_w();
  const std::int64_t N = cfg.tokens_per_branch(T);
  Tensor<Real> out({N, d});
  if (axis_dim == 0) return out;
  std::vector<Real> f(static_cast<std::size_t>(N)), r(f.size()), c(f.size());
  for (std::int64_t n = 0; n < N; ++n) {
    f[static_cast<std::size_t>(n)] = static_cast<Real>(n / (gh * gw));
    r[static_cast<std::size_t>(n)] = static_cast<Real>((n / gw) % gh);
    c[static_cast<std::size_t>(n)] = static_cast<Real>(n % gw);
  }
  const Tensor<Real>* parts[3];
  const auto ef = sinusoidal_embedding<Real>(f, axis_dim);
  const auto er = sinusoidal_embedding<Real>(r, axis_dim);
  const auto ec = sinusoidal_embedding<Real>(c, axis_dim);
  parts[0] = &ef;
  parts[1] = &er;
  parts[2] = &ec;
  for (std::int64_t n = 0; n < N; ++n)
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < axis_dim; ++j)
        out[static_cast<std::size_t>(n * d + a * axis_dim + j)] = (*parts[a])[static_cast<std::size_t>(n * axis_dim + j)];
  return out;
}

template <typename Real>
Var<Real> attention_block(const Bound<Real>& P, int k, Var<Real> a, const ModelConfig& cfg) {
  const std::int64_t S = a.shape()[0];
  const int d = cfg.width, H = cfg.heads, dh = d / H;
  auto qkv = ad::linear(a, P(blk(k, "attn.qkv.w")), P(blk(k, "attn.qkv.b")));
  qkv = ad::permute(ad::reshape(qkv, {S, 3, H, dh}), {1, 2, 0, 3});
  auto q = ad::slice(qkv, 0, 0, 1);
  auto kk = ad::slice(qkv, 0, 1, 1);
  auto v = ad::slice(qkv, 0, 2, 1);
  auto o = ad::attention(q, kk, v);
  o = ad::reshape(ad::permute(o, {0, 2, 1, 3}), {S, d});
  return ad::linear(o, P(blk(k, "attn.proj.w")), P(blk(k, "attn.proj.b")));
}

// Camera modulation of every branch segment; the null token (row 0) passes through.
template <typename Real>
Var<Real> modulate_segments(Var<Real> x, const Modulation<Real>& m, int segments, std::int64_t N) {
  std::vector<Var<Real>> parts{ad::slice(x, 0, 0, 1)};
  for (int s = 0; s < segments; ++s) parts.push_back(ad::adaln_modulate(ad::slice(x, 0, 1 + s * N, N), m.mu, m.sigma));
  return ad::concat(parts, 0);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (depth < 0 || width < 2 || heads < 1 || patch < 1) fail("depth/width/heads/patch out of range");
  if (width % heads != 0) fail("width must be divisible by heads");
  if (latent_h % patch != 0 || latent_w % patch != 0) fail("patch must divide the latent grid");
  if (frames < 1 || latent_channels < 1 || adapter_hidden < 1 || pixel_cell < 1) fail("non-positive dimension");
  if (!(min_one_minus_t > 0.0 && min_one_minus_t <= 1.0)) fail("min_one_minus_t must be in (0, 1]");
}

void ModelConfig::to_checkpoint(Checkpoint& ck) const {
  ck.add("model.meta", Tensor<float>({12}, std::vector<float>{
                                               float(depth), float(width), float(heads), float(patch), float(frames),
                                               float(latent_h), float(latent_w), float(latent_channels),
                                               float(adapter_hidden), float(pixel_cell), dual_branch ? 1.0f : 0.0f,
                                               float(min_one_minus_t)}));
}

ModelConfig ModelConfig::from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.at("model.meta");
  if (m.size() != 12) throw FormatError("model.meta must hold 12 values");
  ModelConfig c;
  c.depth = int(m[0]);
  c.width = int(m[1]);
  c.heads = int(m[2]);
  c.patch = int(m[3]);
  c.frames = int(m[4]);
  c.latent_h = int(m[5]);
  c.latent_w = int(m[6]);
  c.latent_channels = int(m[7]);
  c.adapter_hidden = int(m[8]);
  c.pixel_cell = int(m[9]);
  c.dual_branch = m[10] != 0.0f;
  c.min_one_minus_t = m[11];
  c.validate();
  return c;
}

ParamSet<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, "model.init");
  const std::int64_t d = cfg.width, A = cfg.adapter_hidden;
  ParamSet<float> P;
  const auto ones = [](std::int64_t n) { return Tensor<float>({n}, 1.0f); };
  const auto zeros = [](Shape s) { return Tensor<float>(std::move(s)); };

  P.add("patch.w", xavier(rng, cfg.token_dim_in(), d));
  P.add("patch.b", zeros({d}));
  P.add("branch_embed", rng.normal_tensor<float>({2, d}, 0.02), ParamGroup::New);
  P.add("null_token", rng.normal_tensor<float>({1, d}, 0.02), ParamGroup::New);
  P.add("t_mlp.0.w", rng.normal_tensor<float>({d, d}, 0.02));
  P.add("t_mlp.0.b", zeros({d}));
  P.add("t_mlp.1.w", rng.normal_tensor<float>({d, d}, 0.02));
  P.add("t_mlp.1.b", zeros({d}));
  for (int k = 0; k < cfg.depth; ++k) {
    P.add(blk(k, "ln1.g"), ones(d));
    P.add(blk(k, "ln1.b"), zeros({d}));
    P.add(blk(k, "attn.qkv.w"), xavier(rng, d, 3 * d));
    P.add(blk(k, "attn.qkv.b"), zeros({3 * d}));
    P.add(blk(k, "attn.proj.w"), xavier(rng, d, d));
    P.add(blk(k, "attn.proj.b"), zeros({d}));
    P.add(blk(k, "ln2.g"), ones(d));
    P.add(blk(k, "ln2.b"), zeros({d}));
    P.add(blk(k, "mlp.0.w"), xavier(rng, d, 4 * d));
    P.add(blk(k, "mlp.0.b"), zeros({4 * d}));
    P.add(blk(k, "mlp.1.w"), xavier(rng, 4 * d, d));
    P.add(blk(k, "mlp.1.b"), zeros({d}));
    P.add(blk(k, "ada.w"), zeros({d, 6 * d}));
    P.add(blk(k, "ada.b"), zeros({6 * d}));
  }
  P.add("lnf.g", ones(d));
  P.add("lnf.b", zeros({d}));
  P.add("final.ada.w", zeros({d, 2 * d}));
  P.add("final.ada.b", zeros({2 * d}));
  P.add("head.w", zeros({d, cfg.token_dim_out()}));
  P.add("head.b", zeros({cfg.token_dim_out()}));
  for (int i = 0; i <= cfg.depth; ++i) {
    P.add(adp(i, "c1.w"), conv_init(rng, A, 6, 3), ParamGroup::New);
    P.add(adp(i, "c1.b"), zeros({A}), ParamGroup::New);
    P.add(adp(i, "skip.w"), conv_init(rng, A, 6, 1), ParamGroup::New);
    P.add(adp(i, "c2.w"), conv_init(rng, A, A, 3), ParamGroup::New);
    P.add(adp(i, "c2.b"), zeros({A}), ParamGroup::New);
    P.add(adp(i, "out.w"), zeros({2 * d, A, 1, 1}), ParamGroup::New);
    P.add(adp(i, "out.b"), zeros({2 * d}), ParamGroup::New);
  }
  return P;
}

template <typename Real>
Tensor<Real> patchify(const Tensor<Real>& x, int p) {
  const Shape& s = x.shape();
  if (s.size() != 4 || p < 1 || s[1] % p || s[2] % p) throw ShapeError("patchify: cannot split " + shape_str(s));
  auto y = permute(x.reshaped({s[0], s[1] / p, p, s[2] / p, p, s[3]}), {0, 1, 3, 2, 4, 5});
  return std::move(y).reshaped({s[0] * (s[1] / p) * (s[2] / p), p * p * s[3]});
}

template <typename Real>
Tensor<Real> unpatchify(const Tensor<Real>& tokens, const Shape& s, int p) {
  if (s.size() != 4 || p < 1 || s[1] % p || s[2] % p) throw ShapeError("unpatchify: bad latent shape " + shape_str(s));
  auto y = permute(tokens.reshaped({s[0], s[1] / p, s[2] / p, p, p, s[3]}), {0, 1, 3, 2, 4, 5});
  return std::move(y).reshaped(s);
}

template <typename Real>
Var<Real> patchify(Var<Real> x, int p) {
  const Shape s = x.shape();
  if (s.size() != 4 || p < 1 || s[1] % p || s[2] % p) throw ShapeError("patchify: cannot split " + shape_str(s));
  auto y = ad::permute(ad::reshape(x, {s[0], s[1] / p, p, s[2] / p, p, s[3]}), {0, 1, 3, 2, 4, 5});
  return ad::reshape(y, {s[0] * (s[1] / p) * (s[2] / p), p * p * s[3]});
}

template <typename Real>
Var<Real> unpatchify(Var<Real> tokens, const Shape& s, int p) {
  if (s.size() != 4 || p < 1 || s[1] % p || s[2] % p) throw ShapeError("unpatchify: bad latent shape " + shape_str(s));
  auto y = ad::permute(ad::reshape(tokens, {s[0], s[1] / p, s[2] / p, p, p, s[3]}), {0, 1, 3, 2, 4, 5});
  return ad::reshape(y, s);
}

template <typename Real>
Tensor<Real> pool_pluecker(const PlueckerGrid& grid, int cell) {
  const int T = grid.frames(), H = grid.height(), W = grid.width();
  if (cell < 1 || H % cell || W % cell)
    throw ShapeError("pool_pluecker: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by " +
                     std::to_string(cell));
  const int gh = H / cell, gw = W / cell;
  Tensor<Real> out({T, 6, gh, gw});
  const double inv = 1.0 / (cell * cell);
  for (int c = 0; c < 6; ++c)
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
          double acc = 0.0;
          for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x)
              acc += grid.data[static_cast<std::size_t>(((c * T + t) * H + i * cell + y) * W + j * cell + x)];
          out[static_cast<std::size_t>(((t * 6 + c) * gh + i) * gw + j)] = static_cast<Real>(acc * inv);
        }
  return out;
}

template <typename Real>
Tensor<Real> camera_input(const ModelConfig& cfg, const Trajectory& traj, int height, int width) {
  return pool_pluecker<Real>(pluecker_grid(traj, height, width), cfg.pixel_cell * cfg.patch);
}

template <typename Real>
Modulation<Real> camera_adapter(const Bound<Real>& P, const ModelConfig& cfg, int index, Var<Real> x) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[1] != 6 || s[2] != cfg.grid_h() || s[3] != cfg.grid_w())
    throw ShapeError("camera_adapter: expected Plücker input [T,6," + std::to_string(cfg.grid_h()) + "," +
                     std::to_string(cfg.grid_w()) + "], got " + shape_str(s));
  if (index < 0 || index > cfg.depth) throw std::out_of_range("camera_adapter: no adapter " + std::to_string(index));
  auto h1 = ad::add(ad::silu(ad::conv2d(x, P(adp(index, "c1.w")), P(adp(index, "c1.b")), 1, 1)),
                    ad::conv2d(x, P(adp(index, "skip.w")), std::nullopt, 1, 0));
  auto h2 = ad::add(ad::silu(ad::conv2d(h1, P(adp(index, "c2.w")), P(adp(index, "c2.b")), 1, 1)), h1);
  auto o = ad::conv2d(h2, P(adp(index, "out.w")), P(adp(index, "out.b")), 1, 0);
  const std::int64_t N = s[0] * s[2] * s[3], d = cfg.width;
  o = ad::reshape(ad::permute(o, {0, 2, 3, 1}), {N, 2 * d});
  return {ad::slice(o, 1, 0, d), ad::slice(o, 1, d, d)};
}

namespace {

template <typename Real>
Tensor<Real> mask_channel(const Shape& s, const Tensor<Real>& mask) {
  if (mask.rank() != 1 || mask.dim(0) != s[0])
    throw ShapeError("assemble_condition: mask must have one entry per frame");
  for (Real m : mask.values())
    if (m != Real(0) && m != Real(1)) throw std::invalid_argument("assemble_condition: mask must be binary");
  if (mask[0] != Real(1)) throw std::invalid_argument("assemble_condition: frame 0 must be a reference frame");
  Tensor<Real> out({s[0], s[1], s[2], 1});
  const auto per = static_cast<std::size_t>(s[1] * s[2]);
  for (std::int64_t t = 0; t < s[0]; ++t)
    std::fill_n(out.data() + static_cast<std::size_t>(t) * per, per, mask[static_cast<std::size_t>(t)]);
  return out;
}

}  // namespace

template <typename Real>
Var<Real> assemble_condition(Var<Real> noised, Var<Real> ref, const Tensor<Real>& mask) {
  const Shape s = noised.shape();
  if (s.size() != 4 || ref.shape() != s)
    throw ShapeError("assemble_condition: noised " + shape_str(s) + " and ref " + shape_str(ref.shape()) +
                     " must be equal [T,h,w,C]");
  return ad::concat<Real>({noised, ref, noised.tape->constant(mask_channel(s, mask))}, 3);
}

template <typename Real>
Tensor<Real> assemble_condition(const Tensor<Real>& noised, const Tensor<Real>& ref, const Tensor<Real>& mask) {
  Tape<Real> tape;
  return assemble_condition(tape.constant(noised), tape.constant(ref), mask).value();
}

template <typename Real>
Conditioning<Real> make_conditioning(const Tensor<Real>& latent, const std::vector<int>& ref_frames,
                                     Tensor<Real> pluecker) {
  const std::int64_t T = latent.dim(0);
  if (ref_frames.empty() || ref_frames[0] != 0) throw std::invalid_argument("reference frames must start with 0");
  Conditioning<Real> c{Tensor<Real>(latent.shape()), Tensor<Real>({T}), std::move(pluecker)};
  const auto per = latent.size() / static_cast<std::size_t>(T);
  int prev = -1;
  for (int f : ref_frames) {
    if (f <= prev || f >= T) throw std::invalid_argument("reference frames must be increasing and within range");
    prev = f;
    std::copy_n(latent.data() + static_cast<std::size_t>(f) * per, per,
                c.ref_latent.data() + static_cast<std::size_t>(f) * per);
    c.mask[static_cast<std::size_t>(f)] = Real(1);
  }
  return c;
}

template <typename Real>
Velocity<Real> predict_velocity(const Bound<Real>& P, const ModelConfig& cfg, Var<Real> x_rgb,
                                std::optional<Var<Real>> x_normal, Real t, const Conditioning<Real>& cond,
                                ForwardOptions options) {
  cfg.validate();
  if (!(t >= Real(0) && t <= Real(1))) throw std::invalid_argument("predict_velocity: t must lie in [0, 1]");
  const Shape ls = x_rgb.shape();
  if (ls.size() != 4 || ls[1] != cfg.latent_h || ls[2] != cfg.latent_w || ls[3] != cfg.latent_channels)
    throw ShapeError("predict_velocity: latent " + shape_str(ls) + " does not match the model config");
  const bool with_normal = cfg.dual_branch && !options.drop_normal;
  if (with_normal && (!x_normal || x_normal->shape() != ls))
    throw ShapeError("predict_velocity: normal latent missing or mis-shaped");

  auto& tape = *x_rgb.tape;
  const int T = static_cast<int>(ls[0]), p = cfg.patch;
  const std::int64_t d = cfg.width, N = cfg.tokens_per_branch(T);
  const auto ref = tape.constant(cond.ref_latent);
  const auto pos = tape.constant(position_embedding<Real>(cfg, T));
  const auto plk = tape.constant(cond.pluecker);

  const auto m0 = camera_adapter(P, cfg, 0, plk);
  auto embed = [&](Var<Real> x, int branch) {
    auto tok = ad::linear(patchify(assemble_condition(x, ref, cond.mask), p), P("patch.w"), P("patch.b"));
    tok = ad::add_rows(ad::add(tok, pos), ad::reshape(ad::slice(P("branch_embed"), 0, branch, 1), {d}));
    return ad::adaln_modulate(tok, m0.mu, m0.sigma);
  };

  std::vector<Var<Real>> seq{P("null_token")};
  int rgb_seg = 0, nrm_seg = -1;
  if (with_normal) {
    auto r = embed(x_rgb, 0), n = embed(*x_normal, 1);
    if (options.swap_branches) {
      seq.push_back(n);
      seq.push_back(r);
      nrm_seg = 0;
      rgb_seg = 1;
    } else {
      seq.push_back(r);
      seq.push_back(n);
      nrm_seg = 1;
    }
  } else {
    seq.push_back(embed(x_rgb, 0));
  }
  const int segments = static_cast<int>(seq.size()) - 1;
  auto X = ad::concat(seq, 0);

  const Real tt = t * Real(1000);
  auto temb = tape.constant(sinusoidal_embedding<Real>(std::span<const Real>(&tt, 1), static_cast<int>(d)));
  auto c = ad::linear(ad::silu(ad::linear(temb, P("t_mlp.0.w"), P("t_mlp.0.b"))), P("t_mlp.1.w"), P("t_mlp.1.b"));
  const auto sc = ad::silu(c);

  for (int k = 0; k < cfg.depth; ++k) {
    const auto ada = ad::reshape(ad::linear(sc, P(blk(k, "ada.w")), P(blk(k, "ada.b"))), {6 * d});
    auto chunk = [&](int i) { return ad::slice(ada, 0, i * d, d); };
    auto a = ad::modulate_rows(ad::layer_norm(X, P(blk(k, "ln1.g")), P(blk(k, "ln1.b"))), chunk(0), chunk(1));
    X = ad::add(X, ad::mul_rows(attention_block(P, k, a, cfg), chunk(2)));
    auto m = ad::modulate_rows(ad::layer_norm(X, P(blk(k, "ln2.g")), P(blk(k, "ln2.b"))), chunk(3), chunk(4));
    m = modulate_segments(m, camera_adapter(P, cfg, k + 1, plk), segments, N);
    m = ad::linear(ad::silu(ad::linear(m, P(blk(k, "mlp.0.w")), P(blk(k, "mlp.0.b")))), P(blk(k, "mlp.1.w")),
                   P(blk(k, "mlp.1.b")));
    X = ad::add(X, ad::mul_rows(m, chunk(5)));
  }
  const auto fa = ad::reshape(ad::linear(sc, P("final.ada.w"), P("final.ada.b")), {2 * d});
  X = ad::modulate_rows(ad::layer_norm(X, P("lnf.g"), P("lnf.b")), ad::slice(fa, 0, 0, d), ad::slice(fa, 0, d, d));
  const auto out = ad::linear(X, P("head.w"), P("head.b"));

  const Real inv = Real(1) / std::max(Real(1) - t, static_cast<Real>(cfg.min_one_minus_t));
  auto velocity = [&](int seg, Var<Real> x) {
    const auto x1 = unpatchify(ad::slice(out, 0, 1 + seg * N, N), ls, p);
    return ad::scale(ad::sub(x1, x), inv);
  };
  Velocity<Real> v{velocity(rgb_seg, x_rgb), std::nullopt};
  if (with_normal) v.normal = velocity(nrm_seg, *x_normal);
  return v;
}

VelocityTensors predict_velocity(const ParamSet<float>& params, const ModelConfig& cfg, const Tensor<float>& x_rgb,
                                 const Tensor<float>* x_normal, float t, const Conditioning<float>& cond,
                                 ForwardOptions options) {
  Tape<float> tape;
  Bound<float> bound(tape, params, false);
  std::optional<Var<float>> xn;
  if (x_normal) xn = tape.constant(*x_normal);
  auto v = predict_velocity(bound, cfg, tape.constant(x_rgb), xn, t, cond, options);
  VelocityTensors out{v.rgb.value(), {}};
  if (v.normal) out.normal = v.normal->value();
  return out;
}

#define ORBITKIT_INSTANTIATE_MODEL(R)                                                                            \
  template Tensor<R> patchify(const Tensor<R>&, int);                                                            \
  template Tensor<R> unpatchify(const Tensor<R>&, const Shape&, int);                                            \
  template Var<R> patchify(Var<R>, int);                                                                         \
  template Var<R> unpatchify(Var<R>, const Shape&, int);                                                         \
  template Tensor<R> pool_pluecker(const PlueckerGrid&, int);                                                    \
  template Tensor<R> camera_input(const ModelConfig&, const Trajectory&, int, int);                              \
  template Modulation<R> camera_adapter(const Bound<R>&, const ModelConfig&, int, Var<R>);                       \
  template Var<R> assemble_condition(Var<R>, Var<R>, const Tensor<R>&);                                          \
  template Tensor<R> assemble_condition(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);                   \
  template Conditioning<R> make_conditioning(const Tensor<R>&, const std::vector<int>&, Tensor<R>);              \
  template Velocity<R> predict_velocity(const Bound<R>&, const ModelConfig&, Var<R>, std::optional<Var<R>>, R, \
                                        const Conditioning<R>&, ForwardOptions);

ORBITKIT_INSTANTIATE_MODEL(float)
ORBITKIT_INSTANTIATE_MODEL(double)

}  // namespace orbitkit
