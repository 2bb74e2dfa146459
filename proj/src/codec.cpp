#include "orbitkit/codec.hpp"

#include <bit>
#include <cmath>

#include "orbitkit/optim.hpp"
#include "orbitkit/rng.hpp"

namespace orbitkit {

namespace {

std::atomic<std::int64_t> g_decode_calls{0};

int levels(int s) { return std::countr_zero(static_cast<unsigned>(s)); }

void check_video(const Shape& shape, int s) {
  if (shape.size() != 4 || shape[3] != 3) throw ShapeError("codec: expected video [T,H,W,3], got " + shape_str(shape));
  if (shape[1] % s != 0 || shape[2] % s != 0)
    throw ShapeError("codec: frame size " + std::to_string(shape[1]) + "x" + std::to_string(shape[2]) +
                     " not divisible by " + std::to_string(s));
}

template <typename Real>
Var<Real> param(const std::string& name, const CodecConfig& cfg, const Bound<Real>* bound, Tape<Real>& tape) {
  if (bound) return (*bound)(name);
  return tape.constant(cfg.params[name].template cast<Real>());
}

template <typename Real>
Var<Real> decode_impl(Var<Real> z, const CodecConfig& cfg, const Bound<Real>* bound) {
  const Shape ls = z.shape();
  if (ls.size() != 4 || ls[3] != cfg.latent_channels)
    throw ShapeError("codec: expected latent [T,h,w," + std::to_string(cfg.latent_channels) + "], got " +
                     shape_str(ls));
  const int s = cfg.spatial_factor;
  if (cfg.kind == CodecKind::Identity) {
    auto x = ad::reshape(z, {ls[0], ls[1], ls[2], s, s, 3});
    x = ad::permute(x, {0, 1, 3, 2, 4, 5});
    return ad::reshape(x, {ls[0], ls[1] * s, ls[2] * s, 3});
  }
  auto& tape = *z.tape;
  auto x = ad::permute(z, {0, 3, 1, 2});
  const int L = levels(s);
  for (int i = 0; i < L; ++i) {
    const std::string p = "dec." + std::to_string(i);
    x = ad::conv_transpose2d(x, param(p + ".w", cfg, bound, tape), param(p + ".b", cfg, bound, tape), 2, 1);
    if (i + 1 < L) x = ad::silu(x);
  }
  return ad::permute(x, {0, 2, 3, 1});
}

}  // namespace

CodecConfig CodecConfig::identity(int s) {
  if (s < 1) throw std::invalid_argument("codec: spatial factor must be positive");
  CodecConfig c;
  c.kind = CodecKind::Identity;
  c.spatial_factor = s;
  c.latent_channels = 3 * s * s;
  return c;
}

CodecConfig CodecConfig::learned(int s, int latent_channels, int hidden, std::uint64_t seed) {
  if (s < 2 || !std::has_single_bit(static_cast<unsigned>(s)))
    throw std::invalid_argument("codec: learned spatial factor must be a power of two >= 2");
  CodecConfig c;
  c.kind = CodecKind::Learned;
  c.spatial_factor = s;
  c.latent_channels = latent_channels;
  c.hidden = hidden;
  Rng rng(seed, "codec.init");
  const int L = levels(s);
  for (int i = 0; i < L; ++i) {
    const int cin = i == 0 ? 3 : hidden;
    const int cout = i + 1 == L ? latent_channels : hidden;
    c.params.add("enc." + std::to_string(i) + ".w",
                 rng.normal_tensor<float>({cout, cin, 4, 4}, std::sqrt(1.0 / (cin * 16.0))));
    c.params.add("enc." + std::to_string(i) + ".b", Tensor<float>({cout}));
  }
  for (int i = 0; i < L; ++i) {
    const int cin = i == 0 ? latent_channels : hidden;
    const int cout = i + 1 == L ? 3 : hidden;
    c.params.add("dec." + std::to_string(i) + ".w",
                 rng.normal_tensor<float>({cin, cout, 4, 4}, std::sqrt(1.0 / (cin * 4.0))));
    c.params.add("dec." + std::to_string(i) + ".b", Tensor<float>({cout}));
  }
  return c;
}

Shape CodecConfig::latent_shape(const Shape& v) const {
  check_video(v, spatial_factor);
  return {v[0], v[1] / spatial_factor, v[2] / spatial_factor, latent_channels};
}

Shape CodecConfig::video_shape(const Shape& l) const {
  if (l.size() != 4 || l[3] != latent_channels) throw ShapeError("codec: bad latent shape " + shape_str(l));
  return {l[0], l[1] * spatial_factor, l[2] * spatial_factor, 3};
}

void CodecConfig::to_checkpoint(Checkpoint& ck) const {
  ck.add("codec.meta", Tensor<float>({4}, std::vector<float>{kind == CodecKind::Learned ? 1.0f : 0.0f,
                                                           float(spatial_factor), float(latent_channels),
                                                           float(hidden)}));
  params.to_checkpoint(ck, "codec.");
}

CodecConfig CodecConfig::from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.at("codec.meta");
  if (m.size() != 4) throw FormatError("codec.meta must hold 4 values");
  if (m[0] == 0.0f) return identity(static_cast<int>(m[1]));
  auto c = learned(static_cast<int>(m[1]), static_cast<int>(m[2]), static_cast<int>(m[3]), 0);
  c.params.from_checkpoint(ck, "codec.");
  return c;
}

template <typename Real>
Var<Real> encode(Var<Real> video, const CodecConfig& cfg, const Bound<Real>* bound) {
  const Shape vs = video.shape();
  check_video(vs, cfg.spatial_factor);
  const int s = cfg.spatial_factor;
  if (cfg.kind == CodecKind::Identity) {
    auto x = ad::reshape(video, {vs[0], vs[1] / s, s, vs[2] / s, s, 3});
    x = ad::permute(x, {0, 1, 3, 2, 4, 5});
    return ad::reshape(x, {vs[0], vs[1] / s, vs[2] / s, 3 * s * s});
  }
  auto& tape = *video.tape;
  auto x = ad::permute(video, {0, 3, 1, 2});
  const int L = levels(s);
  for (int i = 0; i < L; ++i) {
    const std::string p = "enc." + std::to_string(i);
    x = ad::conv2d(x, param(p + ".w", cfg, bound, tape), param(p + ".b", cfg, bound, tape), 2, 1);
    if (i + 1 < L) x = ad::silu(x);
  }
  return ad::permute(x, {0, 2, 3, 1});
}

template <typename Real>
Var<Real> decode(Var<Real> latent, const CodecConfig& cfg, const Bound<Real>* bound) {
  ++g_decode_calls;
  return decode_impl(latent, cfg, bound);
}

template Var<float> encode(Var<float>, const CodecConfig&, const Bound<float>*);
template Var<double> encode(Var<double>, const CodecConfig&, const Bound<double>*);
template Var<float> decode(Var<float>, const CodecConfig&, const Bound<float>*);
template Var<double> decode(Var<double>, const CodecConfig&, const Bound<double>*);

Tensor<float> encode(const Tensor<float>& video, const CodecConfig& cfg) {
  Tape<float> tape;
  return encode(tape.constant(video), cfg).value();
}

Tensor<float> decode(const Tensor<float>& latent, const CodecConfig& cfg) {
  ++g_decode_calls;
  Tape<float> tape;
  return decode_impl(tape.constant(latent), cfg, static_cast<const Bound<float>*>(nullptr)).value();
}

std::int64_t decode_call_count() { return g_decode_calls.load(); }
void reset_decode_call_count() { g_decode_calls = 0; }

namespace {

Tensor<float> gather_frames(const Tensor<float>& frames, const std::vector<std::int64_t>& idx) {
  const auto frame = static_cast<std::size_t>(frames.dim(1) * frames.dim(2) * frames.dim(3));
  Tensor<float> out({static_cast<std::int64_t>(idx.size()), frames.dim(1), frames.dim(2), frames.dim(3)});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(frames.data() + static_cast<std::size_t>(idx[i]) * frame, frame, out.data() + i * frame);
  return out;
}

double reconstruction_mse(const CodecConfig& cfg, const Tensor<float>& frames) {
  double total = 0.0;
  const std::int64_t n = frames.dim(0);
  for (std::int64_t start = 0; start < n; start += 16) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < std::min(n, start + 16); ++i) idx.push_back(i);
    const auto x = gather_frames(frames, idx);
    Tape<float> tape;
    const auto xv = tape.constant(x);
    const auto rec = decode_impl(encode(xv, cfg), cfg, static_cast<const Bound<float>*>(nullptr));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = double(rec.value()[i]) - x[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(frames.size());
}

}  // namespace

CodecTrainReport train_codec(CodecConfig& cfg, const Tensor<float>& frames, const Tensor<float>& heldout, int steps,
                             double lr, int batch, std::uint64_t seed) {
  if (cfg.kind != CodecKind::Learned) throw std::invalid_argument("train_codec: codec kind must be learned");
  if (frames.rank() != 4 || frames.dim(0) < 1) throw ShapeError("train_codec: frames must be [N,H,W,3]");
  Adam opt(cfg.params, AdamConfig{lr, lr});
  Rng rng(seed, "codec.batches");
  CodecTrainReport report;
  for (int step = 0; step < steps; ++step) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = rng.integer(0, frames.dim(0) - 1);
    const auto x = gather_frames(frames, idx);
    Tape<float> tape;
    tape.check_finite = false;
    Bound<float> bound(tape, cfg.params, true);
    const auto xv = tape.constant(x);
    const auto loss = ad::mse(decode_impl(encode(xv, cfg, &bound), cfg, &bound), xv);
    const double l = loss.value().item();
    if (!std::isfinite(l)) throw NumericalError("train_codec: loss diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(cfg.params, collect_grads(tape, bound));
    report.losses.push_back(l);
  }
  if (heldout.size() > 0) report.heldout_mse = reconstruction_mse(cfg, heldout);
  return report;
}

}  // namespace orbitkit
