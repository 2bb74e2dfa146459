#include <Eigen/Core>
#include <cmath>

#include "orbitkit/autodiff.hpp"

namespace orbitkit {
namespace ad {
namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<Mat<Real>>;
template <typename Real>
using CMapMat = Eigen::Map<const Mat<Real>>;

template <typename Real>
void require_same(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename Real>
void require_row(const char* op, const Tensor<Real>& x, const Tensor<Real>& row) {
  if (x.rank() == 0 || row.rank() != 1 || row.dim(0) != x.shape().back())
    throw ShapeError(std::string(op) + ": row operand " + shape_str(row.shape()) + " does not match trailing axis of " +
                     shape_str(x.shape()));
}

template <typename Real>
void axpy(Tensor<Real>& dst, const Tensor<Real>& src, Real alpha = Real(1)) {
  Real* d = dst.data();
  const Real* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

struct AxisSplit {
  std::int64_t outer, axis, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r{1, s.at(static_cast<std::size_t>(axis)), 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Column buffer [C*kh*kw, Ho*Wo] for one image [C,H,W].
template <typename Real>
void im2col(const Real* img, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw, int stride, int pad,
            std::int64_t Ho, std::int64_t Wo, Real* col) {
  for (std::int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        Real* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? img[(c * H + iy) * W + ix] : Real(0);
          }
        }
      }
}

template <typename Real>
void col2im(const Real* col, std::int64_t C, std::int64_t H, std::int64_t W, int kh, int kw, int stride, int pad,
            std::int64_t Ho, std::int64_t Wo, Real* img) {
  for (std::int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const Real* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) img[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

}  // namespace

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same("add", av, bv);
  Tensor<Real> out = av;
  axpy(out, bv);
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<Real>& t, const Tensor<Real>& g) {
    if (t.requires_grad(a)) axpy(t.grad_slot(a), g);
    if (t.requires_grad(b)) axpy(t.grad_slot(b), g);
  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same("sub", av, bv);
  Tensor<Real> out = av;
  axpy(out, bv, Real(-1));
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<Real>& t, const Tensor<Real>& g) {
    if (t.requires_grad(a)) axpy(t.grad_slot(a), g);
    if (t.requires_grad(b)) axpy(t.grad_slot(b), g, Real(-1));
  });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same("mul", av, bv);
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](Tape<Real>& t, const Tensor<Real>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (t.requires_grad(a)) {
      auto& ga = t.grad_slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real s) {
  Tensor<Real> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape->record("scale", std::move(out), {a},
                        [a, s](Tape<Real>& t, const Tensor<Real>& g) { axpy(t.grad_slot(a), g, s); });
}

template <typename Real>
Var<Real> add_scalar(Var<Real> a, Real s) {
  Tensor<Real> out = a.value();
  for (auto& v : out.values()) v += s;
  return a.tape->record("add_scalar", std::move(out), {a},
                        [a](Tape<Real>& t, const Tensor<Real>& g) { axpy(t.grad_slot(a), g); });
}

template <typename Real>
Var<Real> silu(Var<Real> a) {
  const auto& av = a.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / (Real(1) + std::exp(-av[i]));
  return a.tape->record("silu", std::move(out), {a}, [a](Tape<Real>& t, const Tensor<Real>& g) {
    const auto& x = t.value(a);
    auto& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real s = Real(1) / (Real(1) + std::exp(-x[i]));
      ga[i] += g[i] * s * (Real(1) + x[i] * (Real(1) - s));
    }
  });
}

template <typename Real>
Var<Real> add_rows(Var<Real> x, Var<Real> row) {
  const auto& xv = x.value();
  const auto& rv = row.value();
  require_row("add_rows", xv, rv);
  const std::size_t d = rv.size();
  Tensor<Real> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += rv[i % d];
  return x.tape->record("add_rows", std::move(out), {x, row}, [x, row, d](Tape<Real>& t, const Tensor<Real>& g) {
    if (t.requires_grad(x)) axpy(t.grad_slot(x), g);
    if (t.requires_grad(row)) {
      auto& gr = t.grad_slot(row);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % d] += g[i];
    }
  });
}

template <typename Real>
Var<Real> mul_rows(Var<Real> x, Var<Real> row) {
  const auto& xv = x.value();
  const auto& rv = row.value();
  require_row("mul_rows", xv, rv);
  const std::size_t d = rv.size();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * rv[i % d];
  return x.tape->record("mul_rows", std::move(out), {x, row}, [x, row, d](Tape<Real>& t, const Tensor<Real>& g) {
    const auto& xv = t.value(x);
    const auto& rv = t.value(row);
    if (t.requires_grad(x)) {
      auto& gx = t.grad_slot(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * rv[i % d];
    }
    if (t.requires_grad(row)) {
      auto& gr = t.grad_slot(row);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i % d] += g[i] * xv[i];
    }
  });
}

template <typename Real>
Var<Real> modulate_rows(Var<Real> x, Var<Real> shift, Var<Real> scl) {
  const auto& xv = x.value();
  require_row("modulate_rows", xv, shift.value());
  require_row("modulate_rows", xv, scl.value());
  const auto& sh = shift.value();
  const auto& sc = scl.value();
  const std::size_t d = sh.size();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (Real(1) + sc[i % d]) * xv[i] + sh[i % d];
  return x.tape->record("modulate_rows", std::move(out), {x, shift, scl},
                        [x, shift, scl, d](Tape<Real>& t, const Tensor<Real>& g) {
                          const auto& xv = t.value(x);
                          const auto& sc = t.value(scl);
                          if (t.requires_grad(x)) {
                            auto& gx = t.grad_slot(x);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (Real(1) + sc[i % d]);
                          }
                          if (t.requires_grad(shift)) {
                            auto& gs = t.grad_slot(shift);
                            for (std::size_t i = 0; i < g.size(); ++i) gs[i % d] += g[i];
                          }
                          if (t.requires_grad(scl)) {
                            auto& gc = t.grad_slot(scl);
                            for (std::size_t i = 0; i < g.size(); ++i) gc[i % d] += g[i] * xv[i];
                          }
                        });
}

template <typename Real>
Var<Real> adaln_modulate(Var<Real> z, Var<Real> mu, Var<Real> sigma) {
  const auto& zv = z.value();
  require_same("adaln_modulate", zv, mu.value());
  require_same("adaln_modulate", zv, sigma.value());
  const auto& mv = mu.value();
  const auto& sv = sigma.value();
  Tensor<Real> out(zv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (Real(1) + sv[i]) * zv[i] + mv[i];
  return z.tape->record("adaln_modulate", std::move(out), {z, mu, sigma},
                        [z, mu, sigma](Tape<Real>& t, const Tensor<Real>& g) {
                          const auto& zv = t.value(z);
                          const auto& sv = t.value(sigma);
                          if (t.requires_grad(z)) {
                            auto& gz = t.grad_slot(z);
                            for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i] * (Real(1) + sv[i]);
                          }
                          if (t.requires_grad(mu)) axpy(t.grad_slot(mu), g);
                          if (t.requires_grad(sigma)) {
                            auto& gs = t.grad_slot(sigma);
                            for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i] * zv[i];
                          }
                        });
}

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const auto& as = av.shape();
  const auto& bs = bv.shape();
  if (as.size() < 2 || as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()) ||
      as[as.size() - 1] != bs[bs.size() - 2])
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const std::int64_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  const std::int64_t batch = shape_numel(Shape(as.begin(), as.end() - 2));
  Shape os = as;
  os.back() = n;
  Tensor<Real> out(os);
  for (std::int64_t i = 0; i < batch; ++i) {
    MapMat<Real>(out.data() + i * m * n, m, n).noalias() =
        CMapMat<Real>(av.data() + i * m * k, m, k) * CMapMat<Real>(bv.data() + i * k * n, k, n);
  }
  return a.tape->record("matmul", std::move(out), {a, b},
                        [a, b, m, k, n, batch](Tape<Real>& t, const Tensor<Real>& g) {
                          const auto& av = t.value(a);
                          const auto& bv = t.value(b);
                          const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
                          Real* da = ga ? t.grad_slot(a).data() : nullptr;
                          Real* db = gb ? t.grad_slot(b).data() : nullptr;
                          for (std::int64_t i = 0; i < batch; ++i) {
                            CMapMat<Real> G(g.data() + i * m * n, m, n);
                            if (ga)
                              MapMat<Real>(da + i * m * k, m, k).noalias() +=
                                  G * CMapMat<Real>(bv.data() + i * k * n, k, n).transpose();
                            if (gb)
                              MapMat<Real>(db + i * k * n, k, n).noalias() +=
                                  CMapMat<Real>(av.data() + i * m * k, m, k).transpose() * G;
                          }
                        });
}

template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> b) {
  const Shape xs = x.shape();
  const auto& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0])
    throw ShapeError("linear: input " + shape_str(xs) + " does not match weight " + shape_str(ws));
  const std::int64_t rows = shape_numel(xs) / ws[0];
  Var<Real> y = matmul(reshape(x, Shape{rows, ws[0]}), w);
  if (b) y = add_rows(y, *b);
  Shape os = xs;
  os.back() = ws[1];
  return reshape(y, std::move(os));
}

template <typename Real>
Var<Real> reshape(Var<Real> x, Shape shape) {
  const Shape in_shape = x.shape();
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x}, [x, in_shape](Tape<Real>& t, const Tensor<Real>& g) {
    axpy(t.grad_slot(x), g);
  });
}

template <typename Real>
Var<Real> permute(Var<Real> x, std::vector<int> axes) {
  Tensor<Real> out = orbitkit::permute(x.value(), axes);
  return x.tape->record("permute", std::move(out), {x}, [x, axes](Tape<Real>& t, const Tensor<Real>& g) {
    axpy(t.grad_slot(x), orbitkit::permute(g, inverse_axes(axes)));
  });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape os = parts[0].shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= os.size()) throw ShapeError("concat: axis out of range");
  std::int64_t total = 0;
  std::vector<std::int64_t> lens;
  for (const auto& p : parts) {
    Shape s = p.shape();
    lens.push_back(s.at(static_cast<std::size_t>(axis)));
    total += lens.back();
    s[static_cast<std::size_t>(axis)] = os[static_cast<std::size_t>(axis)];
    if (s != os) throw ShapeError("concat: shape " + shape_str(p.shape()) + " incompatible with " + shape_str(os));
  }
  os[static_cast<std::size_t>(axis)] = total;
  Tensor<Real> out(os);
  const AxisSplit sp = split_at(os, axis);
  std::int64_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto& pv = parts[j].value();
    const std::int64_t chunk = lens[j] * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total * sp.inner + offset * sp.inner);
    offset += lens[j];
  }
  return parts[0].tape->record("concat", std::move(out), parts,
                               [parts, lens, sp, total](Tape<Real>& t, const Tensor<Real>& g) {
                                 std::int64_t offset = 0;
                                 for (std::size_t j = 0; j < parts.size(); ++j) {
                                   const std::int64_t chunk = lens[j] * sp.inner;
                                   if (t.requires_grad(parts[j])) {
                                     auto& gp = t.grad_slot(parts[j]);
                                     for (std::int64_t o = 0; o < sp.outer; ++o) {
                                       const Real* src = g.data() + o * total * sp.inner + offset * sp.inner;
                                       Real* dst = gp.data() + o * chunk;
                                       for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                                     }
                                   }
                                   offset += lens[j];
                                 }
                               });
}

template <typename Real>
Var<Real> slice(Var<Real> x, int axis, std::int64_t start, std::int64_t length) {
  const Shape& xs = x.shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= xs.size() || start < 0 || length <= 0 ||
      start + length > xs[static_cast<std::size_t>(axis)])
    throw ShapeError("slice: range [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(xs));
  const AxisSplit sp = split_at(xs, axis);
  Shape os = xs;
  os[static_cast<std::size_t>(axis)] = length;
  Tensor<Real> out(os);
  const auto& xv = x.value();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.data() + (o * sp.axis + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  return x.tape->record("slice", std::move(out), {x}, [x, sp, start, length](Tape<Real>& t, const Tensor<Real>& g) {
    auto& gx = t.grad_slot(x);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      Real* dst = gx.data() + (o * sp.axis + start) * sp.inner;
      const Real* src = g.data() + o * length * sp.inner;
      for (std::int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return x.tape->record("sum", Tensor<Real>::scalar(s), {x}, [x](Tape<Real>& t, const Tensor<Real>& g) {
    const Real gv = g[0];
    for (auto& v : t.grad_slot(x).values()) v += gv;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  const Real n = static_cast<Real>(x.value().size());
  Real s = 0;
  for (Real v : x.value().values()) s += v;
  return x.tape->record("mean", Tensor<Real>::scalar(s / n), {x}, [x, n](Tape<Real>& t, const Tensor<Real>& g) {
    const Real gv = g[0] / n;
    for (auto& v : t.grad_slot(x).values()) v += gv;
  });
}

template <typename Real>
Var<Real> mse(Var<Real> a, Var<Real> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same("mse", av, bv);
  const Real n = static_cast<Real>(av.size());
  Real s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const Real d = av[i] - bv[i];
    s += d * d;
  }
  return a.tape->record("mse", Tensor<Real>::scalar(s / n), {a, b}, [a, b, n](Tape<Real>& t, const Tensor<Real>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const Real c = Real(2) * g[0] / n;
    if (t.requires_grad(a)) {
      auto& ga = t.grad_slot(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += c * (av[i] - bv[i]);
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= c * (av[i] - bv[i]);
    }
  });
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps) {
  const auto& xv = x.value();
  require_row("layer_norm", xv, gain.value());
  require_row("layer_norm", xv, bias.value());
  const std::int64_t d = xv.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(xv.size()) / d;
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<Real> out(xv.shape());
  Tensor<Real> xhat(xv.shape());
  std::vector<Real> rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real m = 0;
    for (std::int64_t j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<Real>(d);
    Real var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= static_cast<Real>(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const Real h = (xr[j] - m) * rs;
      xhat[static_cast<std::size_t>(r * d + j)] = h;
      out[static_cast<std::size_t>(r * d + j)] = h * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Real>& t, const Tensor<Real>& g) {
        const auto& gv = t.value(gain);
        Real* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
        Real* gg = t.requires_grad(gain) ? t.grad_slot(gain).data() : nullptr;
        Real* gb = t.requires_grad(bias) ? t.grad_slot(bias).data() : nullptr;
        std::vector<Real> dh(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
          const Real* gr = g.data() + r * d;
          const Real* hr = xhat.data() + r * d;
          Real mean_dh = 0, mean_dh_h = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * hr[j];
            if (gb) gb[j] += gr[j];
            dh[static_cast<std::size_t>(j)] = gr[j] * gv[static_cast<std::size_t>(j)];
            mean_dh += dh[static_cast<std::size_t>(j)];
            mean_dh_h += dh[static_cast<std::size_t>(j)] * hr[j];
          }
          if (!gx) continue;
          mean_dh /= static_cast<Real>(d);
          mean_dh_h /= static_cast<Real>(d);
          const Real rs = rstd[static_cast<std::size_t>(r)];
          for (std::int64_t j = 0; j < d; ++j)
            gx[r * d + j] += rs * (dh[static_cast<std::size_t>(j)] - mean_dh - hr[j] * mean_dh_h);
        }
      });
}

template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v) {
  const auto& qs = q.shape();
  if (qs.size() != 4 || k.shape() != qs || v.shape() != qs)
    throw ShapeError("attention: q/k/v must share shape [B,heads,S,dh], got " + shape_str(qs) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::int64_t bh = qs[0] * qs[1], S = qs[2], dh = qs[3];
  const Real inv = Real(1) / std::sqrt(static_cast<Real>(dh));
  Tensor<Real> out(qs);
  Tensor<Real> probs(Shape{bh, S, S});
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (std::int64_t i = 0; i < bh; ++i) {
    CMapMat<Real> Q(qv.data() + i * S * dh, S, dh), K(kv.data() + i * S * dh, S, dh), V(vv.data() + i * S * dh, S, dh);
    MapMat<Real> P(probs.data() + i * S * S, S, S);
    P.noalias() = (Q * K.transpose()) * inv;
    for (std::int64_t r = 0; r < S; ++r) {
      auto row = P.row(r);
      const Real mx = row.maxCoeff();
      row = (row.array() - mx).exp().matrix();
      row /= row.sum();
    }
    MapMat<Real>(out.data() + i * S * dh, S, dh).noalias() = P * V;
  }
  return q.tape->record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, bh, S, dh, inv, probs = std::move(probs)](Tape<Real>& t, const Tensor<Real>& g) {
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        Real* gq = t.requires_grad(q) ? t.grad_slot(q).data() : nullptr;
        Real* gk = t.requires_grad(k) ? t.grad_slot(k).data() : nullptr;
        Real* gv = t.requires_grad(v) ? t.grad_slot(v).data() : nullptr;
        Mat<Real> dP(S, S);
        for (std::int64_t i = 0; i < bh; ++i) {
          CMapMat<Real> Q(qv.data() + i * S * dh, S, dh), K(kv.data() + i * S * dh, S, dh),
              V(vv.data() + i * S * dh, S, dh), G(g.data() + i * S * dh, S, dh), P(probs.data() + i * S * S, S, S);
          if (gv) MapMat<Real>(gv + i * S * dh, S, dh).noalias() += P.transpose() * G;
          if (!gq && !gk) continue;
          dP.noalias() = G * V.transpose();
          for (std::int64_t r = 0; r < S; ++r) {
            const Real dot = dP.row(r).dot(P.row(r));
            dP.row(r) = P.row(r).cwiseProduct((dP.row(r).array() - dot).matrix());
          }
          if (gq) MapMat<Real>(gq + i * S * dh, S, dh).noalias() += (dP * K) * inv;
          if (gk) MapMat<Real>(gk + i * S * dh, S, dh).noalias() += (dP.transpose() * Q) * inv;
        }
      });
}

template <typename Real>
Var<Real> conv2d(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/padding");
  const std::int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0];
  const int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
  if (H + 2 * pad < kh || W + 2 * pad < kw) throw ShapeError("conv2d: kernel does not fit padded input " + shape_str(xs));
  const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  if (bias && bias->shape() != Shape{O}) throw ShapeError("conv2d: bias must have shape [" + std::to_string(O) + "]");
  const std::int64_t K = C * kh * kw, P = Ho * Wo;
  Tensor<Real> out(Shape{B, O, Ho, Wo});
  std::vector<Real> col(static_cast<std::size_t>(K * P));
  const auto& xv = x.value();
  CMapMat<Real> Wm(w.value().data(), O, K);
  for (std::int64_t b = 0; b < B; ++b) {
    im2col(xv.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    MapMat<Real> Y(out.data() + b * O * P, O, P);
    Y.noalias() = Wm * CMapMat<Real>(col.data(), K, P);
    if (bias) {
      const auto& bv = bias->value();
      for (std::int64_t o = 0; o < O; ++o) Y.row(o).array() += bv[static_cast<std::size_t>(o)];
    }
  }
  std::vector<Var<Real>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape->record("conv2d", std::move(out), inputs,
                        [=](Tape<Real>& t, const Tensor<Real>& g) {
                          const auto& xv = t.value(x);
                          CMapMat<Real> Wm(t.value(w).data(), O, K);
                          Real* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
                          Real* gw = t.requires_grad(w) ? t.grad_slot(w).data() : nullptr;
                          Real* gb = (bias && t.requires_grad(*bias)) ? t.grad_slot(*bias).data() : nullptr;
                          std::vector<Real> col(static_cast<std::size_t>(K * P));
                          Mat<Real> dcol;
                          for (std::int64_t b = 0; b < B; ++b) {
                            CMapMat<Real> G(g.data() + b * O * P, O, P);
                            if (gb)
                              for (std::int64_t o = 0; o < O; ++o) gb[o] += G.row(o).sum();
                            if (gw) {
                              im2col(xv.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
                              MapMat<Real>(gw, O, K).noalias() += G * CMapMat<Real>(col.data(), K, P).transpose();
                            }
                            if (gx) {
                              dcol.noalias() = Wm.transpose() * G;
                              col2im(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo, gx + b * C * H * W);
                            }
                          }
                        });
}

template <typename Real>
Var<Real> conv_transpose2d(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
    throw ShapeError("conv_transpose2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
  if (stride < 1 || pad < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
  const std::int64_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3], Cout = ws[1];
  const int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
  const std::int64_t Ho = (H - 1) * stride - 2 * pad + kh, Wo = (W - 1) * stride - 2 * pad + kw;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv_transpose2d: empty output for input " + shape_str(xs));
  if (bias && bias->shape() != Shape{Cout}) throw ShapeError("conv_transpose2d: bad bias shape");
  const std::int64_t K = Cout * kh * kw, P = H * W;
  Tensor<Real> out(Shape{B, Cout, Ho, Wo});
  Mat<Real> col;
  const auto& xv = x.value();
  CMapMat<Real> Wm(w.value().data(), Cin, K);
  for (std::int64_t b = 0; b < B; ++b) {
    col.noalias() = Wm.transpose() * CMapMat<Real>(xv.data() + b * Cin * P, Cin, P);
    Real* y = out.data() + b * Cout * Ho * Wo;
    col2im(col.data(), Cout, Ho, Wo, kh, kw, stride, pad, H, W, y);
    if (bias) {
      const auto& bv = bias->value();
      for (std::int64_t c = 0; c < Cout; ++c)
        for (std::int64_t i = 0; i < Ho * Wo; ++i) y[c * Ho * Wo + i] += bv[static_cast<std::size_t>(c)];
    }
  }
  std::vector<Var<Real>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape->record("conv_transpose2d", std::move(out), inputs, [=](Tape<Real>& t, const Tensor<Real>& g) {
    const auto& xv = t.value(x);
    CMapMat<Real> Wm(t.value(w).data(), Cin, K);
    Real* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
    Real* gw = t.requires_grad(w) ? t.grad_slot(w).data() : nullptr;
    Real* gb = (bias && t.requires_grad(*bias)) ? t.grad_slot(*bias).data() : nullptr;
    std::vector<Real> col(static_cast<std::size_t>(K * P));
    for (std::int64_t b = 0; b < B; ++b) {
      const Real* gy = g.data() + b * Cout * Ho * Wo;
      if (gb)
        for (std::int64_t c = 0; c < Cout; ++c)
          for (std::int64_t i = 0; i < Ho * Wo; ++i) gb[c] += gy[c * Ho * Wo + i];
      if (!gx && !gw) continue;
      im2col(gy, Cout, Ho, Wo, kh, kw, stride, pad, H, W, col.data());
      CMapMat<Real> Col(col.data(), K, P);
      if (gx) MapMat<Real>(gx + b * Cin * P, Cin, P).noalias() += Wm * Col;
      if (gw) MapMat<Real>(gw, Cin, K).noalias() += CMapMat<Real>(xv.data() + b * Cin * P, Cin, P) * Col.transpose();
    }
  });
}

#define ORBITKIT_INSTANTIATE_OPS(R)                                                                    \
  template Var<R> add(Var<R>, Var<R>);                                                                 \
  template Var<R> sub(Var<R>, Var<R>);                                                                 \
  template Var<R> mul(Var<R>, Var<R>);                                                                 \
  template Var<R> scale(Var<R>, R);                                                                    \
  template Var<R> add_scalar(Var<R>, R);                                                               \
  template Var<R> silu(Var<R>);                                                                        \
  template Var<R> add_rows(Var<R>, Var<R>);                                                            \
  template Var<R> mul_rows(Var<R>, Var<R>);                                                            \
  template Var<R> modulate_rows(Var<R>, Var<R>, Var<R>);                                               \
  template Var<R> adaln_modulate(Var<R>, Var<R>, Var<R>);                                              \
  template Var<R> matmul(Var<R>, Var<R>);                                                              \
  template Var<R> linear(Var<R>, Var<R>, std::optional<Var<R>>);                                       \
  template Var<R> reshape(Var<R>, Shape);                                                              \
  template Var<R> permute(Var<R>, std::vector<int>);                                                   \
  template Var<R> concat(const std::vector<Var<R>>&, int);                                             \
  template Var<R> slice(Var<R>, int, std::int64_t, std::int64_t);                                      \
  template Var<R> sum(Var<R>);                                                                         \
  template Var<R> mean(Var<R>);                                                                        \
  template Var<R> mse(Var<R>, Var<R>);                                                                 \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, R);                                               \
  template Var<R> attention(Var<R>, Var<R>, Var<R>);                                                   \
  template Var<R> conv2d(Var<R>, Var<R>, std::optional<Var<R>>, int, int);                             \
  template Var<R> conv_transpose2d(Var<R>, Var<R>, std::optional<Var<R>>, int, int);

ORBITKIT_INSTANTIATE_OPS(float)
ORBITKIT_INSTANTIATE_OPS(double)

}  // namespace ad

template <typename Real>
Tensor<Real> sinusoidal_embedding(std::span<const Real> positions, int dim, double max_period) {
  if (dim < 2 || dim % 2 != 0) throw ShapeError("sinusoidal_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  Tensor<Real> out(Shape{static_cast<std::int64_t>(positions.size()), dim});
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(max_period) * j / half);
      const double a = static_cast<double>(positions[i]) * freq;
      out[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] = static_cast<Real>(std::sin(a));
      out[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(half + j)] = static_cast<Real>(std::cos(a));
    }
  return out;
}

template Tensor<float> sinusoidal_embedding(std::span<const float>, int, double);
template Tensor<double> sinusoidal_embedding(std::span<const double>, int, double);

}  // namespace orbitkit
