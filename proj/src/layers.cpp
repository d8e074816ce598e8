#include "distill/layers.hpp"

#include <algorithm>
#include <cmath>

namespace distill {

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, pad, ho, wo;
};

// Output columns q for which input column q + s - pad lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t s, std::size_t pad, std::size_t w,
                                                       std::size_t wo) {
  const std::size_t lo = s < pad ? pad - s : 0;
  const std::size_t hi_raw = w + pad > s ? w + pad - s : 0;
  return {lo, std::min(wo, hi_raw)};
}

}  // namespace

Var conv2d(Var x, Var weights, Var bias, std::size_t padding) {
  const Tensor& in = x.value();
  const Tensor& wt = weights.value();
  const Tensor& b = bias.value();
  if (in.rank() != 4 || wt.rank() != 4 || b.rank() != 1 || wt.dim(1) != in.dim(1) || b.dim(0) != wt.dim(0)) {
    throw ShapeError("conv2d: input " + shape_string(in.shape()) + ", weights " + shape_string(wt.shape()) +
                     ", bias " + shape_string(b.shape()));
  }
  ConvGeometry g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), wt.dim(0), wt.dim(2), wt.dim(3), padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d: filter " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " larger than padded input " + shape_string(in.shape()));
  }
  g.ho = g.h + 2 * g.pad - g.kh + 1;
  g.wo = g.w + 2 * g.pad - g.kw + 1;

  Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* plane = &out[((n * g.cout) + co) * g.ho * g.wo];
      std::fill(plane, plane + g.ho * g.wo, b[co]);
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* src = &in[((n * g.cin) + ci) * g.h * g.w];
        for (std::size_t r = 0; r < g.kh; ++r) {
          const auto [plo, phi] = valid_range(r, g.pad, g.h, g.ho);
          for (std::size_t s = 0; s < g.kw; ++s) {
            const double wv = wt[((co * g.cin + ci) * g.kh + r) * g.kw + s];
            const auto [qlo, qhi] = valid_range(s, g.pad, g.w, g.wo);
            for (std::size_t p = plo; p < phi; ++p) {
              const double* srow = src + (p + r - g.pad) * g.w;
              double* orow = plane + p * g.wo;
              for (std::size_t q = qlo; q < qhi; ++q) orow[q] += wv * srow[q + s - g.pad];
            }
          }
        }
      }
    }
  }

  return x.tape->record(std::move(out), {x, weights, bias}, [g](const BackwardArgs& args) {
    const Tensor& in = *args.inputs[0];
    const Tensor& wt = *args.inputs[1];
    const Tensor& grad = args.grad;
    Tensor* gx = args.input_grads[0];
    Tensor* gw = args.input_grads[1];
    Tensor* gb = args.input_grads[2];
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* gplane = &grad[((n * g.cout) + co) * g.ho * g.wo];
        if (gb) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.ho * g.wo; ++i) acc += gplane[i];
          (*gb)[co] += acc;
        }
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          const std::size_t in_off = ((n * g.cin) + ci) * g.h * g.w;
          for (std::size_t r = 0; r < g.kh; ++r) {
            const auto [plo, phi] = valid_range(r, g.pad, g.h, g.ho);
            for (std::size_t s = 0; s < g.kw; ++s) {
              const std::size_t widx = ((co * g.cin + ci) * g.kh + r) * g.kw + s;
              const double wv = wt[widx];
              const auto [qlo, qhi] = valid_range(s, g.pad, g.w, g.wo);
              double wacc = 0.0;
              for (std::size_t p = plo; p < phi; ++p) {
                const std::size_t row_off = in_off + (p + r - g.pad) * g.w;
                const double* grow = gplane + p * g.wo;
                if (gw) {
                  const double* srow = &in[0] + row_off;
                  for (std::size_t q = qlo; q < qhi; ++q) wacc += grow[q] * srow[q + s - g.pad];
                }
                if (gx) {
                  double* xrow = &(*gx)[0] + row_off;
                  for (std::size_t q = qlo; q < qhi; ++q) xrow[q + s - g.pad] += wv * grow[q];
                }
              }
              if (gw) (*gw)[widx] += wacc;
            }
          }
        }
      }
    }
  });
}

Var maxpool2x2(Var x) {
  const Tensor& in = x.value();
  if (in.rank() != 4) throw ShapeError("maxpool2x2 expects [N,C,H,W], got " + shape_string(in.shape()));
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2x2 needs H,W >= 2, got " + shape_string(in.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out(Shape{n, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t p = 0; p < ho; ++p) {
      for (std::size_t q = 0; q < wo; ++q) {
        const std::size_t cand[4] = {base + 2 * p * w + 2 * q, base + 2 * p * w + 2 * q + 1,
                                     base + (2 * p + 1) * w + 2 * q, base + (2 * p + 1) * w + 2 * q + 1};
        std::size_t best = 0;
        for (std::size_t k = 1; k < 4; ++k) {
          if (in[cand[k]] > in[cand[best]]) best = k;
        }
        note_branch(best);
        const std::size_t o = (plane * ho + p) * wo + q;
        out[o] = in[cand[best]];
        argmax[o] = cand[best];
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [argmax = std::move(argmax)](const BackwardArgs& args) {
    Tensor& gx = *args.input_grads[0];
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += args.grad[o];
  });
}

Var linear(Var x, Var weights, Var bias) {
  const Tensor& in = x.value();
  const Tensor& wt = weights.value();
  const Tensor& b = bias.value();
  if (in.rank() != 2 || wt.rank() != 2 || b.rank() != 1 || wt.dim(1) != in.dim(1) || b.dim(0) != wt.dim(0)) {
    throw ShapeError("linear: input " + shape_string(in.shape()) + ", weights " + shape_string(wt.shape()) +
                     ", bias " + shape_string(b.shape()));
  }
  const std::size_t n = in.dim(0), fin = in.dim(1), fout = wt.dim(0);
  Tensor out(Shape{n, fout});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = &in[i * fin];
    for (std::size_t o = 0; o < fout; ++o) {
      const double* wr = &wt[o * fin];
      double acc = b[o];
      for (std::size_t k = 0; k < fin; ++k) acc += wr[k] * xr[k];
      out[i * fout + o] = acc;
    }
  }
  return x.tape->record(std::move(out), {x, weights, bias}, [n, fin, fout](const BackwardArgs& args) {
    const Tensor& in = *args.inputs[0];
    const Tensor& wt = *args.inputs[1];
    const Tensor& g = args.grad;
    if (auto* gx = args.input_grads[0]) {
      for (std::size_t i = 0; i < n; ++i) {
        double* gxr = &(*gx)[i * fin];
        for (std::size_t o = 0; o < fout; ++o) {
          const double go = g[i * fout + o];
          const double* wr = &wt[o * fin];
          for (std::size_t k = 0; k < fin; ++k) gxr[k] += go * wr[k];
        }
      }
    }
    if (auto* gw = args.input_grads[1]) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* xr = &in[i * fin];
        for (std::size_t o = 0; o < fout; ++o) {
          const double go = g[i * fout + o];
          double* gwr = &(*gw)[o * fin];
          for (std::size_t k = 0; k < fin; ++k) gwr[k] += go * xr[k];
        }
      }
    }
    if (auto* gb = args.input_grads[2]) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < fout; ++o) (*gb)[o] += g[i * fout + o];
    }
  });
}

namespace {

struct NormGeometry {
  std::size_t n, c, spatial;
};

NormGeometry norm_geometry(const Tensor& in, const Tensor& gamma, const Tensor& beta) {
  if ((in.rank() != 4 && in.rank() != 2) || gamma.rank() != 1 || beta.shape() != gamma.shape() ||
      in.dim(1) != gamma.dim(0)) {
    throw ShapeError("batchnorm: input " + shape_string(in.shape()) + ", gamma " + shape_string(gamma.shape()));
  }
  const std::size_t spatial = in.rank() == 4 ? in.dim(2) * in.dim(3) : 1;
  return {in.dim(0), in.dim(1), spatial};
}

inline std::size_t offset(const NormGeometry& g, std::size_t n, std::size_t c) {
  return (n * g.c + c) * g.spatial;
}

}  // namespace

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, ChannelStats* stats) {
  const Tensor& in = x.value();
  const NormGeometry g = norm_geometry(in, gamma.value(), beta.value());
  const std::size_t count = g.n * g.spatial;
  if (count < 2) {
    throw ShapeError("batchnorm in training mode needs at least 2 values per channel, got " + std::to_string(count));
  }
  Tensor mean(Shape{g.c}), var(Shape{g.c}), xhat(in.shape()), out(in.shape());
  for (std::size_t c = 0; c < g.c; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t i = 0; i < g.spatial; ++i) s += in[offset(g, n, c) + i];
    const double mu = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t i = 0; i < g.spatial; ++i) {
        const double d = in[offset(g, n, c) + i] - mu;
        ss += d * d;
      }
    mean[c] = mu;
    var[c] = ss / static_cast<double>(count);
    const double inv_std = 1.0 / std::sqrt(var[c] + eps);
    const double gm = gamma.value()[c], bt = beta.value()[c];
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t i = 0; i < g.spatial; ++i) {
        const std::size_t k = offset(g, n, c) + i;
        xhat[k] = (in[k] - mu) * inv_std;
        out[k] = gm * xhat[k] + bt;
      }
  }
  if (stats) *stats = ChannelStats{mean, var, count};

  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [g, count, eps, var = std::move(var), xhat = std::move(xhat)](const BackwardArgs& args) {
        const Tensor& gm = *args.inputs[1];
        const Tensor& dy = args.grad;
        const double m = static_cast<double>(count);
        for (std::size_t c = 0; c < g.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t i = 0; i < g.spatial; ++i) {
              const std::size_t k = offset(g, n, c) + i;
              sum_dy += dy[k];
              sum_dy_xhat += dy[k] * xhat[k];
            }
          if (auto* gg = args.input_grads[1]) (*gg)[c] += sum_dy_xhat;
          if (auto* gb = args.input_grads[2]) (*gb)[c] += sum_dy;
          if (auto* gx = args.input_grads[0]) {
            const double inv_std = 1.0 / std::sqrt(var[c] + eps);
            const double coef = gm[c] * inv_std / m;
            for (std::size_t n = 0; n < g.n; ++n)
              for (std::size_t i = 0; i < g.spatial; ++i) {
                const std::size_t k = offset(g, n, c) + i;
                (*gx)[k] += coef * (m * dy[k] - sum_dy - xhat[k] * sum_dy_xhat);
              }
          }
        }
      });
}

Var batchnorm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, double eps) {
  const Tensor& in = x.value();
  const NormGeometry g = norm_geometry(in, gamma.value(), beta.value());
  if (running_mean.shape() != gamma.value().shape() || running_var.shape() != gamma.value().shape()) {
    throw ShapeError("batchnorm: running statistics do not match channel count");
  }
  Tensor inv_std(Shape{g.c}), xhat(in.shape()), out(in.shape());
  for (std::size_t c = 0; c < g.c; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t i = 0; i < g.spatial; ++i) {
        const std::size_t k = offset(g, n, c) + i;
        xhat[k] = (in[k] - running_mean[c]) * inv_std[c];
        out[k] = gamma.value()[c] * xhat[k] + beta.value()[c];
      }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [g, inv_std = std::move(inv_std), xhat = std::move(xhat)](const BackwardArgs& args) {
                          const Tensor& gm = *args.inputs[1];
                          const Tensor& dy = args.grad;
                          for (std::size_t n = 0; n < g.n; ++n)
                            for (std::size_t c = 0; c < g.c; ++c)
                              for (std::size_t i = 0; i < g.spatial; ++i) {
                                const std::size_t k = offset(g, n, c) + i;
                                if (auto* gx = args.input_grads[0]) (*gx)[k] += dy[k] * gm[c] * inv_std[c];
                                if (auto* gg = args.input_grads[1]) (*gg)[c] += dy[k] * xhat[k];
                                if (auto* gb = args.input_grads[2]) (*gb)[c] += dy[k];
                              }
                        });
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor mask(x.value().shape());
  for (auto& m : mask.data()) m = uniform(rng) < rate ? 0.0 : keep_scale;
  return mul(x, x.tape->constant(std::move(mask)));
}

}  // namespace distill
