#include "gramflow/ops.hpp"

#include <cmath>

namespace gramflow {

namespace {

void check_feature_map(const Tensor& x, const char* name) {
  require(x.rank() == 4, std::string(name) + " must be (T, H, W, C)");
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_feature_map(x, "conv3d input");
  require(weight.rank() == 5, "conv3d weight must be (kt, kh, kw, Cin, Cout)");
  const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t kt = weight.dim(0), kh = weight.dim(1), kw = weight.dim(2);
  const std::size_t Cout = weight.dim(4);
  require(weight.dim(3) == Cin, "conv3d weight Cin mismatch");
  require(kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1, "conv3d kernel extents must be odd");
  // Same padding adds k-1 zeros per axis, so an odd kernel always fits the
  // padded input; no extent check can fire for extents >= 1.
  require(bias.rank() == 1 && bias.dim(0) == Cout, "conv3d bias must be (Cout)");
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(kt / 2);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);

  Tensor y({T, H, W, Cout});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        double* out = y.data() + y.offset({t, h, w, 0});
        for (std::size_t co = 0; co < Cout; ++co) out[co] = bias[co];
        for (std::size_t dt = 0; dt < kt; ++dt) {
          const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + dt) - pt;
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
          for (std::size_t dh = 0; dh < kh; ++dh) {
            const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dh) - ph;
            if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dw = 0; dw < kw; ++dw) {
              const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dw) - pw;
              if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(W)) continue;
              const double* src = x.data() + x.offset({static_cast<std::size_t>(st),
                                                       static_cast<std::size_t>(sh),
                                                       static_cast<std::size_t>(sw), 0});
              const double* wp = weight.data() + weight.offset({dt, dh, dw, 0, 0});
              for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t co = 0; co < Cout; ++co)
                  out[co] += src[ci] * wp[ci * Cout + co];
            }
          }
        }
      }
  return y;
}

Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy) {
  const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t kt = weight.dim(0), kh = weight.dim(1), kw = weight.dim(2);
  const std::size_t Cout = weight.dim(4);
  require(dy.rank() == 4 && dy.dim(0) == T && dy.dim(1) == H && dy.dim(2) == W &&
              dy.dim(3) == Cout,
          "conv3d_backward dy shape mismatch");
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(kt / 2);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);

  Conv3dGrads g{Tensor(x.dims()), Tensor(weight.dims()), Tensor({Cout})};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const double* dout = dy.data() + dy.offset({t, h, w, 0});
        for (std::size_t co = 0; co < Cout; ++co) g.dbias[co] += dout[co];
        for (std::size_t dt = 0; dt < kt; ++dt) {
          const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + dt) - pt;
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(T)) continue;
          for (std::size_t dh = 0; dh < kh; ++dh) {
            const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h + dh) - ph;
            if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t dw = 0; dw < kw; ++dw) {
              const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w + dw) - pw;
              if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t src_off = x.offset({static_cast<std::size_t>(st),
                                                    static_cast<std::size_t>(sh),
                                                    static_cast<std::size_t>(sw), 0});
              const double* src = x.data() + src_off;
              double* dsrc = g.dx.data() + src_off;
              const std::size_t w_off = weight.offset({dt, dh, dw, 0, 0});
              const double* wp = weight.data() + w_off;
              double* dwp = g.dweight.data() + w_off;
              for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t co = 0; co < Cout; ++co) {
                  dsrc[ci] += wp[ci * Cout + co] * dout[co];
                  dwp[ci * Cout + co] += src[ci] * dout[co];
                }
            }
          }
        }
      }
  return g;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::size_t groups, double eps) {
  require(x.rank() >= 1, "group_norm input must have a channel axis");
  const std::size_t C = x.dim(x.rank() - 1);
  require(groups >= 1 && C % groups == 0, "group count must divide channels");
  require(gamma.rank() == 1 && gamma.dim(0) == C, "gamma must be (C)");
  require(beta.rank() == 1 && beta.dim(0) == C, "beta must be (C)");
  require(eps > 0.0, "eps must be positive");
  const std::size_t m = C / groups;
  const std::size_t tokens = x.size() / C;

  Tensor y(x.dims());
  for (std::size_t n = 0; n < tokens; ++n) {
    const double* xv = x.data() + n * C;
    double* yv = y.data() + n * C;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t c0 = g * m;
      double mean = 0.0;
      for (std::size_t c = 0; c < m; ++c) mean += xv[c0 + c];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double d = xv[c0 + c] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t cc = c0 + c;
        yv[cc] = gamma[cc] * (xv[cc] - mean) * inv + beta[cc];
      }
    }
  }
  return y;
}

GroupNormGrads group_norm_backward(const Tensor& x, const Tensor& gamma,
                                   std::size_t groups, double eps, const Tensor& dy) {
  require(x.same_shape(dy), "group_norm_backward dy shape mismatch");
  const std::size_t C = x.dim(x.rank() - 1);
  const std::size_t m = C / groups;
  const std::size_t tokens = x.size() / C;

  GroupNormGrads g{Tensor(x.dims()), Tensor({C}), Tensor({C})};
  for (std::size_t n = 0; n < tokens; ++n) {
    const double* xv = x.data() + n * C;
    const double* dyv = dy.data() + n * C;
    double* dxv = g.dx.data() + n * C;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t c0 = gi * m;
      const double fm = static_cast<double>(m);
      double mean = 0.0;
      for (std::size_t c = 0; c < m; ++c) mean += xv[c0 + c];
      mean /= fm;
      double var = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const double d = xv[c0 + c] - mean;
        var += d * d;
      }
      var /= fm;
      const double inv = 1.0 / std::sqrt(var + eps);

      // dxhat = dy * gamma; reduce it and dxhat·(x-mean) over the group, then
      // redistribute through the mean/variance terms.
      double sum_dxh = 0.0;
      double sum_dxh_xm = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t cc = c0 + c;
        const double xm = xv[cc] - mean;
        const double xhat = xm * inv;
        const double dxh = dyv[cc] * gamma[cc];
        g.dgamma[cc] += dyv[cc] * xhat;
        g.dbeta[cc] += dyv[cc];
        sum_dxh += dxh;
        sum_dxh_xm += dxh * xm;
      }
      const double dvar = sum_dxh_xm * (-0.5) * inv * inv * inv;
      // The variance's dependence on the mean contributes a factor of
      // sum(x - mean), which is identically zero, so dmean keeps one term.
      const double dmean = -inv * sum_dxh;
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t cc = c0 + c;
        const double xm = xv[cc] - mean;
        const double dxh = dyv[cc] * gamma[cc];
        dxv[cc] = dxh * inv + dvar * 2.0 * xm / fm + dmean / fm;
      }
    }
  }
  return g;
}

Tensor silu(const Tensor& x) {
  Tensor y(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  require(x.same_shape(dy), "silu_backward dy shape mismatch");
  Tensor dx(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (1.0 + x[i] * (1.0 - s));
  }
  return dx;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() >= 1, "linear input must have a channel axis");
  require(weight.rank() == 2, "linear weight must be (Cout, Cin)");
  const std::size_t Cin = x.dim(x.rank() - 1);
  const std::size_t Cout = weight.dim(0);
  require(weight.dim(1) == Cin, "linear weight Cin mismatch");
  require(bias.rank() == 1 && bias.dim(0) == Cout, "linear bias must be (Cout)");
  const std::size_t n = x.size() / Cin;

  Shape out_dims = x.dims();
  out_dims.back() = Cout;
  Tensor y(out_dims);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xv = x.data() + i * Cin;
    double* yv = y.data() + i * Cout;
    for (std::size_t co = 0; co < Cout; ++co) {
      double acc = bias[co];
      const double* wv = weight.data() + co * Cin;
      for (std::size_t ci = 0; ci < Cin; ++ci) acc += wv[ci] * xv[ci];
      yv[co] = acc;
    }
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy) {
  const std::size_t Cin = x.dim(x.rank() - 1);
  const std::size_t Cout = weight.dim(0);
  require(dy.rank() == x.rank() && dy.dim(dy.rank() - 1) == Cout &&
              dy.size() / Cout == x.size() / Cin,
          "linear_backward dy shape mismatch");
  const std::size_t n = x.size() / Cin;

  LinearGrads g{Tensor(x.dims()), Tensor(weight.dims()), Tensor({Cout})};
  for (std::size_t i = 0; i < n; ++i) {
    const double* xv = x.data() + i * Cin;
    const double* dyv = dy.data() + i * Cout;
    double* dxv = g.dx.data() + i * Cin;
    for (std::size_t co = 0; co < Cout; ++co) {
      const double d = dyv[co];
      g.dbias[co] += d;
      const double* wv = weight.data() + co * Cin;
      double* dwv = g.dweight.data() + co * Cin;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        dxv[ci] += wv[ci] * d;
        dwv[ci] += xv[ci] * d;
      }
    }
  }
  return g;
}

Tensor interp_temporal(const Tensor& x, std::size_t factor) {
  require(x.rank() >= 1, "interp_temporal input must have a leading time axis");
  require(factor >= 1, "interpolation factor must be >= 1");
  const std::size_t T = x.dim(0);
  require(T >= 2 || factor == 1, "need at least 2 frames to interpolate");
  const std::size_t T2 = factor * (T - 1) + 1;
  const std::size_t frame = x.size() / T;

  Shape out_dims = x.dims();
  out_dims[0] = T2;
  Tensor y(out_dims);
  for (std::size_t t2 = 0; t2 < T2; ++t2) {
    const std::size_t t0 = t2 / factor;
    const std::size_t r = t2 % factor;
    double* out = y.data() + t2 * frame;
    const double* a = x.data() + t0 * frame;
    if (r == 0) {
      for (std::size_t i = 0; i < frame; ++i) out[i] = a[i];
    } else {
      const double f = static_cast<double>(r) / static_cast<double>(factor);
      const double* b = a + frame;
      for (std::size_t i = 0; i < frame; ++i) out[i] = (1.0 - f) * a[i] + f * b[i];
    }
  }
  return y;
}

Tensor interp_temporal_backward(const Shape& x_dims, std::size_t factor, const Tensor& dy) {
  require(!x_dims.empty(), "interp_temporal input must have a leading time axis");
  const std::size_t T = x_dims[0];
  const std::size_t T2 = factor * (T - 1) + 1;
  Shape want = x_dims;
  want[0] = T2;
  require(dy.dims() == want, "interp_temporal_backward dy shape mismatch");
  const std::size_t frame = dy.size() / T2;

  Tensor dx(x_dims);
  for (std::size_t t2 = 0; t2 < T2; ++t2) {
    const std::size_t t0 = t2 / factor;
    const std::size_t r = t2 % factor;
    const double* dout = dy.data() + t2 * frame;
    double* da = dx.data() + t0 * frame;
    if (r == 0) {
      for (std::size_t i = 0; i < frame; ++i) da[i] += dout[i];
    } else {
      const double f = static_cast<double>(r) / static_cast<double>(factor);
      double* db = da + frame;
      for (std::size_t i = 0; i < frame; ++i) {
        da[i] += (1.0 - f) * dout[i];
        db[i] += f * dout[i];
      }
    }
  }
  return dx;
}

namespace {

struct Lerp {
  std::size_t i0, i1;
  double frac;
};

Lerp axis_lerp(std::size_t out_i, std::size_t in_n, std::size_t out_n) {
  if (out_n == 1 || in_n == 1) return {0, 0, 0.0};
  const double src = static_cast<double>(out_i) * static_cast<double>(in_n - 1) /
                     static_cast<double>(out_n - 1);
  std::size_t i0 = static_cast<std::size_t>(src);
  if (i0 >= in_n - 1) i0 = in_n - 2;
  return {i0, i0 + 1, src - static_cast<double>(i0)};
}

}  // namespace

Tensor resample_spatial(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  check_feature_map(x, "resample_spatial input");
  require(out_h >= 1 && out_w >= 1, "resample target extents must be >= 1");
  const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (out_h == H && out_w == W) {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
    return y;
  }

  Tensor y({T, out_h, out_w, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < out_h; ++h) {
      const Lerp lh = axis_lerp(h, H, out_h);
      for (std::size_t w = 0; w < out_w; ++w) {
        const Lerp lw = axis_lerp(w, W, out_w);
        const double* p00 = x.data() + x.offset({t, lh.i0, lw.i0, 0});
        const double* p01 = x.data() + x.offset({t, lh.i0, lw.i1, 0});
        const double* p10 = x.data() + x.offset({t, lh.i1, lw.i0, 0});
        const double* p11 = x.data() + x.offset({t, lh.i1, lw.i1, 0});
        double* out = y.data() + y.offset({t, h, w, 0});
        const double w00 = (1.0 - lh.frac) * (1.0 - lw.frac);
        const double w01 = (1.0 - lh.frac) * lw.frac;
        const double w10 = lh.frac * (1.0 - lw.frac);
        const double w11 = lh.frac * lw.frac;
        for (std::size_t c = 0; c < C; ++c)
          out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  return y;
}

Tensor resample_spatial_backward(const Shape& x_dims, const Tensor& dy) {
  require(x_dims.size() == 4, "resample_spatial input must be (T, H, W, C)");
  const std::size_t T = x_dims[0], H = x_dims[1], W = x_dims[2], C = x_dims[3];
  require(dy.rank() == 4 && dy.dim(0) == T && dy.dim(3) == C,
          "resample_spatial_backward dy shape mismatch");
  const std::size_t out_h = dy.dim(1), out_w = dy.dim(2);

  Tensor dx(x_dims);
  if (out_h == H && out_w == W) {
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i];
    return dx;
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < out_h; ++h) {
      const Lerp lh = axis_lerp(h, H, out_h);
      for (std::size_t w = 0; w < out_w; ++w) {
        const Lerp lw = axis_lerp(w, W, out_w);
        const double* dout = dy.data() + dy.offset({t, h, w, 0});
        double* p00 = dx.data() + dx.offset({t, lh.i0, lw.i0, 0});
        double* p01 = dx.data() + dx.offset({t, lh.i0, lw.i1, 0});
        double* p10 = dx.data() + dx.offset({t, lh.i1, lw.i0, 0});
        double* p11 = dx.data() + dx.offset({t, lh.i1, lw.i1, 0});
        const double w00 = (1.0 - lh.frac) * (1.0 - lw.frac);
        const double w01 = (1.0 - lh.frac) * lw.frac;
        const double w10 = lh.frac * (1.0 - lw.frac);
        const double w11 = lh.frac * lw.frac;
        for (std::size_t c = 0; c < C; ++c) {
          p00[c] += w00 * dout[c];
          p01[c] += w01 * dout[c];
          p10[c] += w10 * dout[c];
          p11[c] += w11 * dout[c];
        }
      }
    }
  return dx;
}

}  // namespace gramflow
