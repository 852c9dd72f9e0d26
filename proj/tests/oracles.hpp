#pragma once

// Reference implementations used as oracles by the test suite.  Everything
// here is written as plain nested loops straight from the definitions and
// shares no code with the library paths it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "gramflow/lgf.hpp"
#include "gramflow/tensor.hpp"

namespace oracle {

// Zero-padded same convolution, one output element at a time.
inline gramflow::Tensor conv3d(const gramflow::Tensor& x, const gramflow::Tensor& w,
                               const gramflow::Tensor& b) {
  const std::size_t T = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t kt = w.dim(0), kh = w.dim(1), kw = w.dim(2), Co = w.dim(4);
  gramflow::Tensor y({T, H, W, Co});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t co = 0; co < Co; ++co) {
          double acc = b[co];
          for (std::size_t a = 0; a < kt; ++a)
            for (std::size_t p = 0; p < kh; ++p)
              for (std::size_t q = 0; q < kw; ++q) {
                const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t + a) -
                                          static_cast<std::ptrdiff_t>(kt / 2);
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + p) -
                                          static_cast<std::ptrdiff_t>(kh / 2);
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + q) -
                                          static_cast<std::ptrdiff_t>(kw / 2);
                if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                for (std::size_t ci = 0; ci < Ci; ++ci)
                  acc += x.at({static_cast<std::size_t>(tt), static_cast<std::size_t>(ii),
                               static_cast<std::size_t>(jj), ci}) *
                         w.at({a, p, q, ci, co});
              }
          y.at({t, i, j, co}) = acc;
        }
  return y;
}

// Local Gram flow from the definition: slot kappa = (dh + r) * w + (dw + r),
// token frame s pairs with s+1 (forward) or, for backward-pair, the token
// lives at frame s+1 and looks back at frame s.  The inner dot product runs
// over channels in ascending order so results are bitwise comparable with any
// implementation using the same summation order.
struct LgfOracle {
  gramflow::Tensor values;
  std::vector<std::uint8_t> valid;
};

inline LgfOracle local_gram_flow(const gramflow::Tensor& f, std::size_t w, bool backward) {
  const std::size_t T = f.dim(0), H = f.dim(1), W = f.dim(2), C = f.dim(3);
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(w / 2);
  LgfOracle out;
  out.values = gramflow::Tensor({T - 1, H, W, w * w});
  out.valid.assign(out.values.size(), 0);
  for (std::size_t s = 0; s + 1 < T; ++s)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::ptrdiff_t dh = -r; dh <= r; ++dh)
          for (std::ptrdiff_t dw = -r; dw <= r; ++dw) {
            const std::ptrdiff_t ni = static_cast<std::ptrdiff_t>(i) + dh;
            const std::ptrdiff_t nj = static_cast<std::ptrdiff_t>(j) + dw;
            if (ni < 0 || ni >= static_cast<std::ptrdiff_t>(H) || nj < 0 ||
                nj >= static_cast<std::ptrdiff_t>(W))
              continue;
            const std::size_t tok_t = backward ? s + 1 : s;
            const std::size_t nbr_t = backward ? s : s + 1;
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              acc += f.at({tok_t, i, j, c}) *
                     f.at({nbr_t, static_cast<std::size_t>(ni),
                           static_cast<std::size_t>(nj), c});
            const std::size_t slot = static_cast<std::size_t>(dh + r) * w +
                                     static_cast<std::size_t>(dw + r);
            out.values.at({s, i, j, slot}) = acc;
            out.valid[out.values.offset({s, i, j, slot})] = 1;
          }
  return out;
}

// Central finite difference of a scalar function at every element of x;
// returns the worst relative error against the analytic gradient.
inline double fd_worst_rel_err(const std::function<double(const gramflow::Tensor&)>& f,
                               const gramflow::Tensor& x, const gramflow::Tensor& analytic,
                               double h = 1e-5) {
  gramflow::Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double dn = f(probe);
    probe[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace oracle
