#include "gramflow/student.hpp"

#include <cmath>
#include <numbers>

#include "gramflow/ops.hpp"
#include "gramflow/rng.hpp"

namespace gramflow {

AlphaSigma alpha_sigma(double t) {
  require(t >= 0.0 && t <= 1.0, "timestep must lie in [0, 1]");
  const double half_pi = std::numbers::pi / 2.0;
  return {std::cos(half_pi * t), std::sin(half_pi * t)};
}

NoisedLatent noise_latent(const Tensor& z, double t, RngStream& rng) {
  const auto [alpha, sigma] = alpha_sigma(t);
  NoisedLatent out{Tensor(z.dims()), Tensor(z.dims()), Tensor(z.dims())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double e = rng.normal();
    out.eps[i] = e;
    out.z_t[i] = alpha * z[i] + sigma * e;
    out.v[i] = alpha * e - sigma * z[i];
  }
  return out;
}

Tensor lora_effective(const Tensor& W_base, const Tensor& A, const Tensor& B,
                      std::size_t r, double alpha_lora) {
  require(W_base.rank() == 2 && A.rank() == 2 && B.rank() == 2,
          "lora_effective expects matrices");
  const std::size_t Cout = W_base.dim(0), Cin = W_base.dim(1);
  require(r >= 1 && A.dim(0) == r && B.dim(1) == r, "LoRA rank mismatch");
  require(A.dim(1) == Cin && B.dim(0) == Cout, "LoRA factor shape mismatch");
  const double scale = alpha_lora / static_cast<double>(r);

  Tensor W(W_base.dims());
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t i = 0; i < Cin; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += B[o * r + j] * A[j * Cin + i];
      W[o * Cin + i] = W_base[o * Cin + i] + scale * acc;
    }
  return W;
}

Tensor encode_latent(const Tensor& video, const LatentConfig& cfg) {
  require(video.rank() == 4, "video must be (N, H, W, C)");
  const std::size_t N = video.dim(0);
  require(cfg.temporal_stride >= 1 && (N - 1) % cfg.temporal_stride == 0,
          "clip length incompatible with the latent temporal stride");
  const std::size_t Tl = (N - 1) / cfg.temporal_stride + 1;

  // Select strided frames, then reuse the seeded patch projection.
  Tensor frames({Tl, video.dim(1), video.dim(2), video.dim(3)});
  const std::size_t fsz = video.size() / N;
  for (std::size_t t = 0; t < Tl; ++t) {
    const double* src = video.data() + (t * cfg.temporal_stride) * fsz;
    double* dst = frames.data() + t * fsz;
    for (std::size_t i = 0; i < fsz; ++i) dst[i] = src[i];
  }
  // The projection below matches frame_embed's generation contract; keeping a
  // separate seed keeps the latent space distinct from the teacher's.
  RngStream rng(cfg.seed);
  const std::size_t pd = cfg.patch * cfg.patch * video.dim(3);
  require(video.dim(1) % cfg.patch == 0 && video.dim(2) % cfg.patch == 0,
          "frame extents must be divisible by the latent patch size");
  const double scale = 1.0 / std::sqrt(static_cast<double>(pd));
  std::vector<double> proj(cfg.channels * pd);
  for (double& w : proj) w = rng.normal() * scale;

  const std::size_t gh = video.dim(1) / cfg.patch, gw = video.dim(2) / cfg.patch;
  Tensor out({Tl, gh, gw, cfg.channels});
  std::vector<double> pv(pd);
  for (std::size_t n = 0; n < Tl; ++n)
    for (std::size_t gi = 0; gi < gh; ++gi)
      for (std::size_t gj = 0; gj < gw; ++gj) {
        std::size_t idx = 0;
        for (std::size_t dy = 0; dy < cfg.patch; ++dy)
          for (std::size_t dx = 0; dx < cfg.patch; ++dx)
            for (std::size_t c = 0; c < video.dim(3); ++c)
              pv[idx++] = frames[frames.offset({n, gi * cfg.patch + dy,
                                                gj * cfg.patch + dx, c})];
        double* dst = out.data() + out.offset({n, gi, gj, 0});
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          const double* row = proj.data() + c * pd;
          double acc = 0.0;
          for (std::size_t j = 0; j < pd; ++j) acc += row[j] * pv[j];
          dst[c] = acc;
        }
      }
  return out;
}

namespace {

Tensor random_matrix(RngStream rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal() * scale;
  return m;
}

// dW_eff -> (dA, dB) for W_eff = W + (alpha/r) B A.
void lora_grads(const Tensor& dW_eff, const Tensor& A, const Tensor& B, std::size_t r,
                double alpha_lora, Tensor& dA, Tensor& dB) {
  const std::size_t Cout = dW_eff.dim(0), Cin = dW_eff.dim(1);
  const double scale = alpha_lora / static_cast<double>(r);
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < Cin; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < Cout; ++o) acc += B[o * r + j] * dW_eff[o * Cin + i];
      dA[j * Cin + i] += scale * acc;
    }
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < Cin; ++i) acc += dW_eff[o * Cin + i] * A[j * Cin + i];
      dB[o * r + j] += scale * acc;
    }
}

Tensor append_t_channel(const Tensor& z_t, double t) {
  const std::size_t C = z_t.dim(3);
  Tensor x({z_t.dim(0), z_t.dim(1), z_t.dim(2), C + 1});
  const std::size_t tokens = z_t.size() / C;
  for (std::size_t n = 0; n < tokens; ++n) {
    const double* src = z_t.data() + n * C;
    double* dst = x.data() + n * (C + 1);
    for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
    dst[C] = t;
  }
  return x;
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& config) : cfg(config) {
  const std::size_t Cz = cfg.channels, Ch = cfg.hidden, r = cfg.rank;
  require(Cz >= 1 && Ch >= 1 && r >= 1, "degenerate denoiser shape");
  RngStream root(cfg.seed);
  W0 = Param(random_matrix(root.split(0), Ch, Cz + 1,
                           1.0 / std::sqrt(static_cast<double>(Cz + 1))));
  b0 = Param(Tensor({Ch}));
  A0 = Param(random_matrix(root.split(1), r, Cz + 1,
                           1.0 / std::sqrt(static_cast<double>(Cz + 1))));
  B0 = Param(Tensor({Ch, r}));  // zero so the adapter starts transparent
  W1 = Param(random_matrix(root.split(2), Cz, Ch,
                           1.0 / std::sqrt(static_cast<double>(Ch))));
  b1 = Param(Tensor({Cz}));
  A1 = Param(random_matrix(root.split(3), r, Ch,
                           1.0 / std::sqrt(static_cast<double>(Ch))));
  B1 = Param(Tensor({Cz, r}));
}

std::vector<std::pair<std::string, Param*>> DenoiserModel::trainable() {
  return {{"denoiser.A0", &A0}, {"denoiser.B0", &B0},
          {"denoiser.A1", &A1}, {"denoiser.B1", &B1}};
}

std::vector<std::pair<std::string, Param*>> DenoiserModel::all_params() {
  return {{"denoiser.W0", &W0}, {"denoiser.b0", &b0}, {"denoiser.A0", &A0},
          {"denoiser.B0", &B0}, {"denoiser.W1", &W1}, {"denoiser.b1", &b1},
          {"denoiser.A1", &A1}, {"denoiser.B1", &B1}};
}

DenoiserFwd denoiser_forward(const DenoiserModel& m, const Tensor& z_t, double t) {
  require(z_t.rank() == 4 && z_t.dim(3) == m.cfg.channels, "latent shape mismatch");
  DenoiserFwd fwd;
  fwd.x = append_t_channel(z_t, t);
  const Tensor W0e = lora_effective(m.W0.value, m.A0.value, m.B0.value, m.cfg.rank,
                                    m.cfg.alpha_lora);
  fwd.h_pre = linear(fwd.x, W0e, m.b0.value);
  fwd.h = silu(fwd.h_pre);
  const Tensor W1e = lora_effective(m.W1.value, m.A1.value, m.B1.value, m.cfg.rank,
                                    m.cfg.alpha_lora);
  fwd.vhat = linear(fwd.h, W1e, m.b1.value);
  return fwd;
}

void denoiser_backward(DenoiserModel& m, const DenoiserFwd& fwd, const Tensor& dvhat,
                       const Tensor& dF_diff) {
  const Tensor W1e = lora_effective(m.W1.value, m.A1.value, m.B1.value, m.cfg.rank,
                                    m.cfg.alpha_lora);
  LinearGrads g1 = linear_backward(fwd.h, W1e, dvhat);
  lora_grads(g1.dweight, m.A1.value, m.B1.value, m.cfg.rank, m.cfg.alpha_lora,
             m.A1.grad, m.B1.grad);

  Tensor dh = std::move(g1.dx);
  if (!dF_diff.empty()) {
    require(dh.same_shape(dF_diff), "feature-tap gradient shape mismatch");
    dh.axpy(1.0, dF_diff);
  }
  const Tensor dh_pre = silu_backward(fwd.h_pre, dh);
  const Tensor W0e = lora_effective(m.W0.value, m.A0.value, m.B0.value, m.cfg.rank,
                                    m.cfg.alpha_lora);
  const LinearGrads g0 = linear_backward(fwd.x, W0e, dh_pre);
  lora_grads(g0.dweight, m.A0.value, m.B0.value, m.cfg.rank, m.cfg.alpha_lora,
             m.A0.grad, m.B0.grad);
}

ProjectorModel::ProjectorModel(const ProjectorConfig& config) : cfg(config) {
  const std::size_t widths[4] = {cfg.in_width, cfg.hidden1, cfg.hidden2, cfg.out_width};
  for (std::size_t i = 1; i < 4; ++i)
    require(widths[i] % cfg.gn_groups == 0,
            "group count must divide every normalized width");
  RngStream root(cfg.seed);
  // Small skip weights keep the residual trunk dominant at init.
  conv_w = Param(Tensor({3, 1, 1, cfg.in_width, cfg.in_width}));
  {
    RngStream s = root.split(100);
    const double scale = 0.3 / std::sqrt(3.0 * static_cast<double>(cfg.in_width));
    for (std::size_t i = 0; i < conv_w.value.size(); ++i)
      conv_w.value[i] = s.normal() * scale;
  }
  conv_b = Param(Tensor({cfg.in_width}));
  for (std::size_t l = 0; l < 3; ++l) {
    w[l] = Param(random_matrix(root.split(l), widths[l + 1], widths[l],
                               1.0 / std::sqrt(static_cast<double>(widths[l]))));
    b[l] = Param(Tensor({widths[l + 1]}));
    gamma[l] = Param(Tensor({widths[l + 1]}, 1.0));
    beta[l] = Param(Tensor({widths[l + 1]}));
  }
}

std::vector<std::pair<std::string, Param*>> ProjectorModel::trainable() {
  std::vector<std::pair<std::string, Param*>> out{{"projector.conv_w", &conv_w},
                                                  {"projector.conv_b", &conv_b}};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string p = "projector.mlp" + std::to_string(l);
    out.emplace_back(p + ".w", &w[l]);
    out.emplace_back(p + ".b", &b[l]);
    out.emplace_back(p + ".gamma", &gamma[l]);
    out.emplace_back(p + ".beta", &beta[l]);
  }
  return out;
}

ProjectorFwd projector_forward(const ProjectorModel& m, const Tensor& F_diff,
                               std::size_t target_t, std::size_t target_h,
                               std::size_t target_w) {
  require(F_diff.rank() == 4 && F_diff.dim(3) == m.cfg.in_width,
          "feature tap width mismatch");
  ProjectorFwd fwd;
  fwd.in_dims = F_diff.dims();
  fwd.trunk = interp_temporal(F_diff, m.cfg.factor);
  require(fwd.trunk.dim(0) == target_t, "temporal length mismatch after interpolation");

  Tensor skip = conv3d(fwd.trunk, m.conv_w.value, m.conv_b.value);
  fwd.x1 = fwd.trunk;
  fwd.x1.axpy(1.0, skip);

  const Tensor* x = &fwd.x1;
  for (std::size_t l = 0; l < 3; ++l) {
    fwd.lin[l] = linear(*x, m.w[l].value, m.b[l].value);
    fwd.gn[l] = group_norm(fwd.lin[l], m.gamma[l].value, m.beta[l].value,
                           m.cfg.gn_groups, m.cfg.gn_eps);
    fwd.act[l] = silu(fwd.gn[l]);
    x = &fwd.act[l];
  }
  fwd.out = resample_spatial(*x, target_h, target_w);
  return fwd;
}

Tensor projector_backward(ProjectorModel& m, const ProjectorFwd& fwd, const Tensor& dout) {
  Tensor dx = resample_spatial_backward(fwd.act[2].dims(), dout);
  for (std::size_t l = 3; l-- > 0;) {
    const Tensor dgn = silu_backward(fwd.gn[l], dx);
    GroupNormGrads gg = group_norm_backward(fwd.lin[l], m.gamma[l].value, m.cfg.gn_groups,
                                            m.cfg.gn_eps, dgn);
    m.gamma[l].grad.axpy(1.0, gg.dgamma);
    m.beta[l].grad.axpy(1.0, gg.dbeta);
    const Tensor& layer_in = l == 0 ? fwd.x1 : fwd.act[l - 1];
    LinearGrads lg = linear_backward(layer_in, m.w[l].value, gg.dx);
    m.w[l].grad.axpy(1.0, lg.dweight);
    m.b[l].grad.axpy(1.0, lg.dbias);
    dx = std::move(lg.dx);
  }
  // dx is now the gradient at x1 = trunk + conv(trunk).
  Conv3dGrads cg = conv3d_backward(fwd.trunk, m.conv_w.value, dx);
  m.conv_w.grad.axpy(1.0, cg.dweight);
  m.conv_b.grad.axpy(1.0, cg.dbias);
  cg.dx.axpy(1.0, dx);
  return interp_temporal_backward(fwd.in_dims, m.cfg.factor, cg.dx);
}

}  // namespace gramflow
