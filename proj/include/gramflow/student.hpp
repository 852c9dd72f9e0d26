#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gramflow/rng.hpp"
#include "gramflow/tensor.hpp"

namespace gramflow {

// Variance-preserving cosine schedule: alpha = cos(pi t / 2), sigma = sin(pi t / 2).
struct AlphaSigma {
  double alpha;
  double sigma;
};
AlphaSigma alpha_sigma(double t);

struct NoisedLatent {
  Tensor z_t;
  Tensor eps;
  Tensor v;  // alpha * eps - sigma * z
};
// z_t = alpha z + sigma eps with eps drawn elementwise from rng; the rotation
// is invertible: z = alpha z_t - sigma v, eps = sigma z_t + alpha v.
NoisedLatent noise_latent(const Tensor& z, double t, RngStream& rng);

// W_base + (alpha_lora / r) * B * A with A: (r, Cin), B: (Cout, r).
Tensor lora_effective(const Tensor& W_base, const Tensor& A, const Tensor& B,
                      std::size_t r, double alpha_lora);

struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(value.dims()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Frozen seeded patch projection standing in for a latent encoder: frames at
// `temporal_stride` spacing, patch-projected to `channels`.
struct LatentConfig {
  std::size_t patch = 4;
  std::size_t channels = 16;
  std::size_t temporal_stride = 4;
  std::uint64_t seed = 1234;
};
Tensor encode_latent(const Tensor& video, const LatentConfig& cfg);

// Two per-token linear layers with a SiLU between; the post-SiLU hidden is
// the feature tap.  The timestep enters as one extra input channel.  Base
// weights stay frozen; only the LoRA factors train.
struct DenoiserConfig {
  std::size_t channels = 16;  // latent channel count
  std::size_t hidden = 16;
  std::size_t rank = 4;
  double alpha_lora = 2.0;
  std::uint64_t seed = 7;
};

struct DenoiserModel {
  DenoiserConfig cfg;
  Param W0, b0, A0, B0;  // (Cz+1) -> hidden
  Param W1, b1, A1, B1;  // hidden -> Cz

  explicit DenoiserModel(const DenoiserConfig& config);
  std::vector<std::pair<std::string, Param*>> trainable();
  std::vector<std::pair<std::string, Param*>> all_params();
};

struct DenoiserFwd {
  Tensor x;      // input with the timestep channel appended
  Tensor h_pre;  // pre-activation hidden
  Tensor h;      // post-SiLU hidden: the F_diff tap
  Tensor vhat;
};

DenoiserFwd denoiser_forward(const DenoiserModel& m, const Tensor& z_t, double t);
// Accumulates LoRA gradients from both loss paths; dF_diff may be empty.
void denoiser_backward(DenoiserModel& m, const DenoiserFwd& fwd, const Tensor& dvhat,
                       const Tensor& dF_diff);

// interp(x4) with a conv3d(3,1,1) residual skip, three linear/GroupNorm/SiLU
// blocks, then an align-corners resample onto the teacher grid.
struct ProjectorConfig {
  std::size_t factor = 4;
  std::size_t in_width = 16;
  std::size_t hidden1 = 12;
  std::size_t hidden2 = 8;
  std::size_t out_width = 8;  // overridden to the teacher channel count
  std::size_t gn_groups = 4;
  double gn_eps = 1e-5;
  std::uint64_t seed = 11;
};

struct ProjectorModel {
  ProjectorConfig cfg;
  Param conv_w;  // (3, 1, 1, Cd, Cd)
  Param conv_b;
  Param w[3], b[3], gamma[3], beta[3];

  explicit ProjectorModel(const ProjectorConfig& config);
  std::vector<std::pair<std::string, Param*>> trainable();
};

struct ProjectorFwd {
  Shape in_dims;
  Tensor trunk;    // after temporal interpolation
  Tensor x1;       // trunk + skip conv
  Tensor lin[3];   // linear outputs
  Tensor gn[3];    // group-norm outputs
  Tensor act[3];   // SiLU outputs
  Tensor out;      // after spatial resample
};

ProjectorFwd projector_forward(const ProjectorModel& m, const Tensor& F_diff,
                               std::size_t target_t, std::size_t target_h,
                               std::size_t target_w);
// Returns d loss / d F_diff and accumulates all projector parameter grads.
Tensor projector_backward(ProjectorModel& m, const ProjectorFwd& fwd, const Tensor& dout);

}  // namespace gramflow
