#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gramflow/lgf.hpp"
#include "gramflow/student.hpp"
#include "gramflow/tensor.hpp"

namespace gramflow {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t step = 0;
};

// Decoupled-weight-decay Adam with bias correction; returns false (leaving
// param and state untouched) when the gradient has a non-finite entry.
bool adamw_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                const AdamConfig& cfg);

enum class ScheduleKind { warmup_linear_constant, warmup_cosine };

std::string schedule_kind_name(ScheduleKind k);
ScheduleKind schedule_kind_from_name(const std::string& name);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::warmup_linear_constant;
  std::size_t warmup = 0;
  double peak = 1e-4;
  double min_lr = 1e-4;
  std::size_t total = 0;
};

// Linear 0 -> peak over the warmup, then constant at peak or cosine
// peak -> min over the remaining steps; exact at the boundary steps.
double lr_at(std::size_t step, const ScheduleSpec& spec);

// Joint global-norm clipping; returns the pre-clip norm.
double clip_grads(const std::vector<Tensor*>& grads, double max_norm);

struct EvalSpec {
  double k = 0.5;
  FusionMode mode = FusionMode::lgf_space;
  std::size_t samples = 8;
};

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t steps = 2000;
  std::size_t batch = 2;
  std::size_t grad_accum = 2;
  double lambda = 0.5;
  double k = 0.5;
  FusionMode fusion_mode = FusionMode::lgf_space;
  double temperature = 0.1;
  std::size_t window = 7;
  double clip_norm = 1.0;
  double t_min = 0.02;
  double t_max = 0.98;
  std::filesystem::path cache_dir;
  std::filesystem::path eval_cache_dir;  // optional held-out clips
  std::filesystem::path out_dir;
  EvalSpec eval;
  ScheduleSpec lora_schedule{ScheduleKind::warmup_linear_constant, 200, 1e-4, 1e-4, 0};
  ScheduleSpec proj_schedule{ScheduleKind::warmup_cosine, 150, 5e-4, 1e-5, 0};
  AdamConfig adam;
  LatentConfig latent;
  DenoiserConfig denoiser;
  ProjectorConfig projector;
};

TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainReport {
  std::vector<std::string> csv_rows;  // header + one row per logged step
  std::size_t steps = 0;
  double initial_L_feat = 0.0;  // row 0
  double final_L_feat = 0.0;    // last row
  double heldout_initial_L_feat = 0.0;
  double heldout_final_L_feat = 0.0;
  bool has_heldout = false;
  bool feature_loss_inactive = false;
  std::size_t skipped_updates = 0;
  std::filesystem::path csv_path;
  std::filesystem::path checkpoint_dir;
};

TrainReport train_loop(const TrainConfig& cfg);

// Checkpoint directory: one LGFT file per parameter plus manifest.json.
struct Checkpoint {
  std::map<std::string, Tensor> params;
  std::size_t global_step = 0;
  std::size_t lora_rank = 0;
  double lora_alpha = 0.0;
  std::string lora_schedule_id;
  std::string proj_schedule_id;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace gramflow
