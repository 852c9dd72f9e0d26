#include "gramflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "gramflow/io.hpp"
#include "gramflow/teacher.hpp"
#include "json.hpp"

namespace gramflow {

bool adamw_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                const AdamConfig& cfg) {
  require(param.same_shape(grad), "gradient shape mismatch");
  if (state.m.empty()) {
    state.m = Tensor(param.dims());
    state.v = Tensor(param.dims());
  }
  require(state.m.same_shape(param), "optimizer state shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i])) return false;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param[i]);
  }
  return true;
}

std::string schedule_kind_name(ScheduleKind k) {
  return k == ScheduleKind::warmup_linear_constant ? "warmup-linear-constant"
                                                   : "warmup-cosine";
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
  if (name == "warmup-linear-constant") return ScheduleKind::warmup_linear_constant;
  if (name == "warmup-cosine") return ScheduleKind::warmup_cosine;
  throw SchemaError("unknown schedule kind '" + name + "'");
}

double lr_at(std::size_t step, const ScheduleSpec& spec) {
  require(spec.min_lr <= spec.peak, "schedule min above peak");
  require(step <= spec.total, "step beyond schedule end");
  if (step < spec.warmup)
    return spec.peak * static_cast<double>(step) / static_cast<double>(spec.warmup);
  // The boundary and end steps are returned exactly, not via the cosine.
  if (step == spec.warmup || spec.kind == ScheduleKind::warmup_linear_constant)
    return spec.peak;
  if (step == spec.total) return spec.min_lr;
  const double phase = static_cast<double>(step - spec.warmup) /
                       static_cast<double>(spec.total - spec.warmup);
  return spec.min_lr +
         0.5 * (spec.peak - spec.min_lr) * (1.0 + std::cos(std::numbers::pi * phase));
}

double clip_grads(const std::vector<Tensor*>& grads, double max_norm) {
  require(max_norm > 0.0, "clip threshold must be positive");
  double sq = 0.0;
  for (const Tensor* g : grads)
    for (std::size_t i = 0; i < g->size(); ++i) sq += (*g)[i] * (*g)[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* g : grads)
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] *= s;
  }
  return norm;
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require_schema(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    require_schema(allowed.count(key) == 1, where + ": unknown field '" + key + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad value for '") + key + "': " + e.what());
  }
}

ScheduleSpec schedule_from_json(const json& j, const ScheduleSpec& defaults,
                                const std::string& where) {
  check_keys(j, {"kind", "warmup", "peak", "min"}, where);
  ScheduleSpec s = defaults;
  if (j.contains("kind")) s.kind = schedule_kind_from_name(j.at("kind").get<std::string>());
  s.warmup = get_or<std::size_t>(j, "warmup", s.warmup);
  s.peak = get_or<double>(j, "peak", s.peak);
  s.min_lr = get_or<double>(j, "min", s.kind == ScheduleKind::warmup_linear_constant
                                          ? s.peak
                                          : s.min_lr);
  if (s.kind == ScheduleKind::warmup_linear_constant && !j.contains("min")) s.min_lr = s.peak;
  return s;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"seed", "steps", "batch", "grad_accum", "lambda", "k", "fusion_mode",
              "temperature", "window", "clip_norm", "t_min", "t_max", "cache_dir",
              "eval_cache_dir", "out_dir", "eval", "lora_schedule", "proj_schedule",
              "adam", "model"},
             "config");
  TrainConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.steps = get_or<std::size_t>(j, "steps", c.steps);
  c.batch = get_or<std::size_t>(j, "batch", c.batch);
  c.grad_accum = get_or<std::size_t>(j, "grad_accum", c.grad_accum);
  c.lambda = get_or<double>(j, "lambda", c.lambda);
  c.k = get_or<double>(j, "k", c.k);
  if (j.contains("fusion_mode"))
    c.fusion_mode = fusion_mode_from_name(j.at("fusion_mode").get<std::string>());
  c.temperature = get_or<double>(j, "temperature", c.temperature);
  c.window = get_or<std::size_t>(j, "window", c.window);
  c.clip_norm = get_or<double>(j, "clip_norm", c.clip_norm);
  c.t_min = get_or<double>(j, "t_min", c.t_min);
  c.t_max = get_or<double>(j, "t_max", c.t_max);
  require_schema(j.contains("cache_dir"), "config: missing 'cache_dir'");
  c.cache_dir = j.at("cache_dir").get<std::string>();
  c.eval_cache_dir = get_or<std::string>(j, "eval_cache_dir", "");
  require_schema(j.contains("out_dir"), "config: missing 'out_dir'");
  c.out_dir = j.at("out_dir").get<std::string>();

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"k", "fusion_mode", "samples"}, "eval");
    c.eval.k = get_or<double>(e, "k", c.eval.k);
    if (e.contains("fusion_mode"))
      c.eval.mode = fusion_mode_from_name(e.at("fusion_mode").get<std::string>());
    c.eval.samples = get_or<std::size_t>(e, "samples", c.eval.samples);
  }
  if (j.contains("lora_schedule"))
    c.lora_schedule = schedule_from_json(j.at("lora_schedule"), c.lora_schedule,
                                         "lora_schedule");
  if (j.contains("proj_schedule"))
    c.proj_schedule = schedule_from_json(j.at("proj_schedule"), c.proj_schedule,
                                         "proj_schedule");
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    check_keys(a, {"eps", "weight_decay"}, "adam");
    c.adam.eps = get_or<double>(a, "eps", c.adam.eps);
    c.adam.weight_decay = get_or<double>(a, "weight_decay", c.adam.weight_decay);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"latent", "denoiser", "projector"}, "model");
    if (m.contains("latent")) {
      const json& l = m.at("latent");
      check_keys(l, {"patch", "channels", "temporal_stride", "seed"}, "latent");
      c.latent.patch = get_or<std::size_t>(l, "patch", c.latent.patch);
      c.latent.channels = get_or<std::size_t>(l, "channels", c.latent.channels);
      c.latent.temporal_stride =
          get_or<std::size_t>(l, "temporal_stride", c.latent.temporal_stride);
      c.latent.seed = get_or<std::uint64_t>(l, "seed", c.latent.seed);
    }
    if (m.contains("denoiser")) {
      const json& d = m.at("denoiser");
      check_keys(d, {"hidden", "rank", "alpha_lora"}, "denoiser");
      c.denoiser.hidden = get_or<std::size_t>(d, "hidden", c.denoiser.hidden);
      c.denoiser.rank = get_or<std::size_t>(d, "rank", c.denoiser.rank);
      c.denoiser.alpha_lora = get_or<double>(d, "alpha_lora", c.denoiser.alpha_lora);
    }
    if (m.contains("projector")) {
      const json& p = m.at("projector");
      check_keys(p, {"hidden1", "hidden2", "gn_groups", "gn_eps"}, "projector");
      c.projector.hidden1 = get_or<std::size_t>(p, "hidden1", c.projector.hidden1);
      c.projector.hidden2 = get_or<std::size_t>(p, "hidden2", c.projector.hidden2);
      c.projector.gn_groups = get_or<std::size_t>(p, "gn_groups", c.projector.gn_groups);
      c.projector.gn_eps = get_or<double>(p, "gn_eps", c.projector.gn_eps);
    }
  }

  require_schema(c.lambda >= 0.0, "lambda must be >= 0");
  require_schema(c.clip_norm > 0.0, "clip_norm must be > 0");
  require_schema(c.k >= 0.0 && c.k <= 1.0, "k must lie in [0, 1]");
  require_schema(c.eval.k >= 0.0 && c.eval.k <= 1.0, "eval k must lie in [0, 1]");
  require_schema(c.temperature > 0.0, "temperature must be > 0");
  require_schema(c.window % 2 == 1, "window must be odd");
  require_schema(c.batch >= 1 && c.grad_accum >= 1, "batch and grad_accum must be >= 1");
  require_schema(c.eval.samples >= 1, "eval samples must be >= 1");
  require_schema(0.0 <= c.t_min && c.t_min <= c.t_max && c.t_max <= 1.0,
                 "timestep range must satisfy 0 <= t_min <= t_max <= 1");
  c.lora_schedule.total = c.steps;
  c.proj_schedule.total = c.steps;
  // A zero-step run only evaluates the initial losses, so its schedules are
  // never exercised past step 0 and the warmup bound does not apply.
  require_schema(c.steps == 0 || (c.lora_schedule.warmup <= c.steps &&
                                  c.proj_schedule.warmup <= c.steps),
                 "schedule warmup exceeds total steps");
  require_schema(c.lora_schedule.min_lr <= c.lora_schedule.peak &&
                     c.proj_schedule.min_lr <= c.proj_schedule.peak,
                 "schedule min above peak");
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require_schema(is.good(), "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return train_config_from_json(ss.str());
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct ClipData {
  Tensor z;         // latent for the student
  ProbField probs;  // teacher target distribution
};

ProbField teacher_probs(const ClipCache& clip, double k, FusionMode mode,
                        std::size_t window, double temp) {
  if (mode == FusionMode::lgf_space) {
    const SimilarityField sf = local_gram_flow(clip.fwd, window, Direction::forward);
    const SimilarityField sb = local_gram_flow(clip.bwd, window, Direction::forward);
    return temp_softmax(fuse_lgf(sf, sb, k), temp);
  }
  const Tensor fused = fuse_feature_space(clip.fwd, clip.bwd, k);
  return temp_softmax(local_gram_flow(fused, window, Direction::forward), temp);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  const std::filesystem::path tmp = dir.string() + ".tmp";
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);
  json manifest;
  manifest["global_step"] = ckpt.global_step;
  manifest["lora"] = {{"rank", ckpt.lora_rank}, {"alpha", ckpt.lora_alpha}};
  manifest["schedules"] = {{"lora", ckpt.lora_schedule_id},
                           {"projector", ckpt.proj_schedule_id}};
  json params = json::array();
  for (const auto& [name, value] : ckpt.params) {
    const std::string file = name + ".lgft";
    lgft_write(tmp / file, value);
    params.push_back({{"name", name}, {"shape", value.dims()}, {"file", file}});
  }
  manifest["params"] = params;
  {
    std::ofstream os(tmp / "manifest.json");
    require_schema(os.good(), "cannot write checkpoint manifest");
    os << manifest.dump(2) << "\n";
  }
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  require_schema(is.good(), "missing checkpoint manifest in " + dir.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad checkpoint manifest: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.global_step = manifest.at("global_step").get<std::size_t>();
    ckpt.lora_rank = manifest.at("lora").at("rank").get<std::size_t>();
    ckpt.lora_alpha = manifest.at("lora").at("alpha").get<double>();
    ckpt.lora_schedule_id = manifest.at("schedules").at("lora").get<std::string>();
    ckpt.proj_schedule_id = manifest.at("schedules").at("projector").get<std::string>();
    for (const auto& p : manifest.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      Tensor t = lgft_read(dir / p.at("file").get<std::string>());
      require_schema(t.dims() == p.at("shape").get<Shape>(),
                     "checkpoint shape mismatch for " + name);
      ckpt.params.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad checkpoint manifest: ") + e.what());
  }
  return ckpt;
}

TrainReport train_loop(const TrainConfig& cfg) {
  require(cfg.lambda >= 0.0, "lambda must be >= 0");
  require(cfg.clip_norm > 0.0, "clip_norm must be > 0");

  // --- teacher cache ---------------------------------------------------
  const auto train_dirs = list_clip_dirs(cfg.cache_dir);
  require_schema(!train_dirs.empty(), "teacher cache has no clips: " + cfg.cache_dir.string());

  std::size_t grid_t = 0, grid_h = 0, grid_w = 0, grid_c = 0;
  auto load_clip = [&](const std::filesystem::path& dir, double k, FusionMode mode) {
    const ClipCache clip = read_clip_cache(dir);
    if (grid_t == 0) {
      grid_t = clip.fwd.dim(0);
      grid_h = clip.fwd.dim(1);
      grid_w = clip.fwd.dim(2);
      grid_c = clip.fwd.dim(3);
    }
    require_schema(clip.fwd.dim(0) == grid_t && clip.fwd.dim(1) == grid_h &&
                       clip.fwd.dim(2) == grid_w && clip.fwd.dim(3) == grid_c,
                   "clips in the cache disagree on the teacher grid");
    ClipData data;
    data.z = encode_latent(clip.video, cfg.latent);
    data.probs = teacher_probs(clip, k, mode, cfg.window, cfg.temperature);
    return data;
  };

  std::vector<ClipData> train_clips;
  for (const auto& dir : train_dirs)
    train_clips.push_back(load_clip(dir, cfg.k, cfg.fusion_mode));

  std::vector<ClipData> eval_clips;
  if (!cfg.eval_cache_dir.empty())
    for (const auto& dir : list_clip_dirs(cfg.eval_cache_dir))
      eval_clips.push_back(load_clip(dir, cfg.eval.k, cfg.eval.mode));

  // --- models ----------------------------------------------------------
  RngStream root(cfg.seed);
  DenoiserConfig dcfg = cfg.denoiser;
  dcfg.channels = cfg.latent.channels;
  dcfg.seed = root.split(10).seed();
  DenoiserModel den(dcfg);

  ProjectorConfig pcfg = cfg.projector;
  pcfg.in_width = dcfg.hidden;
  pcfg.out_width = grid_c;  // final width override onto the teacher space
  pcfg.seed = root.split(11).seed();
  ProjectorModel proj(pcfg);
  {
    const std::size_t lat_t = train_clips.front().z.dim(0);
    require(pcfg.factor * (lat_t - 1) + 1 == grid_t,
            "teacher frame count incompatible with factor-" + std::to_string(pcfg.factor) +
                " interpolation");
  }

  auto lora_params = den.trainable();
  auto proj_params = proj.trainable();
  std::vector<std::pair<std::string, Param*>> all_params = lora_params;
  all_params.insert(all_params.end(), proj_params.begin(), proj_params.end());
  std::vector<AdamState> lora_states(lora_params.size()), proj_states(proj_params.size());
  std::vector<Tensor*> all_grads;
  for (auto& [name, p] : all_params) all_grads.push_back(&p->grad);

  RngStream train_rng = root.split(1);
  RngStream init_eval_rng = root.split(2);
  const std::uint64_t heldout_seed = root.split(3).seed();

  const std::size_t items = cfg.batch * cfg.grad_accum;
  const double item_scale = 1.0 / static_cast<double>(items);

  // One micro-batch element: losses plus (optionally) accumulated grads.
  auto run_item = [&](const ClipData& clip, double t, RngStream& rng, bool with_grads,
                      double& l_diff, double& l_feat) {
    const NoisedLatent noised = noise_latent(clip.z, t, rng);
    const DenoiserFwd dfwd = denoiser_forward(den, noised.z_t, t);
    const ProjectorFwd pfwd = projector_forward(proj, dfwd.h, grid_t, grid_h, grid_w);
    const SimilarityField q = local_gram_flow(pfwd.out, cfg.window, Direction::forward);
    const KlResult kl = kl_feat_loss(clip.probs, q, cfg.temperature);
    l_feat = kl.loss;

    const std::size_t n = noised.v.size();
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = dfwd.vhat[i] - noised.v[i];
      sq += d * d;
    }
    l_diff = sq / static_cast<double>(n);

    if (!with_grads) return;
    Tensor dq(kl.grad.dims());
    const double qscale = cfg.lambda * item_scale;
    for (std::size_t i = 0; i < dq.size(); ++i) dq[i] = qscale * kl.grad[i];
    const Tensor dfhat = local_gram_flow_backward(pfwd.out, cfg.window,
                                                  Direction::forward, dq);
    const Tensor dfdiff = projector_backward(proj, pfwd, dfhat);
    Tensor dvhat(dfwd.vhat.dims());
    const double vscale = 2.0 * item_scale / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      dvhat[i] = vscale * (dfwd.vhat[i] - noised.v[i]);
    denoiser_backward(den, dfwd, dvhat, dfdiff);
  };

  auto draw_t = [&](RngStream& rng) {
    return cfg.t_min + rng.uniform() * (cfg.t_max - cfg.t_min);
  };
  auto draw_clip = [&](RngStream& rng, std::size_t n) {
    return std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)),
                    n - 1);
  };

  // Mean losses over one batch*accum group; grads accumulate when requested.
  auto run_group = [&](RngStream& rng, bool with_grads, double& l_diff, double& l_feat) {
    l_diff = 0.0;
    l_feat = 0.0;
    for (std::size_t it = 0; it < items; ++it) {
      const std::size_t idx = draw_clip(rng, train_clips.size());
      const double t = draw_t(rng);
      double ld = 0.0, lf = 0.0;
      run_item(train_clips[idx], t, rng, with_grads, ld, lf);
      l_diff += ld * item_scale;
      l_feat += lf * item_scale;
    }
  };

  auto eval_heldout = [&]() {
    RngStream rng(heldout_seed);  // fixed draws: paired across calls and runs
    double acc = 0.0;
    for (std::size_t e = 0; e < cfg.eval.samples; ++e) {
      const ClipData& clip = eval_clips[e % eval_clips.size()];
      const double t = draw_t(rng);
      double ld = 0.0, lf = 0.0;
      run_item(clip, t, rng, false, ld, lf);
      acc += lf;
    }
    return acc / static_cast<double>(cfg.eval.samples);
  };

  auto zero_grads = [&]() {
    for (auto& [name, p] : all_params) p->zero_grad();
  };

  TrainReport report;
  report.steps = cfg.steps;
  report.feature_loss_inactive = cfg.lambda == 0.0;
  report.has_heldout = !eval_clips.empty();
  report.csv_rows.push_back("step,lr_lora,lr_proj,L_diff,L_feat,L_total,grad_norm_preclip");

  auto push_row = [&](std::size_t step, double lr_l, double lr_p, double ld, double lf,
                      double gnorm) {
    const double lt = ld + cfg.lambda * lf;
    report.csv_rows.push_back(std::to_string(step) + "," + fmt_double(lr_l) + "," +
                              fmt_double(lr_p) + "," + fmt_double(ld) + "," +
                              fmt_double(lf) + "," + fmt_double(lt) + "," +
                              fmt_double(gnorm));
  };

  // Row 0: losses and gradient norm at the initial parameters, no update.
  {
    double ld = 0.0, lf = 0.0;
    run_group(init_eval_rng, true, ld, lf);
    require(std::isfinite(ld) && std::isfinite(lf), "non-finite loss at step 0");
    const double gnorm = clip_grads(all_grads, cfg.clip_norm);
    zero_grads();
    push_row(0, lr_at(0, cfg.lora_schedule), lr_at(0, cfg.proj_schedule), ld, lf, gnorm);
    report.initial_L_feat = lf;
    report.final_L_feat = lf;
  }
  if (report.has_heldout) report.heldout_initial_L_feat = eval_heldout();

  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    double ld = 0.0, lf = 0.0;
    run_group(train_rng, true, ld, lf);
    if (!std::isfinite(ld) || !std::isfinite(lf))
      throw std::runtime_error("non-finite loss at step " + std::to_string(s));
    const double gnorm = clip_grads(all_grads, cfg.clip_norm);
    const double lr_l = lr_at(s, cfg.lora_schedule);
    const double lr_p = lr_at(s, cfg.proj_schedule);
    if (std::isfinite(gnorm)) {
      for (std::size_t i = 0; i < lora_params.size(); ++i)
        adamw_step(lora_params[i].second->value, lora_params[i].second->grad,
                   lora_states[i], lr_l, cfg.adam);
      for (std::size_t i = 0; i < proj_params.size(); ++i)
        adamw_step(proj_params[i].second->value, proj_params[i].second->grad,
                   proj_states[i], lr_p, cfg.adam);
    } else {
      report.skipped_updates += 1;
    }
    zero_grads();
    push_row(s, lr_l, lr_p, ld, lf, gnorm);
    report.final_L_feat = lf;
  }

  if (report.has_heldout) report.heldout_final_L_feat = eval_heldout();

  // --- artifacts ---------------------------------------------------------
  std::filesystem::create_directories(cfg.out_dir);
  report.csv_path = cfg.out_dir / "train_log.csv";
  {
    const std::filesystem::path tmp = report.csv_path.string() + ".tmp";
    std::ofstream os(tmp, std::ios::binary);
    require(os.good(), "cannot write " + tmp.string());
    for (const auto& row : report.csv_rows) os << row << "\n";
    os.close();
    std::filesystem::rename(tmp, report.csv_path);
  }

  Checkpoint ckpt;
  ckpt.global_step = cfg.steps;
  ckpt.lora_rank = dcfg.rank;
  ckpt.lora_alpha = dcfg.alpha_lora;
  ckpt.lora_schedule_id = schedule_kind_name(cfg.lora_schedule.kind);
  ckpt.proj_schedule_id = schedule_kind_name(cfg.proj_schedule.kind);
  for (auto& [name, p] : den.all_params()) ckpt.params.emplace(name, p->value);
  for (auto& [name, p] : proj_params) ckpt.params.emplace(name, p->value);
  report.checkpoint_dir = cfg.out_dir / "checkpoint";
  save_checkpoint(report.checkpoint_dir, ckpt);
  return report;
}

}  // namespace gramflow
