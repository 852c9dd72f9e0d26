// gramflow command-line front end.
//
// Every subcommand prints one JSON summary on stdout and uses the exit-code
// contract: 0 = pass, 1 = a check failed, 2 = usage or schema error.
// LGF_DETERMINISTIC=1 is honored trivially: reductions are always sequential.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gramflow/error.hpp"
#include "gramflow/gradcheck.hpp"
#include "gramflow/io.hpp"
#include "gramflow/lgf.hpp"
#include "gramflow/metrics.hpp"
#include "gramflow/rng.hpp"
#include "gramflow/teacher.hpp"
#include "gramflow/trainer.hpp"
#include "json.hpp"

namespace {

using gramflow::SchemaError;
using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  gramflow::require_schema(is.good(), "cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, std::size_t trials) {
  std::vector<gramflow::GradCheckResult> rows;
  if (scope == "primitives")
    rows = gramflow::gradcheck_primitives(seed, trials);
  else if (scope == "lgf")
    rows = gramflow::gradcheck_lgf(seed, trials);
  else if (scope == "projector")
    rows = gramflow::gradcheck_projector(seed, trials);
  else
    rows = gramflow::gradcheck_end_to_end(seed, trials);

  bool pass = true;
  double worst = 0.0;
  json targets = json::array();
  for (const auto& r : rows) {
    pass = pass && r.ok();
    worst = std::max(worst, r.max_rel_err);
    targets.push_back({{"target", r.target},
                       {"max_rel_err", r.max_rel_err},
                       {"tol", r.tol},
                       {"pass", r.ok()}});
  }
  json out{{"command", "gradcheck"}, {"scope", scope},   {"seed", seed},
           {"trials", trials},       {"targets", targets}, {"worst_rel_err", worst},
           {"pass", pass}};
  std::cout << out.dump(2) << "\n";
  return pass ? 0 : 1;
}

int cmd_verify_fusion(std::size_t draws, std::uint64_t seed) {
  gramflow::require(draws >= 1, "draws must be >= 1");
  gramflow::RngStream rng(seed);
  double max_dev = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 8.0);
    std::vector<double> a(len), b(len), c(len), dd(len);
    for (std::size_t i = 0; i < len; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      c[i] = rng.normal();
      dd[i] = rng.normal();
    }
    const double k = rng.uniform();
    const gramflow::FusionGap g = gramflow::fusion_gap(a, b, c, dd, k);

    auto dot = [&](const std::vector<double>& u, const std::vector<double>& v) {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
      return s;
    };
    std::vector<double> amb(len), dmc(len);
    for (std::size_t i = 0; i < len; ++i) {
      amb[i] = a[i] - b[i];
      dmc[i] = dd[i] - c[i];
    }
    const double decomp = k * k * dot(a, c) + (1.0 - k) * (1.0 - k) * dot(b, dd) +
                          k * (1.0 - k) * (dot(a, dd) + dot(b, c));
    max_dev = std::max(max_dev, std::abs(g.g_feat - decomp));
    max_dev = std::max(max_dev, std::abs(g.gap - k * (1.0 - k) * dot(amb, dmc)));
  }

  // Exact-zero boundary cases on a small lattice where fp arithmetic is exact.
  bool boundary_zero = true, identical_zero = true;
  for (double x0 = -2.0; x0 <= 2.0; ++x0)
    for (double x1 = -2.0; x1 <= 2.0; ++x1) {
      const std::vector<double> u{x0, x1}, v{x1, -x0}, w{x0 + 1.0, x1 - 2.0};
      for (const double k : {0.0, 0.25, 0.5, 0.75, 1.0})
        identical_zero = identical_zero && gramflow::fusion_gap(u, u, v, w, k).gap == 0.0;
      for (const double k : {0.0, 1.0})
        boundary_zero = boundary_zero && gramflow::fusion_gap(u, v, w, u, k).gap == 0.0;
    }

  const bool pass = max_dev < 1e-10 && boundary_zero && identical_zero;
  json out{{"command", "verify-fusion"},
           {"draws", draws},
           {"seed", seed},
           {"max_deviation", max_dev},
           {"boundary_k_gap_zero", boundary_zero},
           {"identical_features_gap_zero", identical_zero},
           {"pass", pass}};
  std::cout << out.dump(2) << "\n";
  return pass ? 0 : 1;
}

int cmd_lgf(const std::string& input, std::size_t window, const std::string& direction,
            double temperature, const std::string& out_prefix) {
  const gramflow::Tensor x = gramflow::lgft_read(input);
  gramflow::require_schema(x.rank() == 4,
                           "lgf input must be rank 4 (T, H, W, C), got rank " +
                               std::to_string(x.rank()));
  gramflow::require_schema(x.dim(0) >= 2, "lgf input needs at least 2 frames");

  const gramflow::Direction dir = gramflow::direction_from_name(direction);
  const gramflow::SimilarityField sf = gramflow::local_gram_flow(x, window, dir);
  const gramflow::ProbField pf = gramflow::temp_softmax(sf, temperature);

  gramflow::save_similarity_field(out_prefix + ".sim", sf);
  gramflow::lgft_write(out_prefix + ".probs.lgft", pf.probs);

  const std::size_t slots = window * window;
  const std::size_t tokens = sf.num_tokens();
  std::size_t valid_count = 0;
  double ent_min = 0.0, ent_max = 0.0, ent_sum = 0.0;
  for (std::size_t tok = 0; tok < tokens; ++tok) {
    double ent = 0.0;
    for (std::size_t s = 0; s < slots; ++s) {
      const std::size_t i = tok * slots + s;
      valid_count += sf.valid[i];
      const double p = pf.probs[i];
      if (p > 0.0) ent -= p * std::log(p);
    }
    if (tok == 0) ent_min = ent_max = ent;
    ent_min = std::min(ent_min, ent);
    ent_max = std::max(ent_max, ent);
    ent_sum += ent;
  }
  json out{{"command", "lgf"},
           {"shape", x.dims()},
           {"window", window},
           {"direction", direction},
           {"temperature", temperature},
           {"tokens", tokens},
           {"valid_fraction",
            static_cast<double>(valid_count) / static_cast<double>(tokens * slots)},
           {"entropy", {{"min", ent_min},
                        {"mean", ent_sum / static_cast<double>(tokens)},
                        {"max", ent_max}}},
           {"outputs", {{"similarity", out_prefix + ".sim.values.lgft"},
                        {"mask", out_prefix + ".sim.valid.lgft"},
                        {"sidecar", out_prefix + ".sim.json"},
                        {"probs", out_prefix + ".probs.lgft"}}}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

gramflow::SceneConfig scene_from_json(const json& c) {
  gramflow::SceneConfig s;
  try {
    if (c.contains("frames")) s.frames = c.at("frames").get<std::size_t>();
    if (c.contains("height")) s.height = c.at("height").get<std::size_t>();
    if (c.contains("width")) s.width = c.at("width").get<std::size_t>();
    if (c.contains("shape"))
      s.shape = gramflow::shape_kind_from_name(c.at("shape").get<std::string>());
    if (c.contains("trajectory"))
      s.trajectory =
          gramflow::trajectory_from_name(c.at("trajectory").get<std::string>());
    if (c.contains("velocity")) {
      const json& v = c.at("velocity");
      gramflow::require_schema(v.is_array() && v.size() == 2,
                               "velocity must be [vx, vy]");
      s.vx = v.at(0).get<double>();
      s.vy = v.at(1).get<double>();
    }
    if (c.contains("seed")) s.seed = c.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad scene config: ") + e.what());
  }
  return s;
}

int cmd_cache(const std::string& config_path, const std::string& out_dir) {
  json cfg;
  try {
    cfg = json::parse(read_file(config_path));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("scenes config is not valid JSON: ") + e.what());
  }
  gramflow::require_schema(cfg.is_object() && cfg.contains("clips"),
                           "scenes config needs a 'clips' array");

  gramflow::TeacherConfig teacher;
  if (cfg.contains("teacher")) {
    const json& t = cfg.at("teacher");
    try {
      if (t.contains("rho")) teacher.rho = t.at("rho").get<double>();
      if (t.contains("patch")) teacher.patch = t.at("patch").get<std::size_t>();
      if (t.contains("channels")) teacher.channels = t.at("channels").get<std::size_t>();
      if (t.contains("embed_seed"))
        teacher.embed_seed = t.at("embed_seed").get<std::uint64_t>();
      if (t.contains("embed_gain")) teacher.embed_gain = t.at("embed_gain").get<double>();
    } catch (const json::exception& e) {
      throw SchemaError(std::string("bad teacher config: ") + e.what());
    }
  }

  const json& clips = cfg.at("clips");
  gramflow::require_schema(clips.is_array() && !clips.empty(),
                           "'clips' must be a non-empty array");
  std::filesystem::create_directories(out_dir);
  json written = json::array();
  gramflow::Shape grid;
  std::size_t index = 0;
  for (const json& c : clips) {
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "clip_%03zu", index++);
    std::string name = suffix;
    if (c.contains("name")) name = c.at("name").get<std::string>();
    const gramflow::ClipCache clip = gramflow::build_clip(scene_from_json(c), teacher);
    grid = clip.fwd.dims();
    gramflow::write_clip_cache(std::filesystem::path(out_dir) / name, clip);
    written.push_back(name);
  }
  json out{{"command", "cache"},
           {"out", out_dir},
           {"clips", written},
           {"teacher_grid", grid}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              double k_override, const std::string& out_override) {
  gramflow::TrainConfig cfg = gramflow::load_train_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (k_override >= 0.0) {
    gramflow::require_schema(k_override <= 1.0, "k must lie in [0, 1]");
    cfg.k = k_override;
  }
  if (!out_override.empty()) cfg.out_dir = out_override;

  const gramflow::TrainReport rep = gramflow::train_loop(cfg);
  json out{{"command", "train"},
           {"steps", rep.steps},
           {"initial_L_feat", rep.initial_L_feat},
           {"final_L_feat", rep.final_L_feat},
           {"feature_loss_inactive", rep.feature_loss_inactive},
           {"skipped_updates", rep.skipped_updates},
           {"csv", rep.csv_path.string()},
           {"checkpoint", rep.checkpoint_dir.string()}};
  if (rep.has_heldout) {
    out["heldout_initial_L_feat"] = rep.heldout_initial_L_feat;
    out["heldout_final_L_feat"] = rep.heldout_final_L_feat;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_score(const std::string& input) {
  std::cout << gramflow::score_document(read_file(input)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gramflow: local similarity-flow distillation toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  std::string gc_scope;
  std::uint64_t gc_seed = 7;
  std::size_t gc_trials = 20;
  gc->add_option("--scope", gc_scope, "Suite to run")
      ->required()
      ->check(CLI::IsMember({"primitives", "lgf", "projector", "end-to-end"}));
  gc->add_option("--seed", gc_seed, "Random seed");
  gc->add_option("--trials", gc_trials, "Instances per gradient target")
      ->check(CLI::PositiveNumber);
  gc->callback([&] { rc = cmd_gradcheck(gc_scope, gc_seed, gc_trials); });

  auto* vf = app.add_subcommand("verify-fusion",
                                "Check the fusion cross-term identities on random draws");
  std::size_t vf_draws = 1000;
  std::uint64_t vf_seed = 1;
  vf->add_option("--draws", vf_draws, "Number of random draws")->check(CLI::PositiveNumber);
  vf->add_option("--seed", vf_seed, "Random seed");
  vf->callback([&] { rc = cmd_verify_fusion(vf_draws, vf_seed); });

  auto* lg = app.add_subcommand("lgf", "Apply the local similarity-flow operator to a file");
  std::string lg_input, lg_direction = "forward", lg_out = "lgf_out";
  std::size_t lg_window = 7;
  double lg_temp = 0.1;
  lg->add_option("--input", lg_input, "Rank-4 LGFT feature file")->required();
  lg->add_option("--window", lg_window, "Neighborhood side length (odd)");
  lg->add_option("--direction", lg_direction, "Pairing direction")
      ->check(CLI::IsMember({"forward", "backward-pair"}));
  lg->add_option("--temperature", lg_temp, "Softmax temperature");
  lg->add_option("--out", lg_out, "Output path prefix");
  lg->callback([&] { rc = cmd_lgf(lg_input, lg_window, lg_direction, lg_temp, lg_out); });

  auto* ca = app.add_subcommand("cache", "Generate and cache synthetic teacher clips");
  std::string ca_config, ca_out = "cache";
  ca->add_option("--config", ca_config, "Scenes JSON")->required();
  ca->add_option("--out", ca_out, "Cache directory");
  ca->callback([&] { rc = cmd_cache(ca_config, ca_out); });

  auto* tr = app.add_subcommand("train", "Run the distillation training loop");
  std::string tr_config, tr_out;
  std::int64_t tr_seed = -1;
  double tr_k = -1.0;
  tr->add_option("--config", tr_config, "Training config JSON")->required();
  tr->add_option("--seed", tr_seed, "Override the config seed");
  tr->add_option("--k", tr_k, "Override the fusion weight");
  tr->add_option("--out", tr_out, "Override the output directory");
  tr->callback([&] { rc = cmd_train(tr_config, tr_seed, tr_k, tr_out); });

  auto* sc = app.add_subcommand("score", "Aggregate sub-metric scores");
  std::string sc_input;
  sc->add_option("--input", sc_input, "Raw scores JSON")->required();
  sc->callback([&] { rc = cmd_score(sc_input); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
