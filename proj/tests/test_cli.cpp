// End-to-end checks of the gramflow command-line tool.
//
// The binary under test is located through the GRAMFLOW_CLI environment
// variable (set by the CTest registration), each invocation's stdout is
// captured to a scratch file, and the JSON summary is parsed back.  The
// exit-code contract is: 0 = pass, 1 = a check failed, 2 = usage or schema
// error.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "gramflow/io.hpp"
#include "gramflow/tensor.hpp"
#include "json.hpp"

namespace {

using doctest::Approx;
using nlohmann::json;

struct CliResult {
  int exit_code = -1;
  json out;       // parsed stdout (null when stdout was empty / not JSON)
  std::string raw;
};

// Scratch directory shared by all cases; wiped when the last case finishes.
std::filesystem::path scratch_root() {
  static const std::filesystem::path root = [] {
    auto p = std::filesystem::temp_directory_path() / "gramflow_test_cli";
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
  }();
  return root;
}

std::string cli_binary() {
  const char* p = std::getenv("GRAMFLOW_CLI");
  REQUIRE_MESSAGE(p != nullptr, "GRAMFLOW_CLI must point to the gramflow binary");
  return p;
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const auto cap = scratch_root() / ("stdout_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      "\"" + cli_binary() + "\" " + args + " > \"" + cap.string() + "\" 2> /dev/null";
  const int status = std::system(cmd.c_str());
  CliResult r;
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  r.exit_code = WEXITSTATUS(status);
  std::ifstream is(cap);
  std::stringstream ss;
  ss << is.rdbuf();
  r.raw = ss.str();
  if (!r.raw.empty()) r.out = json::parse(r.raw, nullptr, /*allow_exceptions=*/false);
  return r;
}

std::string write_json(const std::string& name, const json& doc) {
  const auto path = scratch_root() / name;
  std::ofstream os(path);
  os << doc.dump(2) << "\n";
  return path.string();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gradcheck subcommand: lgf scope passes under the documented tolerance") {
  const CliResult r = run_cli("gradcheck --scope lgf --trials 20 --seed 7");
  CHECK(r.exit_code == 0);
  REQUIRE(r.out.is_object());
  CHECK(r.out.at("command") == "gradcheck");
  CHECK(r.out.at("scope") == "lgf");
  CHECK(r.out.at("pass") == true);
  CHECK(r.out.at("worst_rel_err").get<double>() < 1e-5);
  REQUIRE(r.out.at("targets").is_array());
  CHECK(!r.out.at("targets").empty());
  for (const auto& t : r.out.at("targets")) {
    CHECK(t.at("pass") == true);
    CHECK(t.at("max_rel_err").get<double>() <= t.at("tol").get<double>());
  }
}

TEST_CASE("gradcheck subcommand: usage errors exit with code 2") {
  CHECK(run_cli("gradcheck --scope sideways").exit_code == 2);  // not a known scope
  CHECK(run_cli("gradcheck").exit_code == 2);                   // --scope is required
  CHECK(run_cli("frobnicate").exit_code == 2);                  // unknown subcommand
}

TEST_CASE("verify-fusion subcommand: default draws stay under 1e-10 deviation") {
  const CliResult r = run_cli("verify-fusion --draws 1000 --seed 1");
  CHECK(r.exit_code == 0);
  REQUIRE(r.out.is_object());
  CHECK(r.out.at("command") == "verify-fusion");
  CHECK(r.out.at("draws") == 1000);
  CHECK(r.out.at("max_deviation").get<double>() < 1e-10);
  CHECK(r.out.at("boundary_k_gap_zero") == true);
  CHECK(r.out.at("identical_features_gap_zero") == true);
  CHECK(r.out.at("pass") == true);
}

TEST_CASE("lgf subcommand: constant features give log(valid-slot-count) entropy") {
  // On constant features every valid neighbor scores identically, so each
  // token's softmax is uniform over its valid slots and the entropy equals
  // log of the slot count: 2x2 = 4 in the corners, 3x3 = 9 in the interior
  // of a 4x4 grid with a 3x3 window.
  const auto input = scratch_root() / "const.lgft";
  gramflow::lgft_write(input, gramflow::Tensor({2, 4, 4, 3}, 0.7));
  const auto prefix = (scratch_root() / "const_out").string();

  const CliResult r = run_cli("lgf --input \"" + input.string() +
                              "\" --window 3 --temperature 0.1 --out \"" + prefix + "\"");
  CHECK(r.exit_code == 0);
  REQUIRE(r.out.is_object());
  CHECK(r.out.at("command") == "lgf");
  CHECK(r.out.at("shape") == json::array({2, 4, 4, 3}));
  CHECK(r.out.at("window") == 3);
  CHECK(r.out.at("direction") == "forward");
  CHECK(r.out.at("tokens") == 16);  // (T - 1) * H * W = 1 * 4 * 4

  // Valid slots per token: rows contribute [2, 3, 3, 2] each way, so the
  // total is 10 * 10 = 100 out of 16 * 9 slots.
  CHECK(r.out.at("valid_fraction").get<double>() == Approx(100.0 / 144.0).epsilon(1e-12));
  CHECK(r.out.at("entropy").at("min").get<double>() == Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(r.out.at("entropy").at("max").get<double>() == Approx(std::log(9.0)).epsilon(1e-12));
  // 4 corners (log 4), 8 edges (log 6), 4 interior tokens (log 9).
  const double mean =
      (4.0 * std::log(4.0) + 8.0 * std::log(6.0) + 4.0 * std::log(9.0)) / 16.0;
  CHECK(r.out.at("entropy").at("mean").get<double>() == Approx(mean).epsilon(1e-12));

  // The listed artifacts really exist and the probabilities are normalized.
  for (const auto& [key, path] : r.out.at("outputs").items())
    CHECK_MESSAGE(std::filesystem::exists(path.get<std::string>()), key);
  const gramflow::Tensor probs =
      gramflow::lgft_read(r.out.at("outputs").at("probs").get<std::string>());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += probs[i];
  CHECK(total == Approx(16.0).epsilon(1e-12));  // one unit of mass per token
}

TEST_CASE("lgf subcommand: rank-3 input is a schema error") {
  const auto input = scratch_root() / "rank3.lgft";
  gramflow::lgft_write(input, gramflow::Tensor({4, 4, 3}, 1.0));
  CHECK(run_cli("lgf --input \"" + input.string() + "\"").exit_code == 2);
}

TEST_CASE("lgf subcommand: missing input file is a schema error") {
  const auto missing = (scratch_root() / "nope.lgft").string();
  CHECK(run_cli("lgf --input \"" + missing + "\"").exit_code == 2);
}

TEST_CASE("cache + train subcommands: caching, determinism, lambda = 0") {
  // Build a tiny two-clip cache through the CLI, then train on it.
  const json scenes{
      {"teacher",
       {{"rho", 0.7}, {"patch", 4}, {"channels", 8}, {"embed_seed", 11}, {"embed_gain", 0.15}}},
      {"clips",
       json::array({{{"frames", 5},
                     {"height", 32},
                     {"width", 32},
                     {"shape", "disc"},
                     {"trajectory", "linear"},
                     {"velocity", json::array({1.0, 0.25})},
                     {"seed", 31}},
                    {{"frames", 5},
                     {"height", 32},
                     {"width", 32},
                     {"shape", "two-link"},
                     {"trajectory", "sinusoidal"},
                     {"velocity", json::array({1.0, 0.25})},
                     {"seed", 32}}})}};
  const std::string scenes_path = write_json("scenes.json", scenes);
  const auto cache_dir = scratch_root() / "cache";

  const CliResult c =
      run_cli("cache --config \"" + scenes_path + "\" --out \"" + cache_dir.string() + "\"");
  CHECK(c.exit_code == 0);
  REQUIRE(c.out.is_object());
  CHECK(c.out.at("clips") == json::array({"clip_000", "clip_001"}));
  for (const char* f : {"fwd.lgft", "bwd.lgft", "video.lgft", "meta.json"}) {
    CHECK(std::filesystem::exists(cache_dir / "clip_000" / f));
    CHECK(std::filesystem::exists(cache_dir / "clip_001" / f));
  }

  json cfg{{"seed", 5},
           {"steps", 2},
           {"batch", 1},
           {"grad_accum", 1},
           {"lambda", 0.5},
           {"k", 0.5},
           {"fusion_mode", "lgf-space"},
           {"temperature", 0.1},
           {"window", 5},
           {"clip_norm", 1.0},
           {"cache_dir", cache_dir.string()},
           {"out_dir", (scratch_root() / "run_a").string()},
           {"lora_schedule",
            {{"kind", "warmup-linear-constant"}, {"warmup", 1}, {"peak", 1e-4}, {"min", 1e-4}}},
           {"proj_schedule",
            {{"kind", "warmup-cosine"}, {"warmup", 1}, {"peak", 5e-4}, {"min", 1e-5}}},
           {"model",
            {{"latent", {{"patch", 4}, {"channels", 8}, {"temporal_stride", 4}}},
             {"denoiser", {{"hidden", 8}, {"rank", 2}, {"alpha_lora", 1.0}}},
             {"projector",
              {{"hidden1", 8}, {"hidden2", 4}, {"gn_groups", 2}, {"gn_eps", 1e-5}}}}}};
  const std::string cfg_path = write_json("train_cfg.json", cfg);

  SUBCASE("the training log is bitwise reproducible across reruns") {
    const CliResult a = run_cli("train --config \"" + cfg_path + "\"");
    CHECK(a.exit_code == 0);
    REQUIRE(a.out.is_object());
    CHECK(a.out.at("steps") == 2);
    CHECK(a.out.at("feature_loss_inactive") == false);
    CHECK(a.out.at("skipped_updates") == 0);
    CHECK(std::filesystem::exists(a.out.at("csv").get<std::string>()));
    CHECK(std::filesystem::exists(a.out.at("checkpoint").get<std::string>()));

    const auto out_b = (scratch_root() / "run_b").string();
    const CliResult b = run_cli("train --config \"" + cfg_path + "\" --out \"" + out_b + "\"");
    CHECK(b.exit_code == 0);
    CHECK(read_text(a.out.at("csv").get<std::string>()) ==
          read_text(b.out.at("csv").get<std::string>()));
    CHECK(a.out.at("final_L_feat") == b.out.at("final_L_feat"));
  }

  SUBCASE("lambda = 0 reports the feature loss as inactive") {
    cfg["lambda"] = 0.0;
    cfg["out_dir"] = (scratch_root() / "run_l0").string();
    const std::string l0_path = write_json("train_cfg_l0.json", cfg);
    const CliResult r = run_cli("train --config \"" + l0_path + "\"");
    CHECK(r.exit_code == 0);
    CHECK(r.out.at("feature_loss_inactive") == true);
  }

  SUBCASE("config schema violations exit with code 2") {
    cfg["k"] = 1.5;
    const std::string bad_path = write_json("train_cfg_bad.json", cfg);
    CHECK(run_cli("train --config \"" + bad_path + "\"").exit_code == 2);
    CHECK(run_cli("train --config \"" + (scratch_root() / "absent.json").string() + "\"")
              .exit_code == 2);
  }
}

TEST_CASE("score subcommand: all-ones raw scores aggregate to 1.0") {
  const json doc{{"raw",
                  {{"background", 1.0},
                   {"smoothness", 1.0},
                   {"subject", 1.0},
                   {"i2v_subject", 1.0},
                   {"i2v_background", 1.0}}}};
  const std::string path = write_json("score_ones.json", doc);
  const CliResult r = run_cli("score --input \"" + path + "\"");
  CHECK(r.exit_code == 0);
  REQUIRE(r.out.is_object());
  CHECK(r.out.at("motion_score").get<double>() == 1.0);
  CHECK(r.out.at("ext_motion_score").get<double>() == 1.0);
  for (const auto& [name, value] : r.out.at("normalized").items())
    CHECK_MESSAGE(value.get<double>() == 1.0, name);
}

TEST_CASE("score subcommand: schema violations exit with code 2") {
  const json missing{{"raw", {{"background", 1.0}, {"smoothness", 1.0}}}};
  CHECK(run_cli("score --input \"" + write_json("score_missing.json", missing) + "\"")
            .exit_code == 2);
  const auto garbled = scratch_root() / "score_garbled.json";
  std::ofstream(garbled) << "{not json";
  CHECK(run_cli("score --input \"" + garbled.string() + "\"").exit_code == 2);
  CHECK(run_cli("score").exit_code == 2);  // --input is required
}

TEST_CASE("scratch cleanup") {
  // Runs last (doctest preserves declaration order within a file).
  std::error_code ec;
  std::filesystem::remove_all(scratch_root(), ec);
  CHECK(!ec);
}
