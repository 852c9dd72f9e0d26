#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gramflow/tensor.hpp"

namespace gramflow {

enum class ShapeKind { disc, two_link };
enum class Trajectory { linear, sinusoidal, regime_switch };

std::string shape_kind_name(ShapeKind s);
ShapeKind shape_kind_from_name(const std::string& name);
std::string trajectory_name(Trajectory t);
Trajectory trajectory_from_name(const std::string& name);

// A single-subject synthetic clip: shape geometry and start pose are drawn
// from the seed, motion comes from (trajectory, velocity).
struct SceneConfig {
  std::size_t frames = 13;
  std::size_t height = 32;
  std::size_t width = 32;
  ShapeKind shape = ShapeKind::disc;
  Trajectory trajectory = Trajectory::linear;
  double vx = 1.0;  // px/frame
  double vy = 0.0;
  std::uint64_t seed = 0;
};

// Grayscale video (N, H, W, 1), intensities in [0, 1], anti-aliased edges.
// Deterministic per seed; throws if the subject would leave a 1 px margin.
Tensor gen_synthetic_video(const SceneConfig& cfg);

// Subject center per frame as (x, y); exposed so the geometry stays
// analytically checkable.
std::vector<std::pair<double, double>> scene_centers(const SceneConfig& cfg);

// Non-overlapping p x p patches of each frame through one fixed seeded
// linear projection (no bias): output (N, H/p, W/p, channels).  Matrix
// entries are normal draws in (channel, patch-element) order, scaled by
// gain / sqrt(patch size).
Tensor frame_embed(const Tensor& video, std::size_t patch, std::size_t channels,
                   std::uint64_t seed, double gain = 1.0);

// Causal EMA memory: F_0 = e_0, F_t = rho*F_{t-1} + (1-rho)*e_t.
Tensor causal_memory(const Tensor& embeds, double rho);

// Memory of the reversed clip remapped to original order, so bwd[t] depends
// only on frames t..N-1 and bwd[N-1] = e_{N-1}.
Tensor backward_memory(const Tensor& embeds, double rho);

// Reverse along the leading (time) axis.
Tensor reverse_frames(const Tensor& x);

struct TeacherConfig {
  double rho = 0.7;
  std::size_t patch = 4;
  std::size_t channels = 32;
  std::uint64_t embed_seed = 101;
  double embed_gain = 0.15;
};

struct ClipCache {
  SceneConfig scene;
  TeacherConfig teacher;
  Tensor video;  // (N, H, W, 1)
  Tensor fwd;    // (N, H/p, W/p, C_t)
  Tensor bwd;    // same, remapped to original order
};

ClipCache build_clip(const SceneConfig& scene, const TeacherConfig& teacher);

// One directory per clip: video.lgft, fwd.lgft, bwd.lgft, meta.json.
void write_clip_cache(const std::filesystem::path& dir, const ClipCache& clip);
ClipCache read_clip_cache(const std::filesystem::path& dir);

// Clip directories under root (those holding a meta.json), sorted by name.
std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& root);

}  // namespace gramflow
