#include "gramflow/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "gramflow/io.hpp"
#include "gramflow/rng.hpp"
#include "json.hpp"

namespace gramflow {

std::string shape_kind_name(ShapeKind s) {
  return s == ShapeKind::disc ? "disc" : "two-link";
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "disc") return ShapeKind::disc;
  if (name == "two-link") return ShapeKind::two_link;
  throw SchemaError("unknown shape kind '" + name + "'");
}

std::string trajectory_name(Trajectory t) {
  switch (t) {
    case Trajectory::linear: return "linear";
    case Trajectory::sinusoidal: return "sinusoidal";
    default: return "regime-switch";
  }
}

Trajectory trajectory_from_name(const std::string& name) {
  if (name == "linear") return Trajectory::linear;
  if (name == "sinusoidal") return Trajectory::sinusoidal;
  if (name == "regime-switch") return Trajectory::regime_switch;
  throw SchemaError("unknown trajectory '" + name + "'");
}

namespace {

constexpr double kPi = std::numbers::pi;

struct SceneGeometry {
  double cx0, cy0;      // start center
  double radius;        // disc radius
  double link_len;      // per-link length (two-link)
  double half_width;    // bar half-width (two-link)
  double base_angle;    // first link orientation
  double elbow0;        // resting elbow angle
};

SceneGeometry scene_geometry(const SceneConfig& cfg) {
  RngStream rng(cfg.seed);
  SceneGeometry g;
  const double h = static_cast<double>(cfg.height);
  const double w = static_cast<double>(cfg.width);
  // Discs start left of center to leave room for rightward travel; the
  // two-link arm has a much larger reach, so it starts near center with
  // shorter links and relies on the config keeping velocities moderate.
  if (cfg.shape == ShapeKind::disc) {
    g.cx0 = w * 0.25 + rng.uniform() * w * 0.08;
    g.cy0 = h * 0.45 + rng.uniform() * h * 0.1;
  } else {
    g.cx0 = w * 0.42 + rng.uniform() * w * 0.06;
    g.cy0 = h * 0.46 + rng.uniform() * h * 0.08;
  }
  g.radius = 3.5 + rng.uniform() * 1.5;
  g.link_len = 2.0 + rng.uniform() * 0.5;
  g.half_width = 1.2;
  g.base_angle = rng.uniform() * 2.0 * kPi;
  g.elbow0 = 0.5 + rng.uniform() * 0.5;
  return g;
}

double bounding_radius(const SceneConfig& cfg, const SceneGeometry& g) {
  // +0.5 covers the anti-aliasing skirt.
  if (cfg.shape == ShapeKind::disc) return g.radius + 0.5;
  return 2.0 * g.link_len + g.half_width + 0.5;
}

// Signed offset of frame t along the trajectory; regime-switch reflects the
// x-velocity at mid-clip so early and late halves move oppositely.
std::pair<double, double> traj_offset(const SceneConfig& cfg, std::size_t t) {
  const double ft = static_cast<double>(t);
  const double n = static_cast<double>(cfg.frames);
  switch (cfg.trajectory) {
    case Trajectory::linear:
      return {cfg.vx * ft, cfg.vy * ft};
    case Trajectory::sinusoidal: {
      const double amp_x = cfg.vx * n / 6.0;
      const double amp_y = cfg.vy * n / 6.0;
      const double phase = 2.0 * kPi * ft / n;
      return {amp_x * std::sin(phase), amp_y * std::sin(phase)};
    }
    default: {
      const double mid = (n - 1.0) / 2.0;
      const double folded = ft <= mid ? ft : 2.0 * mid - ft;
      return {cfg.vx * folded, cfg.vy * ft};
    }
  }
}

double dist_to_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double u = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double qx = ax + u * dx, qy = ay + u * dy;
  return std::hypot(px - qx, py - qy);
}

double coverage(double signed_inside) {
  // 1 px linear anti-aliasing ramp around the silhouette boundary.
  return std::clamp(signed_inside + 0.5, 0.0, 1.0);
}

}  // namespace

std::vector<std::pair<double, double>> scene_centers(const SceneConfig& cfg) {
  const SceneGeometry g = scene_geometry(cfg);
  std::vector<std::pair<double, double>> centers(cfg.frames);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const auto [ox, oy] = traj_offset(cfg, t);
    centers[t] = {g.cx0 + ox, g.cy0 + oy};
  }
  return centers;
}

Tensor gen_synthetic_video(const SceneConfig& cfg) {
  require(cfg.frames >= 4, "scene needs at least 4 frames");
  require(cfg.height >= 8 && cfg.width >= 8, "frame too small for a subject");
  const SceneGeometry g = scene_geometry(cfg);
  const auto centers = scene_centers(cfg);
  const double bound = bounding_radius(cfg, g);
  for (const auto& [cx, cy] : centers)
    require(cx - bound >= 1.0 && cx + bound <= static_cast<double>(cfg.width) - 2.0 &&
                cy - bound >= 1.0 && cy + bound <= static_cast<double>(cfg.height) - 2.0,
            "subject would exit the frame");

  Tensor video({cfg.frames, cfg.height, cfg.width, 1});
  double travelled = 0.0;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const auto [cx, cy] = centers[t];
    if (t > 0)
      travelled += std::hypot(cx - centers[t - 1].first, cy - centers[t - 1].second);
    // Articulation follows distance travelled so a static scene stays static.
    const double elbow = g.elbow0 + 0.8 * std::sin(2.0 * kPi * travelled / 16.0);
    const double ex = cx + g.link_len * std::cos(g.base_angle);
    const double ey = cy + g.link_len * std::sin(g.base_angle);
    const double fx = ex + g.link_len * std::cos(g.base_angle + elbow);
    const double fy = ey + g.link_len * std::sin(g.base_angle + elbow);
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        double v;
        if (cfg.shape == ShapeKind::disc) {
          v = coverage(g.radius - std::hypot(px - cx, py - cy));
        } else {
          const double d1 = dist_to_segment(px, py, cx, cy, ex, ey);
          const double d2 = dist_to_segment(px, py, ex, ey, fx, fy);
          v = coverage(g.half_width - std::min(d1, d2));
        }
        video[video.offset({t, y, x, 0})] = v;
      }
  }
  return video;
}

Tensor frame_embed(const Tensor& video, std::size_t patch, std::size_t channels,
                   std::uint64_t seed, double gain) {
  require(video.rank() == 4, "video must be (N, H, W, C)");
  const std::size_t N = video.dim(0), H = video.dim(1), W = video.dim(2),
                    Cpix = video.dim(3);
  require(patch >= 1 && H % patch == 0 && W % patch == 0,
          "frame extents must be divisible by the patch size");
  require(channels >= 1, "need at least one embedding channel");
  const std::size_t pd = patch * patch * Cpix;

  // One fixed projection for the whole clip, regenerated from the seed.
  RngStream rng(seed);
  const double scale = gain / std::sqrt(static_cast<double>(pd));
  std::vector<double> proj(channels * pd);
  for (double& w : proj) w = rng.normal() * scale;

  const std::size_t gh = H / patch, gw = W / patch;
  Tensor out({N, gh, gw, channels});
  std::vector<double> pv(pd);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t gi = 0; gi < gh; ++gi)
      for (std::size_t gj = 0; gj < gw; ++gj) {
        std::size_t idx = 0;
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx)
            for (std::size_t c = 0; c < Cpix; ++c)
              pv[idx++] = video[video.offset({n, gi * patch + dy, gj * patch + dx, c})];
        double* dst = out.data() + out.offset({n, gi, gj, 0});
        for (std::size_t c = 0; c < channels; ++c) {
          const double* row = proj.data() + c * pd;
          double acc = 0.0;
          for (std::size_t j = 0; j < pd; ++j) acc += row[j] * pv[j];
          dst[c] = acc;
        }
      }
  return out;
}

Tensor causal_memory(const Tensor& embeds, double rho) {
  require(embeds.rank() >= 1, "embeddings must have a leading time axis");
  require(rho > 0.0 && rho < 1.0, "decay must lie in (0, 1)");
  const std::size_t N = embeds.dim(0);
  const std::size_t frame = embeds.size() / N;
  Tensor mem(embeds.dims());
  for (std::size_t i = 0; i < frame; ++i) mem[i] = embeds[i];
  for (std::size_t t = 1; t < N; ++t) {
    const double* e = embeds.data() + t * frame;
    const double* prev = mem.data() + (t - 1) * frame;
    double* cur = mem.data() + t * frame;
    for (std::size_t i = 0; i < frame; ++i) cur[i] = rho * prev[i] + (1.0 - rho) * e[i];
  }
  return mem;
}

Tensor backward_memory(const Tensor& embeds, double rho) {
  return reverse_frames(causal_memory(reverse_frames(embeds), rho));
}

Tensor reverse_frames(const Tensor& x) {
  require(x.rank() >= 1, "need a leading time axis to reverse");
  const std::size_t N = x.dim(0);
  const std::size_t frame = x.size() / N;
  Tensor out(x.dims());
  for (std::size_t t = 0; t < N; ++t) {
    const double* src = x.data() + t * frame;
    double* dst = out.data() + (N - 1 - t) * frame;
    for (std::size_t i = 0; i < frame; ++i) dst[i] = src[i];
  }
  return out;
}

ClipCache build_clip(const SceneConfig& scene, const TeacherConfig& teacher) {
  ClipCache clip;
  clip.scene = scene;
  clip.teacher = teacher;
  clip.video = gen_synthetic_video(scene);
  const Tensor embeds = frame_embed(clip.video, teacher.patch, teacher.channels,
                                    teacher.embed_seed, teacher.embed_gain);
  clip.fwd = causal_memory(embeds, teacher.rho);
  clip.bwd = backward_memory(embeds, teacher.rho);
  return clip;
}

namespace {

nlohmann::json scene_to_json(const SceneConfig& s) {
  return {{"frames", s.frames},         {"height", s.height},
          {"width", s.width},           {"shape", shape_kind_name(s.shape)},
          {"trajectory", trajectory_name(s.trajectory)},
          {"velocity", {s.vx, s.vy}},   {"seed", s.seed}};
}

SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig s;
  s.frames = j.at("frames").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.shape = shape_kind_from_name(j.at("shape").get<std::string>());
  s.trajectory = trajectory_from_name(j.at("trajectory").get<std::string>());
  const auto& v = j.at("velocity");
  require_schema(v.is_array() && v.size() == 2, "velocity must be [vx, vy]");
  s.vx = v[0].get<double>();
  s.vy = v[1].get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

void write_clip_cache(const std::filesystem::path& dir, const ClipCache& clip) {
  std::filesystem::create_directories(dir);
  lgft_write(dir / "video.lgft", clip.video);
  lgft_write(dir / "fwd.lgft", clip.fwd);
  lgft_write(dir / "bwd.lgft", clip.bwd);
  nlohmann::json meta{{"scene", scene_to_json(clip.scene)},
                      {"rho", clip.teacher.rho},
                      {"patch", clip.teacher.patch},
                      {"channels", clip.teacher.channels},
                      {"embed_seed", clip.teacher.embed_seed},
                      {"embed_gain", clip.teacher.embed_gain}};
  std::ofstream os(dir / "meta.json");
  require_schema(os.good(), "cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << "\n";
}

ClipCache read_clip_cache(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  require_schema(is.good(), "missing clip metadata in " + dir.string());
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad clip metadata: " + std::string(e.what()));
  }
  ClipCache clip;
  try {
    clip.scene = scene_from_json(meta.at("scene"));
    clip.teacher.rho = meta.at("rho").get<double>();
    clip.teacher.patch = meta.at("patch").get<std::size_t>();
    clip.teacher.channels = meta.at("channels").get<std::size_t>();
    clip.teacher.embed_seed = meta.at("embed_seed").get<std::uint64_t>();
    clip.teacher.embed_gain = meta.at("embed_gain").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad clip metadata: " + std::string(e.what()));
  }
  clip.video = lgft_read(dir / "video.lgft");
  clip.fwd = lgft_read(dir / "fwd.lgft");
  clip.bwd = lgft_read(dir / "bwd.lgft");
  require_schema(clip.fwd.same_shape(clip.bwd), "fwd/bwd teacher shapes differ");
  return clip;
}

std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& root) {
  require_schema(std::filesystem::is_directory(root),
                 "teacher cache missing: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace gramflow
