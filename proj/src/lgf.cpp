#include "gramflow/lgf.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "gramflow/io.hpp"
#include "json.hpp"

namespace gramflow {

std::string direction_name(Direction d) {
  return d == Direction::forward ? "forward" : "backward-pair";
}

Direction direction_from_name(const std::string& name) {
  if (name == "forward") return Direction::forward;
  if (name == "backward-pair") return Direction::backward_pair;
  throw SchemaError("unknown direction '" + name + "'");
}

std::string fusion_mode_name(FusionMode m) {
  return m == FusionMode::lgf_space ? "lgf-space" : "feature-space";
}

FusionMode fusion_mode_from_name(const std::string& name) {
  if (name == "lgf-space") return FusionMode::lgf_space;
  if (name == "feature-space") return FusionMode::feature_space;
  throw SchemaError("unknown fusion mode '" + name + "'");
}

SimilarityField local_gram_flow(const Tensor& features, std::size_t window,
                                Direction direction) {
  require(features.rank() == 4, "features must be (T, H, W, C)");
  const std::size_t T = features.dim(0), H = features.dim(1), W = features.dim(2),
                    C = features.dim(3);
  require(T >= 2, "need at least 2 frames");
  require(window % 2 == 1, "window must be odd");
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(window / 2);
  const std::size_t K = window * window;

  SimilarityField out;
  out.values = Tensor({T - 1, H, W, K});
  out.valid.assign(out.values.size(), 0);
  out.window = window;
  out.direction = direction;

  for (std::size_t s = 0; s < T - 1; ++s) {
    // The token frame is the later one under backward-pair so that the field
    // matches the forward field of the reversed clip slice for slice.
    const std::size_t tok_t = direction == Direction::forward ? s : s + 1;
    const std::size_t nbr_t = direction == Direction::forward ? s + 1 : s;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double* tok = features.data() + features.offset({tok_t, i, j, 0});
        const std::size_t base = out.values.offset({s, i, j, 0});
        for (std::ptrdiff_t dh = -r; dh <= r; ++dh) {
          const std::ptrdiff_t ni = static_cast<std::ptrdiff_t>(i) + dh;
          if (ni < 0 || ni >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::ptrdiff_t dw = -r; dw <= r; ++dw) {
            const std::ptrdiff_t nj = static_cast<std::ptrdiff_t>(j) + dw;
            if (nj < 0 || nj >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t slot =
                static_cast<std::size_t>(dh + r) * window + static_cast<std::size_t>(dw + r);
            const double* nbr = features.data() +
                                features.offset({nbr_t, static_cast<std::size_t>(ni),
                                                 static_cast<std::size_t>(nj), 0});
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += tok[c] * nbr[c];
            out.values[base + slot] = dot;
            out.valid[base + slot] = 1;
          }
        }
      }
  }
  return out;
}

Tensor local_gram_flow_backward(const Tensor& features, std::size_t window,
                                Direction direction, const Tensor& dvalues) {
  const std::size_t T = features.dim(0), H = features.dim(1), W = features.dim(2),
                    C = features.dim(3);
  require(dvalues.rank() == 4 && dvalues.dim(0) == T - 1 && dvalues.dim(1) == H &&
              dvalues.dim(2) == W && dvalues.dim(3) == window * window,
          "local_gram_flow_backward dvalues shape mismatch");
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(window / 2);

  Tensor dfeat(features.dims());
  for (std::size_t s = 0; s < T - 1; ++s) {
    const std::size_t tok_t = direction == Direction::forward ? s : s + 1;
    const std::size_t nbr_t = direction == Direction::forward ? s + 1 : s;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t tok_off = features.offset({tok_t, i, j, 0});
        const double* tok = features.data() + tok_off;
        double* dtok = dfeat.data() + tok_off;
        const std::size_t base = dvalues.offset({s, i, j, 0});
        for (std::ptrdiff_t dh = -r; dh <= r; ++dh) {
          const std::ptrdiff_t ni = static_cast<std::ptrdiff_t>(i) + dh;
          if (ni < 0 || ni >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::ptrdiff_t dw = -r; dw <= r; ++dw) {
            const std::ptrdiff_t nj = static_cast<std::ptrdiff_t>(j) + dw;
            if (nj < 0 || nj >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t slot =
                static_cast<std::size_t>(dh + r) * window + static_cast<std::size_t>(dw + r);
            const double dv = dvalues[base + slot];
            if (dv == 0.0) continue;
            const std::size_t nbr_off = features.offset({nbr_t, static_cast<std::size_t>(ni),
                                                         static_cast<std::size_t>(nj), 0});
            const double* nbr = features.data() + nbr_off;
            double* dnbr = dfeat.data() + nbr_off;
            for (std::size_t c = 0; c < C; ++c) {
              dtok[c] += dv * nbr[c];
              dnbr[c] += dv * tok[c];
            }
          }
        }
      }
  }
  return dfeat;
}

ProbField temp_softmax(const SimilarityField& sims, double temp) {
  require(temp > 0.0, "temperature must be positive");
  const std::size_t K = sims.window * sims.window;
  const std::size_t tokens = sims.num_tokens();

  ProbField out;
  out.probs = Tensor(sims.values.dims());
  out.valid = sims.valid;
  out.temperature = temp;

  for (std::size_t n = 0; n < tokens; ++n) {
    const double* z = sims.values.data() + n * K;
    const std::uint8_t* m = sims.valid.data() + n * K;
    double* p = out.probs.data() + n * K;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k)
      if (m[k] && z[k] / temp > zmax) zmax = z[k] / temp;
    require(std::isfinite(zmax), "token has no valid neighborhood slot");
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (!m[k]) continue;
      p[k] = std::exp(z[k] / temp - zmax);
      total += p[k];
    }
    for (std::size_t k = 0; k < K; ++k)
      if (m[k]) p[k] /= total;
  }
  return out;
}

KlResult kl_feat_loss(const ProbField& P, const SimilarityField& Q_logits, double temp) {
  require(P.probs.same_shape(Q_logits.values), "P and Q_logits shape mismatch");
  require(P.valid == Q_logits.valid, "P and Q_logits mask mismatch");
  const std::size_t K = Q_logits.window * Q_logits.window;
  const std::size_t tokens = Q_logits.num_tokens();
  const double num_tokens = static_cast<double>(tokens);

  const ProbField Q = temp_softmax(Q_logits, temp);

  KlResult res;
  res.grad = Tensor(Q_logits.values.dims());
  for (std::size_t n = 0; n < tokens; ++n) {
    const double* p = P.probs.data() + n * K;
    const double* q = Q.probs.data() + n * K;
    const std::uint8_t* m = P.valid.data() + n * K;
    double* g = res.grad.data() + n * K;
    for (std::size_t k = 0; k < K; ++k) {
      if (!m[k]) {
        require(p[k] == 0.0, "teacher probability mass on an invalid slot");
        continue;
      }
      if (p[k] > 0.0) res.loss += p[k] * std::log(p[k] / q[k]) / num_tokens;
      g[k] = (q[k] - p[k]) / (temp * num_tokens);
    }
  }
  return res;
}

SimilarityField fuse_lgf(const SimilarityField& S_fwd, const SimilarityField& S_bwd,
                         double k) {
  require(S_fwd.values.same_shape(S_bwd.values) && S_fwd.window == S_bwd.window,
          "similarity fields must share shape and window");
  require(S_fwd.valid == S_bwd.valid, "similarity field mask mismatch");
  require(k >= 0.0 && k <= 1.0, "fusion weight k must lie in [0, 1]");

  SimilarityField out;
  out.valid = S_fwd.valid;
  out.window = S_fwd.window;
  out.direction = S_fwd.direction;
  // Boundary weights reproduce an input bitwise (blending with weight 0 is
  // not an exact copy for signed zeros).
  const SimilarityField* whole = k == 1.0 ? &S_fwd : (k == 0.0 ? &S_bwd : nullptr);
  if (whole) {
    out.values = whole->values;
    return out;
  }
  out.values = Tensor(S_fwd.values.dims());
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (S_fwd.valid[i]) out.values[i] = k * S_fwd.values[i] + (1.0 - k) * S_bwd.values[i];
  return out;
}

Tensor fuse_feature_space(const Tensor& F_fwd, const Tensor& F_bwd, double k) {
  require(F_fwd.same_shape(F_bwd), "feature maps must share shape");
  if (k == 1.0) return F_fwd;
  if (k == 0.0) return F_bwd;
  Tensor out(F_fwd.dims());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = k * F_fwd[i] + (1.0 - k) * F_bwd[i];
  return out;
}

namespace {

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

}  // namespace

FusionGap fusion_gap(const std::vector<double>& a, const std::vector<double>& b,
                     const std::vector<double>& c, const std::vector<double>& d,
                     double k) {
  require(a.size() == b.size() && a.size() == c.size() && a.size() == d.size(),
          "fusion_gap vectors must have equal length");
  const std::size_t n = a.size();
  std::vector<double> fused_ab(n), fused_cd(n), amb(n), dmc(n);
  for (std::size_t i = 0; i < n; ++i) {
    fused_ab[i] = k * a[i] + (1.0 - k) * b[i];
    fused_cd[i] = k * c[i] + (1.0 - k) * d[i];
    amb[i] = a[i] - b[i];
    dmc[i] = d[i] - c[i];
  }
  FusionGap r;
  r.g_feat = dot(fused_ab, fused_cd);
  r.g_lgf = k * dot(a, c) + (1.0 - k) * dot(b, d);
  r.gap = r.g_feat - r.g_lgf;

  const double expanded = k * k * dot(a, c) + (1.0 - k) * (1.0 - k) * dot(b, d) +
                          k * (1.0 - k) * (dot(a, d) + dot(b, c));
  require(std::abs(r.g_feat - expanded) < 1e-10, "cross-term expansion identity violated");
  require(std::abs(r.gap - k * (1.0 - k) * dot(amb, dmc)) < 1e-10,
          "gap identity violated");
  return r;
}

void save_similarity_field(const std::filesystem::path& prefix, const SimilarityField& f) {
  lgft_write(std::filesystem::path(prefix.string() + ".values.lgft"), f.values);
  lgft_write_u8(std::filesystem::path(prefix.string() + ".valid.lgft"),
                f.values.dims(), f.valid);
  nlohmann::json meta{{"window", f.window}, {"direction", direction_name(f.direction)}};
  std::ofstream os(prefix.string() + ".json");
  require_schema(os.good(), "cannot write sidecar for " + prefix.string());
  os << meta.dump(2) << "\n";
}

SimilarityField load_similarity_field(const std::filesystem::path& prefix) {
  SimilarityField f;
  f.values = lgft_read(std::filesystem::path(prefix.string() + ".values.lgft"));
  auto [dims, mask] = lgft_read_u8(std::filesystem::path(prefix.string() + ".valid.lgft"));
  require_schema(dims == f.values.dims(), "mask shape differs from values shape");
  f.valid = std::move(mask);
  std::ifstream is(prefix.string() + ".json");
  require_schema(is.good(), "missing sidecar for " + prefix.string());
  nlohmann::json meta;
  try {
    is >> meta;
    f.window = meta.at("window").get<std::size_t>();
    f.direction = direction_from_name(meta.at("direction").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad sidecar: ") + e.what());
  }
  require_schema(f.window * f.window == f.values.dim(3),
                 "sidecar window inconsistent with values shape");
  return f;
}

}  // namespace gramflow
