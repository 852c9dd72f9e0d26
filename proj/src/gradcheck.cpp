#include "gramflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "gramflow/lgf.hpp"
#include "gramflow/ops.hpp"
#include "gramflow/rng.hpp"
#include "gramflow/student.hpp"

namespace gramflow {

double fd_check(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                const Tensor& analytic, double h) {
  require(x.same_shape(analytic), "analytic gradient shape mismatch");
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = loss(probe);
    probe[i] = orig - h;
    const double fm = loss(probe);
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

Tensor rand_tensor(RngStream& rng, const Shape& dims, double scale = 1.0) {
  Tensor t(dims);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

double dot_all(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Collects the worst error per named target across trials.
class Worst {
 public:
  void note(const std::string& target, double err, double tol) {
    auto [it, inserted] = rows_.try_emplace(target, GradCheckResult{target, err, tol});
    if (!inserted) it->second.max_rel_err = std::max(it->second.max_rel_err, err);
  }
  std::vector<GradCheckResult> take() const {
    std::vector<GradCheckResult> out;
    for (const auto& [_, r] : rows_) out.push_back(r);
    return out;
  }

 private:
  std::map<std::string, GradCheckResult> rows_;
};

// Random cotangent that is zero on masked slots, so the probe loss only sees
// slots the operator actually defines.
Tensor masked_cotangent(RngStream& rng, const SimilarityField& sf) {
  Tensor dy(sf.values.dims());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dy[i] = sf.valid[i] ? rng.normal() : 0.0;
  return dy;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_primitives(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngStream rng = RngStream(seed).split(trial);

    {  // conv3d
      const Tensor x = rand_tensor(rng, {2, 4, 4, 3});
      const Tensor w = rand_tensor(rng, {3, 3, 3, 3, 2}, 0.4);
      const Tensor b = rand_tensor(rng, {2});
      const Tensor dy = rand_tensor(rng, {2, 4, 4, 2});
      const Conv3dGrads g = conv3d_backward(x, w, dy);
      worst.note("conv3d/x",
                 fd_check([&](const Tensor& p) { return dot_all(dy, conv3d(p, w, b)); }, x,
                          g.dx),
                 1e-5);
      worst.note("conv3d/weight",
                 fd_check([&](const Tensor& p) { return dot_all(dy, conv3d(x, p, b)); }, w,
                          g.dweight),
                 1e-5);
      worst.note("conv3d/bias",
                 fd_check([&](const Tensor& p) { return dot_all(dy, conv3d(x, w, p)); }, b,
                          g.dbias),
                 1e-5);
    }
    {  // group_norm
      const Tensor x = rand_tensor(rng, {2, 3, 4});
      const Tensor gamma = rand_tensor(rng, {4}, 0.5);
      const Tensor beta = rand_tensor(rng, {4}, 0.5);
      const Tensor dy = rand_tensor(rng, {2, 3, 4});
      const double eps = 1e-5;
      const GroupNormGrads g = group_norm_backward(x, gamma, 2, eps, dy);
      worst.note(
          "group_norm/x",
          fd_check([&](const Tensor& p) { return dot_all(dy, group_norm(p, gamma, beta, 2, eps)); },
                   x, g.dx),
          1e-5);
      worst.note(
          "group_norm/gamma",
          fd_check([&](const Tensor& p) { return dot_all(dy, group_norm(x, p, beta, 2, eps)); },
                   gamma, g.dgamma),
          1e-5);
      worst.note(
          "group_norm/beta",
          fd_check([&](const Tensor& p) { return dot_all(dy, group_norm(x, gamma, p, 2, eps)); },
                   beta, g.dbeta),
          1e-5);
    }
    {  // silu
      const Tensor x = rand_tensor(rng, {40});
      const Tensor dy = rand_tensor(rng, {40});
      worst.note("silu/x",
                 fd_check([&](const Tensor& p) { return dot_all(dy, silu(p)); }, x,
                          silu_backward(x, dy)),
                 1e-5);
    }
    {  // linear
      const Tensor x = rand_tensor(rng, {2, 3, 5});
      const Tensor w = rand_tensor(rng, {4, 5}, 0.5);
      const Tensor b = rand_tensor(rng, {4});
      const Tensor dy = rand_tensor(rng, {2, 3, 4});
      const LinearGrads g = linear_backward(x, w, dy);
      worst.note("linear/x",
                 fd_check([&](const Tensor& p) { return dot_all(dy, linear(p, w, b)); }, x,
                          g.dx),
                 1e-5);
      worst.note("linear/weight",
                 fd_check([&](const Tensor& p) { return dot_all(dy, linear(x, p, b)); }, w,
                          g.dweight),
                 1e-5);
      worst.note("linear/bias",
                 fd_check([&](const Tensor& p) { return dot_all(dy, linear(x, w, p)); }, b,
                          g.dbias),
                 1e-5);
    }
    {  // interp_temporal
      const Tensor x = rand_tensor(rng, {3, 2, 2, 2});
      const Tensor dy = rand_tensor(rng, {7, 2, 2, 2});
      worst.note("interp_temporal/x",
                 fd_check([&](const Tensor& p) { return dot_all(dy, interp_temporal(p, 3)); },
                          x, interp_temporal_backward(x.dims(), 3, dy)),
                 1e-5);
    }
    {  // resample_spatial
      const Tensor x = rand_tensor(rng, {2, 3, 3, 2});
      const Tensor dy = rand_tensor(rng, {2, 5, 4, 2});
      worst.note("resample_spatial/x",
                 fd_check([&](const Tensor& p) { return dot_all(dy, resample_spatial(p, 5, 4)); },
                          x, resample_spatial_backward(x.dims(), dy)),
                 1e-5);
    }
  }
  return worst.take();
}

std::vector<GradCheckResult> gradcheck_lgf(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngStream rng = RngStream(seed).split(trial);
    const Direction dir =
        trial % 2 == 0 ? Direction::forward : Direction::backward_pair;

    const Tensor x = rand_tensor(rng, {3, 4, 4, 3}, 0.6);
    const SimilarityField sf = local_gram_flow(x, 3, dir);
    const Tensor dy = masked_cotangent(rng, sf);
    worst.note("lgf/features",
               fd_check(
                   [&](const Tensor& p) {
                     return dot_all(dy, local_gram_flow(p, 3, dir).values);
                   },
                   x, local_gram_flow_backward(x, 3, dir, dy)),
               1e-5);

    // KL gradient with respect to the student logits.
    const Tensor tx = rand_tensor(rng, {3, 4, 4, 3}, 0.6);
    const ProbField target = temp_softmax(local_gram_flow(tx, 3, Direction::forward), 0.5);
    const SimilarityField q0 = local_gram_flow(x, 3, Direction::forward);
    const KlResult kl = kl_feat_loss(target, q0, 0.5);
    worst.note("kl/logits",
               fd_check(
                   [&](const Tensor& p) {
                     SimilarityField q = q0;
                     q.values = p;
                     return kl_feat_loss(target, q, 0.5).loss;
                   },
                   q0.values, kl.grad),
               1e-5);
  }
  return worst.take();
}

namespace {

ProjectorConfig probe_projector_config(std::uint64_t seed) {
  ProjectorConfig cfg;
  cfg.factor = 2;
  cfg.in_width = 8;
  cfg.hidden1 = 8;
  cfg.hidden2 = 4;
  cfg.out_width = 4;
  // Single wide group and a loose eps keep the normalization well-conditioned
  // for h = 1e-5 probes: near-degenerate few-channel groups have curvature
  // ~ eps^(-3/2), which at the production 1e-5 turns finite differences into
  // noise without saying anything about the analytic gradient.  The grouped
  // path gets its own finite-difference coverage in the primitives suite.
  cfg.gn_groups = 1;
  cfg.gn_eps = 0.1;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_projector(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngStream rng = RngStream(seed).split(trial);
    ProjectorModel m(probe_projector_config(rng.next_u64()));
    const Tensor x = rand_tensor(rng, {2, 3, 3, 8}, 0.5);
    const std::size_t tt = 3, th = 5, tw = 4;
    const Tensor dy = rand_tensor(rng, {tt, th, tw, 4});

    auto loss_at_input = [&](const Tensor& p) {
      return dot_all(dy, projector_forward(m, p, tt, th, tw).out);
    };
    for (auto& [name, param] : m.trainable()) param->zero_grad();
    const ProjectorFwd fwd = projector_forward(m, x, tt, th, tw);
    const Tensor dx = projector_backward(m, fwd, dy);
    worst.note("projector/input", fd_check(loss_at_input, x, dx), 1e-5);

    for (auto& [name, param] : m.trainable()) {
      auto loss_at_param = [&](const Tensor& p) {
        const Tensor saved = param->value;
        param->value = p;
        const double v = dot_all(dy, projector_forward(m, x, tt, th, tw).out);
        param->value = saved;
        return v;
      };
      worst.note(name, fd_check(loss_at_param, param->value, param->grad), 1e-5);
    }
  }
  return worst.take();
}

std::vector<GradCheckResult> gradcheck_end_to_end(std::uint64_t seed, std::size_t trials) {
  Worst worst;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngStream rng = RngStream(seed).split(trial);
    const std::size_t tt = 3, th = 4, tw = 4, tc = 4;
    const double temp = 0.1;

    const Tensor teacher = rand_tensor(rng, {tt, th, tw, tc}, 0.5);
    const ProbField target =
        temp_softmax(local_gram_flow(teacher, 3, Direction::forward), temp);

    ProjectorConfig pcfg = probe_projector_config(rng.next_u64());
    pcfg.out_width = tc;
    ProjectorModel m(pcfg);
    const Tensor x = rand_tensor(rng, {2, 3, 3, 8}, 0.5);

    auto loss = [&](const Tensor& p) {
      const ProjectorFwd f = projector_forward(m, p, tt, th, tw);
      return kl_feat_loss(target, local_gram_flow(f.out, 3, Direction::forward), temp).loss;
    };
    for (auto& [name, param] : m.trainable()) param->zero_grad();
    const ProjectorFwd fwd = projector_forward(m, x, tt, th, tw);
    const KlResult kl =
        kl_feat_loss(target, local_gram_flow(fwd.out, 3, Direction::forward), temp);
    const Tensor dfhat = local_gram_flow_backward(fwd.out, 3, Direction::forward, kl.grad);
    const Tensor dx = projector_backward(m, fwd, dfhat);
    worst.note("end-to-end/F_diff", fd_check(loss, x, dx), 1e-4);
  }
  return worst.take();
}

}  // namespace gramflow
