#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gramflow/tensor.hpp"

namespace gramflow {

enum class Direction { forward, backward_pair };

std::string direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Per-token similarities against a w x w neighborhood in the paired frame.
// values is (T-1, H, W, w*w); valid marks in-bounds neighbors (invalid slots
// hold 0 and carry no information).
struct SimilarityField {
  Tensor values;
  std::vector<std::uint8_t> valid;
  std::size_t window = 0;
  Direction direction = Direction::forward;

  std::size_t num_tokens() const { return values.size() / (window * window); }
  bool same_layout(const SimilarityField& o) const {
    return values.same_shape(o.values) && valid == o.valid && window == o.window;
  }
};

// Per-token distribution over the valid neighborhood slots.
struct ProbField {
  Tensor probs;
  std::vector<std::uint8_t> valid;
  double temperature = 0.0;
};

// Dot products between each token at frame t and the w x w neighborhood
// centred on it in frame t+1 (forward) or t-1 (backward-pair, where output
// slice s pairs frame s+1 with frame s).
SimilarityField local_gram_flow(const Tensor& features, std::size_t window,
                                Direction direction);

// Gradient of the similarity values w.r.t. the features that produced them;
// dvalues must be shaped like the field's values and zero at invalid slots.
Tensor local_gram_flow_backward(const Tensor& features, std::size_t window,
                                Direction direction, const Tensor& dvalues);

// Max-subtracted softmax over each token's valid slots at temperature `temp`.
ProbField temp_softmax(const SimilarityField& sims, double temp);

struct KlResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d Q_logits, zero at invalid slots
};

// Mean over tokens of KL(P || softmax(Q_logits / temp)).  P is the detached
// teacher; the gradient is (Q - P) / (temp * numTokens) at valid slots.
KlResult kl_feat_loss(const ProbField& P, const SimilarityField& Q_logits, double temp);

enum class FusionMode { lgf_space, feature_space };

std::string fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& name);

// Convex combination k*fwd + (1-k)*bwd of similarity fields; the boundary
// weights return bitwise copies of the corresponding input.
SimilarityField fuse_lgf(const SimilarityField& S_fwd, const SimilarityField& S_bwd,
                         double k);

// The degraded baseline: the same combination applied to raw feature maps.
Tensor fuse_feature_space(const Tensor& F_fwd, const Tensor& F_bwd, double k);

struct FusionGap {
  double g_feat = 0.0;
  double g_lgf = 0.0;
  double gap = 0.0;
};

// Similarity of fused features vs fused similarities for one token pair with
// directional features (a, b) and (c, d).  Checks both closed forms:
// g_feat = k^2 (a.c) + (1-k)^2 (b.d) + k(1-k)(a.d + b.c) and
// gap = k(1-k) (a-b).(d-c).
FusionGap fusion_gap(const std::vector<double>& a, const std::vector<double>& b,
                     const std::vector<double>& c, const std::vector<double>& d,
                     double k);

// Values + parallel u8 mask on disk, window/direction in a JSON sidecar.
void save_similarity_field(const std::filesystem::path& prefix, const SimilarityField& f);
SimilarityField load_similarity_field(const std::filesystem::path& prefix);

}  // namespace gramflow
