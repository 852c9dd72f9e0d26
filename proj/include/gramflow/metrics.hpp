#pragma once

#include <string>

namespace gramflow {

// Linear map of raw onto [0, 1] given the metric's (lo, hi) range; values
// outside the range clamp to the endpoints.
double minmax_norm(double raw, double lo, double hi);

// Arithmetic mean of the three core structural sub-scores, inputs in [0, 1].
double motion_score(double bg, double smooth, double subj);

// Extension with the two image-conditioning consistency terms at half weight:
// (bg + smooth + subj + 0.5*i2v_subject + 0.5*i2v_background) / 4.
double ext_motion_score(double bg, double smooth, double subj, double i2v_subject,
                        double i2v_background);

// JSON in, JSON out: {"raw": {...five sub-scores...}, "ranges": {...optional
// [lo, hi] pairs...}} -> normalized values plus both aggregate scores.
// Omitted ranges default to the identity [0, 1].
std::string score_document(const std::string& text);

}  // namespace gramflow
