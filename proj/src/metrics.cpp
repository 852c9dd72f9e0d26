#include "gramflow/metrics.hpp"

#include <algorithm>
#include <array>

#include "gramflow/error.hpp"
#include "json.hpp"

namespace gramflow {

double minmax_norm(double raw, double lo, double hi) {
  require(hi > lo, "normalization range must have max > min");
  return std::clamp((raw - lo) / (hi - lo), 0.0, 1.0);
}

namespace {

void check_unit(double v, const char* name) {
  require(v >= 0.0 && v <= 1.0, std::string(name) + " must lie in [0, 1]");
}

}  // namespace

double motion_score(double bg, double smooth, double subj) {
  check_unit(bg, "background consistency");
  check_unit(smooth, "motion smoothness");
  check_unit(subj, "subject consistency");
  return (bg + smooth + subj) / 3.0;
}

double ext_motion_score(double bg, double smooth, double subj, double i2v_subject,
                        double i2v_background) {
  check_unit(bg, "background consistency");
  check_unit(smooth, "motion smoothness");
  check_unit(subj, "subject consistency");
  check_unit(i2v_subject, "i2v subject consistency");
  check_unit(i2v_background, "i2v background consistency");
  return (bg + smooth + subj + 0.5 * i2v_subject + 0.5 * i2v_background) / 4.0;
}

std::string score_document(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("scores document is not valid JSON: ") + e.what());
  }
  static constexpr std::array<const char*, 5> kNames = {
      "background", "smoothness", "subject", "i2v_subject", "i2v_background"};
  std::array<double, 5> norm{};
  try {
    require_schema(j.is_object() && j.contains("raw"), "scores document needs a 'raw' object");
    const json& raw = j.at("raw");
    const json ranges = j.value("ranges", json::object());
    for (std::size_t i = 0; i < kNames.size(); ++i) {
      require_schema(raw.contains(kNames[i]),
                     std::string("missing raw sub-score '") + kNames[i] + "'");
      double lo = 0.0, hi = 1.0;
      if (ranges.contains(kNames[i])) {
        const json& r = ranges.at(kNames[i]);
        require_schema(r.is_array() && r.size() == 2,
                       std::string("range for '") + kNames[i] + "' must be [min, max]");
        lo = r.at(0).get<double>();
        hi = r.at(1).get<double>();
        require_schema(hi > lo, std::string("range for '") + kNames[i] + "' has max <= min");
      }
      norm[i] = minmax_norm(raw.at(kNames[i]).get<double>(), lo, hi);
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad scores document: ") + e.what());
  }
  json out;
  for (std::size_t i = 0; i < kNames.size(); ++i) out["normalized"][kNames[i]] = norm[i];
  out["motion_score"] = motion_score(norm[0], norm[1], norm[2]);
  out["ext_motion_score"] = ext_motion_score(norm[0], norm[1], norm[2], norm[3], norm[4]);
  return out.dump(2);
}

}  // namespace gramflow
