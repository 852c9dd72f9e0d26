#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gramflow/io.hpp"
#include "gramflow/lgf.hpp"
#include "gramflow/metrics.hpp"
#include "gramflow/student.hpp"
#include "gramflow/teacher.hpp"

namespace py = pybind11;
using namespace gramflow;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DArray& a) {
  require(a.ndim() >= 1, "array must have at least one dimension");
  Shape dims(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    dims[static_cast<std::size_t>(i)] = static_cast<std::size_t>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(dims, std::move(data));
}

py::array array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (std::size_t d : t.dims()) shape.push_back(static_cast<py::ssize_t>(d));
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

py::array mask_from_field(const SimilarityField& f) {
  std::vector<py::ssize_t> shape;
  for (std::size_t d : f.values.dims()) shape.push_back(static_cast<py::ssize_t>(d));
  py::array_t<bool> out(shape);
  for (std::size_t i = 0; i < f.valid.size(); ++i) out.mutable_data()[i] = f.valid[i] != 0;
  return out;
}

std::vector<std::uint8_t> mask_from_array(const py::array& mask, std::size_t want) {
  const auto m = py::array_t<bool, py::array::c_style | py::array::forcecast>::ensure(mask);
  require(static_cast<std::size_t>(m.size()) == want, "mask size mismatch");
  std::vector<std::uint8_t> out(want);
  for (std::size_t i = 0; i < want; ++i) out[i] = m.data()[i] ? 1 : 0;
  return out;
}

SimilarityField field_from_arrays(const DArray& values, const py::array& valid,
                                  std::size_t window, const std::string& direction) {
  SimilarityField f;
  f.values = tensor_from_array(values);
  f.valid = mask_from_array(valid, f.values.size());
  f.window = window;
  f.direction = direction_from_name(direction);
  return f;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Local similarity-flow distillation core";

  py::register_exception<SchemaError>(m, "SchemaError");

  m.def(
      "local_gram_flow",
      [](const DArray& features, std::size_t window, const std::string& direction) {
        const SimilarityField f =
            local_gram_flow(tensor_from_array(features), window,
                            direction_from_name(direction));
        return py::make_tuple(array_from_tensor(f.values), mask_from_field(f));
      },
      py::arg("features"), py::arg("window") = 7, py::arg("direction") = "forward",
      "Per-token dot products against the paired frame's w x w neighborhood; "
      "returns (values, valid_mask).");

  m.def(
      "temp_softmax",
      [](const DArray& values, const py::array& valid, std::size_t window,
         double temperature) {
        const ProbField p =
            temp_softmax(field_from_arrays(values, valid, window, "forward"), temperature);
        return array_from_tensor(p.probs);
      },
      py::arg("values"), py::arg("valid"), py::arg("window"), py::arg("temperature"),
      "Max-subtracted softmax over each token's valid slots.");

  m.def(
      "kl_feat_loss",
      [](const DArray& p_probs, const DArray& q_values, const py::array& valid,
         std::size_t window, double temperature) {
        const SimilarityField q = field_from_arrays(q_values, valid, window, "forward");
        ProbField p;
        p.probs = tensor_from_array(p_probs);
        p.valid = q.valid;
        p.temperature = temperature;
        const KlResult r = kl_feat_loss(p, q, temperature);
        return py::make_tuple(r.loss, array_from_tensor(r.grad));
      },
      py::arg("teacher_probs"), py::arg("student_values"), py::arg("valid"),
      py::arg("window"), py::arg("temperature"),
      "Mean token KL(teacher || softmax(student/T)); returns (loss, grad).");

  m.def(
      "fuse_lgf",
      [](const DArray& fwd, const DArray& bwd, const py::array& valid, std::size_t window,
         double k) {
        const SimilarityField f =
            fuse_lgf(field_from_arrays(fwd, valid, window, "forward"),
                     field_from_arrays(bwd, valid, window, "forward"), k);
        return array_from_tensor(f.values);
      },
      py::arg("fwd"), py::arg("bwd"), py::arg("valid"), py::arg("window"), py::arg("k"),
      "Convex combination k*fwd + (1-k)*bwd of similarity fields.");

  m.def(
      "fuse_feature_space",
      [](const DArray& fwd, const DArray& bwd, double k) {
        return array_from_tensor(
            fuse_feature_space(tensor_from_array(fwd), tensor_from_array(bwd), k));
      },
      py::arg("fwd"), py::arg("bwd"), py::arg("k"));

  m.def(
      "fusion_gap",
      [](const std::vector<double>& a, const std::vector<double>& b,
         const std::vector<double>& c, const std::vector<double>& d, double k) {
        const FusionGap g = fusion_gap(a, b, c, d, k);
        return py::make_tuple(g.g_feat, g.g_lgf, g.gap);
      },
      py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"), py::arg("k"),
      "Fused-feature vs fused-similarity dot products: (g_feat, g_lgf, gap).");

  m.def(
      "alpha_sigma",
      [](double t) {
        const AlphaSigma s = alpha_sigma(t);
        return py::make_tuple(s.alpha, s.sigma);
      },
      py::arg("t"), "Cosine noise schedule (alpha, sigma) at t in [0, 1].");

  m.def("minmax_norm", &minmax_norm, py::arg("raw"), py::arg("lo"), py::arg("hi"));
  m.def("motion_score", &motion_score, py::arg("bg"), py::arg("smooth"), py::arg("subj"));
  m.def("ext_motion_score", &ext_motion_score, py::arg("bg"), py::arg("smooth"),
        py::arg("subj"), py::arg("i2v_subject"), py::arg("i2v_background"));
  m.def("score_document", &score_document, py::arg("text"),
        "JSON scores document in, normalized scores + aggregates out.");

  m.def(
      "gen_synthetic_video",
      [](std::size_t frames, std::size_t height, std::size_t width,
         const std::string& shape, const std::string& trajectory, double vx, double vy,
         std::uint64_t seed) {
        SceneConfig cfg;
        cfg.frames = frames;
        cfg.height = height;
        cfg.width = width;
        cfg.shape = shape_kind_from_name(shape);
        cfg.trajectory = trajectory_from_name(trajectory);
        cfg.vx = vx;
        cfg.vy = vy;
        cfg.seed = seed;
        return array_from_tensor(gen_synthetic_video(cfg));
      },
      py::arg("frames") = 13, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("shape") = "disc", py::arg("trajectory") = "linear", py::arg("vx") = 1.0,
      py::arg("vy") = 0.0, py::arg("seed") = 0,
      "Render a synthetic single-subject clip as an (N, H, W, 1) array.");

  m.def(
      "read_lgft", [](const std::string& path) { return array_from_tensor(lgft_read(path)); },
      py::arg("path"));
  m.def(
      "write_lgft",
      [](const std::string& path, const DArray& a, bool fp32) {
        lgft_write(path, tensor_from_array(a), fp32 ? LgftDtype::f32 : LgftDtype::f64);
      },
      py::arg("path"), py::arg("array"), py::arg("fp32") = false);
}
