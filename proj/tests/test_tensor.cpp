#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gramflow/io.hpp"
#include "gramflow/ops.hpp"
#include "gramflow/rng.hpp"
#include "gramflow/tensor.hpp"
#include "oracles.hpp"

using namespace gramflow;

namespace {

Tensor random_tensor(Shape dims, RngStream& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping and element access") {
  Tensor t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.size() == 24);
  CHECK(t.at({0, 0, 0}) == 0.0);
  t.at({1, 2, 3}) = 5.0;
  CHECK(t[t.size() - 1] == 5.0);
  CHECK(t.offset({1, 0, 2}) == 14);
  CHECK_THROWS(t.at({2, 0, 0}));
  CHECK_THROWS(Tensor({2, 0, 3}));

  Tensor u = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(u.at({1, 0}) == 3.0);
  CHECK_THROWS(Tensor::from_data({2, 2}, {1, 2, 3}));

  Tensor v({2, 2}, 1.0);
  v.axpy(2.0, u);
  CHECK(v.at({1, 1}) == 9.0);
}

TEST_CASE("conv3d identity kernel reproduces the input exactly") {
  RngStream rng(3);
  const Tensor x = random_tensor({3, 4, 5, 2}, rng);
  Tensor w({1, 1, 1, 2, 2});
  w.at({0, 0, 0, 0, 0}) = 1.0;
  w.at({0, 0, 0, 1, 1}) = 1.0;
  const Tensor b({2});
  const Tensor y = conv3d(x, w, b);
  REQUIRE(y.same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3d matches the nested-loop oracle on a random instance") {
  RngStream rng(11);
  const Tensor x = random_tensor({2, 3, 3, 2}, rng);
  SUBCASE("all-ones kernel sums the zero-padded neighborhood") {
    const Tensor w({3, 3, 3, 2, 2}, 1.0);
    const Tensor b({2});
    const Tensor y = conv3d(x, w, b);
    const Tensor ref = oracle::conv3d(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  SUBCASE("random kernel and bias") {
    const Tensor w = random_tensor({3, 1, 3, 2, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    const Tensor y = conv3d(x, w, b);
    const Tensor ref = oracle::conv3d(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d kernel gradient matches finite differences below 1e-6") {
  RngStream rng(17);
  const Tensor x = random_tensor({2, 3, 3, 2}, rng, 0.5);
  const Tensor w = random_tensor({3, 3, 3, 2, 2}, rng, 0.3);
  const Tensor b = random_tensor({2}, rng, 0.1);

  // loss = sum of outputs, so the output cotangent is all ones.
  const Tensor dy(conv3d(x, w, b).dims(), 1.0);
  const Conv3dGrads g = conv3d_backward(x, w, dy);

  auto loss_of_w = [&](const Tensor& wp) {
    const Tensor y = conv3d(x, wp, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i];
    return s;
  };
  CHECK(oracle::fd_worst_rel_err(loss_of_w, w, g.dweight) < 1e-6);

  auto loss_of_x = [&](const Tensor& xp) {
    const Tensor y = conv3d(xp, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i];
    return s;
  };
  CHECK(oracle::fd_worst_rel_err(loss_of_x, x, g.dx) < 1e-6);

  // d(sum y)/d(bias) = number of output positions per channel.
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(g.dbias[c] == doctest::Approx(2.0 * 3.0 * 3.0).epsilon(1e-12));
}

TEST_CASE("conv3d rejects malformed kernels") {
  const Tensor x({2, 3, 3, 2});
  CHECK_THROWS(conv3d(x, Tensor({2, 3, 3, 2, 2}), Tensor({2})));  // even extent
  CHECK_THROWS(conv3d(x, Tensor({3, 3, 3, 4, 2}), Tensor({2})));  // Cin mismatch
  CHECK_THROWS(conv3d(x, Tensor({3, 3, 3, 2, 2}), Tensor({3})));  // bias mismatch
}

TEST_CASE("group_norm standardizes each group") {
  SUBCASE("constant input resolves to zeros through eps") {
    const Tensor x({2, 2, 2, 4}, 3.25);
    const Tensor gamma({4}, 1.0);
    const Tensor beta({4});
    const Tensor y = group_norm(x, gamma, beta, 2, 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
  }
  SUBCASE("hand-computed two-group standardization of [1,2,3,4]") {
    Tensor x({1, 1, 1, 4});
    for (std::size_t c = 0; c < 4; ++c) x[c] = static_cast<double>(c + 1);
    const Tensor gamma({4}, 1.0);
    const Tensor beta({4});
    const Tensor y = group_norm(x, gamma, beta, 2, 1e-5);
    // Each group {1,2} and {3,4} has mean +-0.5 offsets and biased var 0.25.
    const double dev = 0.5 / std::sqrt(0.25 + 1e-5);
    CHECK(y[0] == doctest::Approx(-dev).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(dev).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(-dev).epsilon(1e-12));
    CHECK(y[3] == doctest::Approx(dev).epsilon(1e-12));
  }
  SUBCASE("per-group mean and variance after normalization") {
    RngStream rng(5);
    const Tensor x = random_tensor({2, 3, 3, 6}, rng, 2.0);
    const Tensor gamma({6}, 1.0);
    const Tensor beta({6});
    const Tensor y = group_norm(x, gamma, beta, 2, 1e-5);
    for (std::size_t n = 0; n < 2 * 3 * 3; ++n)
      for (std::size_t g = 0; g < 2; ++g) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 3; ++c) mean += y[n * 6 + g * 3 + c];
        mean /= 3.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = y[n * 6 + g * 3 + c] - mean;
          var += d * d;
        }
        var /= 3.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-4);
      }
  }
  SUBCASE("group count must divide the channel count") {
    CHECK_THROWS(group_norm(Tensor({1, 1, 1, 4}), Tensor({4}, 1.0), Tensor({4}), 3, 1e-5));
  }
}

TEST_CASE("group_norm gradients match finite differences below 1e-6") {
  RngStream rng(23);
  const Tensor x = random_tensor({2, 2, 2, 4}, rng);
  const Tensor gamma = random_tensor({4}, rng, 0.5);
  const Tensor beta = random_tensor({4}, rng, 0.5);
  const double eps = 1e-2;  // keep the curvature mild so h = 1e-5 stays sharp
  const Tensor dy = random_tensor(group_norm(x, gamma, beta, 2, eps).dims(), rng);
  const GroupNormGrads g = group_norm_backward(x, gamma, 2, eps, dy);

  auto weighted = [&](const Tensor& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
    return s;
  };
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& xp) { return weighted(group_norm(xp, gamma, beta, 2, eps)); },
            x, g.dx) < 1e-6);
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& gp) { return weighted(group_norm(x, gp, beta, 2, eps)); },
            gamma, g.dgamma) < 1e-6);
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& bp) { return weighted(group_norm(x, gamma, bp, 2, eps)); },
            beta, g.dbeta) < 1e-6);
}

TEST_CASE("silu values and derivative") {
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double pts[] = {-2.0, -0.5, 0.3, 4.0};
  Tensor x({4});
  for (std::size_t i = 0; i < 4; ++i) x[i] = pts[i];

  const Tensor y = silu(x);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(y[i] == doctest::Approx(pts[i] * sigmoid(pts[i])).epsilon(1e-15));

  const Tensor ones({4}, 1.0);
  const Tensor dx = silu_backward(x, ones);
  for (std::size_t i = 0; i < 4; ++i) {
    const double h = 1e-6;
    const double fd = ((pts[i] + h) * sigmoid(pts[i] + h) -
                       (pts[i] - h) * sigmoid(pts[i] - h)) /
                      (2.0 * h);
    CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-8));
    const double s = sigmoid(pts[i]);
    CHECK(dx[i] == doctest::Approx(s * (1.0 + pts[i] * (1.0 - s))).epsilon(1e-13));
  }
}

TEST_CASE("linear mixes channels per token") {
  RngStream rng(31);
  const Tensor x = random_tensor({2, 3, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor y = linear(x, w, b);
  REQUIRE(y.dims() == Shape{2, 3, 4});
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t co = 0; co < 4; ++co) {
      double acc = b[co];
      for (std::size_t ci = 0; ci < 5; ++ci) acc += w.at({co, ci}) * x[n * 5 + ci];
      CHECK(y[n * 4 + co] == doctest::Approx(acc).epsilon(1e-12));
    }

  const Tensor dy = random_tensor(y.dims(), rng);
  const LinearGrads g = linear_backward(x, w, dy);
  auto weighted = [&](const Tensor& out) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += dy[i] * out[i];
    return s;
  };
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& xp) { return weighted(linear(xp, w, b)); }, x, g.dx) < 1e-6);
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& wp) { return weighted(linear(x, wp, b)); }, w, g.dweight) <
        1e-6);
  CHECK(oracle::fd_worst_rel_err(
            [&](const Tensor& bp) { return weighted(linear(x, w, bp)); }, b, g.dbias) <
        1e-6);
}

TEST_CASE("interp_temporal endpoint-preserving linear upsampling") {
  SUBCASE("factor 1 is the identity") {
    RngStream rng(7);
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);
    const Tensor y = interp_temporal(x, 1);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("scalar ramp [0, 4] at factor 4") {
    Tensor x = Tensor::from_data({2, 1, 1, 1}, {0.0, 4.0});
    const Tensor y = interp_temporal(x, 4);
    REQUIRE(y.dim(0) == 5);
    for (std::size_t t = 0; t < 5; ++t)
      CHECK(y[t] == doctest::Approx(static_cast<double>(t)).epsilon(1e-15));
  }
  SUBCASE("factor 2 midpoints are neighbor means; originals are bitwise copies") {
    RngStream rng(9);
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);
    const Tensor y = interp_temporal(x, 2);
    REQUIRE(y.dim(0) == 5);
    const std::size_t stride = 2 * 2 * 2;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < stride; ++i)
        CHECK(y[2 * t * stride + i] == x[t * stride + i]);
    for (std::size_t t = 0; t + 1 < 3; ++t)
      for (std::size_t i = 0; i < stride; ++i)
        CHECK(y[(2 * t + 1) * stride + i] ==
              doctest::Approx(0.5 * (x[t * stride + i] + x[(t + 1) * stride + i]))
                  .epsilon(1e-14));
  }
  SUBCASE("backward matches finite differences") {
    RngStream rng(13);
    const Tensor x = random_tensor({3, 2, 2, 2}, rng);
    const Tensor dy = random_tensor({5, 2, 2, 2}, rng);
    const Tensor dx = interp_temporal_backward(x.dims(), 2, dy);
    auto weighted = [&](const Tensor& xp) {
      const Tensor y = interp_temporal(xp, 2);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
      return s;
    };
    CHECK(oracle::fd_worst_rel_err(weighted, x, dx) < 1e-6);
  }
}

TEST_CASE("resample_spatial align-corners bilinear") {
  RngStream rng(19);
  SUBCASE("identity resize is a bitwise copy") {
    const Tensor x = random_tensor({2, 3, 4, 2}, rng);
    const Tensor y = resample_spatial(x, 3, 4);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("constant fields stay constant") {
    const Tensor x({2, 3, 3, 1}, 0.7);
    const Tensor y = resample_spatial(x, 7, 5);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("2x2 ramp to 3x3 by the bilinear formula") {
    const Tensor x = Tensor::from_data({1, 2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
    const Tensor y = resample_spatial(x, 3, 3);
    const double want[9] = {0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0};
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-15));
  }
  SUBCASE("backward matches finite differences") {
    const Tensor x = random_tensor({2, 3, 3, 2}, rng);
    const Tensor dy = random_tensor({2, 5, 4, 2}, rng);
    const Tensor dx = resample_spatial_backward(x.dims(), dy);
    auto weighted = [&](const Tensor& xp) {
      const Tensor y = resample_spatial(xp, 5, 4);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
      return s;
    };
    CHECK(oracle::fd_worst_rel_err(weighted, x, dx) < 1e-6);
  }
}

TEST_CASE("rng stream determinism and stream splitting") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Replays are pure functions of (seed, counter): a fresh stream reproduces
  // the sequence regardless of when it is constructed.
  RngStream c(42);
  RngStream d(42, 50);
  for (int i = 0; i < 50; ++i) c.next_u64();
  for (int i = 0; i < 10; ++i) CHECK(c.next_u64() == d.next_u64());

  RngStream root(7);
  RngStream s1 = root.split(1), s2 = root.split(2);
  CHECK(s1.seed() != s2.seed());
  CHECK(root.split(1).seed() == s1.seed());

  RngStream u(123);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v;
  }
  CHECK(mean / 10000.0 == doctest::Approx(0.5).epsilon(0.02));

  RngStream n(5);
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = n.normal();
    m1 += v;
    m2 += v * v;
  }
  CHECK(m1 / 20000.0 == doctest::Approx(0.0).epsilon(0.03));
  CHECK(m2 / 20000.0 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("lgft round trip preserves shape and payload") {
  RngStream rng(29);
  const Tensor x = random_tensor({3, 4, 2}, rng);
  const auto path = temp_file("gramflow_test_roundtrip.lgft");

  SUBCASE("fp64 is exact") {
    lgft_write(path, x, LgftDtype::f64);
    const Tensor y = lgft_read(path);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("fp32 rounds to float precision") {
    lgft_write(path, x, LgftDtype::f32);
    const Tensor y = lgft_read(path);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(y[i] == static_cast<double>(static_cast<float>(x[i])));
  }
  SUBCASE("u8 masks round trip") {
    std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1};
    lgft_write_u8(path, {2, 3}, mask);
    const auto [dims, data] = lgft_read_u8(path);
    CHECK(dims == Shape{2, 3});
    CHECK(data == mask);
  }
  std::filesystem::remove(path);
}

TEST_CASE("lgft rejects malformed files") {
  const auto path = temp_file("gramflow_test_bad.lgft");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(lgft_read(path), SchemaError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "LGFT";  // header truncated after the magic
  }
  CHECK_THROWS_AS(lgft_read(path), SchemaError);
  CHECK_THROWS_AS(lgft_read(temp_file("gramflow_test_missing.lgft")), SchemaError);
  std::filesystem::remove(path);
}
