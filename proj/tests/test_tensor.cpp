#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "affectseq/gradcheck.hpp"
#include "affectseq/tensor.hpp"

using namespace affectseq;
using namespace affectseq::grad;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape<double> tape;
  auto x = tape.constant({3}, {0.0, 0.0, 0.0});
  auto y = softmax(x, 0);
  for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  Tape<double> tape;
  auto x = tape.constant({7, 9}, random_values(63, 1, -30.0, 30.0));
  auto y = softmax(x, 1);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += y.value()[r * 9 + c];
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax survives huge logits") {
  Tape<double> tape;
  auto y = softmax(tape.constant({3}, {1000.0, 1000.0, -1000.0}), 0);
  CHECK(y.value()[0] == doctest::Approx(0.5));
  CHECK(y.value()[2] == 0.0);
}

TEST_CASE("layer_norm normalizes each row") {
  Tape<double> tape;
  // Rows with variance well above eps, where eps/var is below 1e-6.
  auto x = tape.constant({5, 16}, random_values(80, 2, -40.0, 40.0));
  auto y = layer_norm(x, 1, 1e-5);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.value()[r * 16 + c];
    mean /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += std::pow(y.value()[r * 16 + c] - mean, 2);
    var /= 16.0;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer_norm variance is v/(v+eps) for small-variance rows") {
  Tape<double> tape;
  auto xv = random_values(16, 3);
  auto y = layer_norm(tape.constant({16}, xv), 0, 1e-5);
  double mean = 0.0, v = 0.0, out_var = 0.0;
  for (double a : xv) mean += a;
  mean /= 16.0;
  for (double a : xv) v += (a - mean) * (a - mean);
  v /= 16.0;
  for (double a : y.value()) out_var += a * a;
  out_var /= 16.0;
  CHECK(out_var == doctest::Approx(v / (v + 1e-5)).epsilon(1e-12));
}

TEST_CASE("conv with a single identity tap is the identity") {
  Tape<double> tape;
  auto xv = random_values(12, 4);
  auto x = tape.constant({4, 3}, xv);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto k = tape.constant({1, 3, 3}, eye);
  for (std::size_t d : {1u, 2u, 5u}) {
    auto y = dilated_causal_conv1d(x, k, d);
    CHECK(std::vector<double>(y.value().begin(), y.value().end()) == xv);
  }
}

TEST_CASE("conv output at t ignores inputs after t") {
  const std::size_t T = 20, cin = 3, cout = 2, K = 3;
  auto kv = random_values(K * cin * cout, 5);
  for (std::size_t d : {1u, 2u, 4u}) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      auto xv = random_values(T * cin, 6 + t);
      Tape<double> tape;
      auto base = dilated_causal_conv1d(tape.constant({T, cin}, xv), tape.constant({K, cin, cout}, kv), d);
      for (std::size_t c = 0; c < cin; ++c) xv[(t + 1) * cin + c] += 3.0;
      auto moved = dilated_causal_conv1d(tape.constant({T, cin}, xv), tape.constant({K, cin, cout}, kv), d);
      for (std::size_t i = 0; i <= t; ++i)
        for (std::size_t c = 0; c < cout; ++c) REQUIRE(base.value()[i * cout + c] == moved.value()[i * cout + c]);
    }
  }
}

TEST_CASE("conv matches a direct loop") {
  const std::size_t T = 9, cin = 2, cout = 3, K = 3, d = 2;
  auto xv = random_values(T * cin, 7);
  auto kv = random_values(K * cin * cout, 8);
  Tape<double> tape;
  auto y = dilated_causal_conv1d(tape.constant({T, cin}, xv), tape.constant({K, cin, cout}, kv), d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t o = 0; o < cout; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>((K - 1 - k) * d);
        if (src < 0) continue;
        for (std::size_t i = 0; i < cin; ++i) s += xv[src * cin + i] * kv[(k * cin + i) * cout + o];
      }
      CHECK(y.value()[t * cout + o] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("gradient of sum is all ones") {
  Tape<double> tape;
  auto x = tape.variable({2, 3, 2}, random_values(12, 9));
  tape.backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of sum(x*x)") {
  Tape<double> tape;
  auto x = tape.variable({3}, {1.0, 2.0, 3.0});
  tape.backward(sum(x * x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("fan-out accumulates and repeated backward accumulates on leaves") {
  Tape<double> tape;
  auto x = tape.variable({2}, {1.0, -2.0});
  auto loss = sum(x + x + x);
  tape.backward(loss);
  CHECK(x.grad()[0] == 3.0);
  tape.backward(loss);
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == 6.0);
}

TEST_CASE("bound parameters receive their adjoint") {
  Parameter<double> p("w", {2});
  p.value = {0.5, -1.5};
  Tape<double> tape;
  auto w = tape.bind(p);
  tape.backward(sum(w * w));
  CHECK(p.grad == std::vector<double>{1.0, -3.0});
  p.zero_grad();
  CHECK(p.grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("structural errors") {
  Tape<double> tape;
  auto a = tape.variable({2, 3}, random_values(6, 10));
  auto b = tape.variable({4, 2}, random_values(8, 11));
  CHECK_THROWS_AS(matmul(a, b), StructuralError);
  CHECK_THROWS_AS(add(a, b), StructuralError);
  CHECK_THROWS_AS(tape.backward(a), StructuralError);
  CHECK_THROWS_AS(softmax(tape.constant({2, 0}, {}), 1), StructuralError);
  CHECK_THROWS_AS(log_softmax(tape.constant({2, 0}, {}), 1), StructuralError);
  CHECK_THROWS_AS(layer_norm(a, 1, 0.0), StructuralError);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(dropout(a, 1.0, true, rng), StructuralError);
  CHECK_THROWS_AS(dropout(a, -0.1, true, rng), StructuralError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), StructuralError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), StructuralError);
}

TEST_CASE("dropout is the identity outside training") {
  Tape<double> tape;
  auto xv = random_values(50, 12);
  auto x = tape.constant({50}, xv);
  std::mt19937_64 rng(1);
  auto y = dropout(x, 0.3, false, rng);
  CHECK(std::vector<double>(y.value().begin(), y.value().end()) == xv);
  auto z = dropout(x, 0.0, true, rng);
  CHECK(std::vector<double>(z.value().begin(), z.value().end()) == xv);
}

TEST_CASE("dropout preserves the expectation") {
  const std::size_t n = 200000;
  Tape<double> tape;
  auto x = tape.constant({n}, std::vector<double>(n, 1.0));
  std::mt19937_64 rng(2);
  for (double p : {0.1, 0.3, 0.5}) {
    auto y = dropout(x, p, true, rng);
    double s = 0.0;
    std::size_t zeros = 0;
    for (double v : y.value()) {
      s += v;
      zeros += v == 0.0;
    }
    CHECK(std::abs(s / n - 1.0) <= 0.01);
    CHECK(std::abs(static_cast<double>(zeros) / n - p) <= 0.01);
  }
}

TEST_CASE("masked_fill blocks the adjoint") {
  Tape<double> tape;
  auto x = tape.variable({4}, {1.0, 2.0, 3.0, 4.0});
  auto y = masked_fill(x, {false, true, false, true}, -7.0);
  CHECK(y.value()[1] == -7.0);
  tape.backward(sum(y * y));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2.0, 0.0, 6.0, 0.0});
}

TEST_CASE("bce_with_logits stays finite far from zero") {
  Tape<double> tape;
  auto x = tape.variable({4}, {1e4, -1e4, 1e4, -1e4});
  const std::vector<double> y{0.0, 1.0, 1.0, 0.0};
  auto l = bce_with_logits(x, std::span<const double>(y));
  CHECK(l.value()[0] == doctest::Approx(1e4));
  CHECK(l.value()[1] == doctest::Approx(1e4));
  CHECK(l.value()[2] == 0.0);
  CHECK(l.value()[3] == 0.0);
  tape.backward(sum(l));
  for (double g : x.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("float tape agrees with double tape") {
  auto av = random_values(12, 13), bv = random_values(20, 14);
  Tape<double> td;
  auto yd = gelu(matmul(td.constant({3, 4}, av), td.constant({4, 5}, bv)));
  Tape<float> tf;
  auto yf = gelu(matmul(tf.constant({3, 4}, std::vector<float>(av.begin(), av.end())),
                        tf.constant({4, 5}, std::vector<float>(bv.begin(), bv.end()))));
  for (std::size_t i = 0; i < 15; ++i) CHECK(yf.value()[i] == doctest::Approx(yd.value()[i]).epsilon(1e-5));
}

TEST_CASE("every primitive passes the finite-difference check") {
  for (const auto& r : run_gradcheck()) {
    INFO(r.name);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradcheck detects a wrong adjoint") {
  // exp value with the adjoint of identity
  GradFn bad = [](Tape<double>& t, std::span<const Tensor<double>> x) {
    auto e = exp(x[0]);
    auto v = e.value();
    auto id = x[0].id();
    return t.record(x[0].shape(), std::vector<double>(v.begin(), v.end()), x[0].requires_grad(),
                    [id](Tape<double>& tp, std::size_t self) { tp.accumulate(id, tp.node(self).grad); });
  };
  CHECK(gradcheck(bad, {{4}}, {{0.5, 1.0, 1.5, 2.0}}) > 1e-2);
}
