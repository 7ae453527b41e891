#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <random>

#include "affectseq/objectives.hpp"

using namespace affectseq;
using grad::Tape;

namespace {

// Direct two-pass 1/N formula.
double ccc_two_pass(const std::vector<double>& x, const std::vector<double>& y, const std::vector<bool>& mask) {
  double n = 0, mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i]) {
      n += 1;
      mx += x[i];
      my += y[i];
    }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cov = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i]) {
      vx += (x[i] - mx) * (x[i] - mx);
      vy += (y[i] - my) * (y[i] - my);
      cov += (x[i] - mx) * (y[i] - my);
    }
  vx /= n;
  vy /= n;
  cov /= n;
  const double denom = vx + vy + (mx - my) * (mx - my);
  if (denom < 1e-12) return 0.0;
  return 2 * cov / denom;
}

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("ccc hand values") {
  const std::vector<double> a{1, 2, 3}, b{3, 2, 1};
  CHECK(ccc(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ccc(a, b) == -1.0);
  CHECK(ccc(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 3, 4, 5}) ==
        doctest::Approx(5.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("ccc degenerate and error cases") {
  const std::vector<double> c{0.4, 0.4, 0.4};
  CHECK(ccc(c, c) == 0.0);
  CHECK_THROWS_AS(ccc(std::vector<double>{1.0}, std::vector<double>{1.0}), StructuralError);
  CHECK_THROWS_AS(ccc(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}, {true, false, false}),
                  StructuralError);
  CHECK_THROWS_AS(ccc(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), StructuralError);
}

TEST_CASE("streaming ccc matches the two-pass oracle") {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution keep(0.8);
  std::uniform_int_distribution<std::size_t> len(2, 64);
  std::uniform_real_distribution<double> shift(-2.0, 2.0);
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    auto x = uniform(rng, n, -1.0, 1.0);
    auto y = uniform(rng, n, -1.0, 1.0);
    const double s = shift(rng);
    for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * y[i] + 0.7 * x[i] + s;
    std::vector<bool> mask(n);
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) valid += (mask[i] = keep(rng));
    if (valid < 2) mask[0] = mask[1] = true;
    CHECK(std::abs(ccc(x, y, mask) - ccc_two_pass(x, y, mask)) <= 1e-10);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("ccc properties") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = uniform(rng, 20, -1.0, 1.0);
    auto y = uniform(rng, 20, -1.0, 1.0);
    const double base = ccc(x, y);
    CHECK(std::abs(base) <= 1.0);
    CHECK(ccc(y, x) == doctest::Approx(base).epsilon(1e-14));
    std::vector<std::size_t> p(20);
    for (std::size_t i = 0; i < 20; ++i) p[i] = i;
    std::shuffle(p.begin(), p.end(), rng);
    std::vector<double> xp(20), yp(20);
    for (std::size_t i = 0; i < 20; ++i) {
      xp[i] = x[p[i]];
      yp[i] = y[p[i]];
    }
    CHECK(ccc(xp, yp) == doctest::Approx(base).epsilon(1e-12));
    CHECK(ccc(x, x) == doctest::Approx(1.0).epsilon(1e-14));
    std::vector<double> scaled(20), shifted(20);
    for (std::size_t i = 0; i < 20; ++i) {
      scaled[i] = 1.5 * x[i];
      shifted[i] = x[i] + 0.3;
    }
    CHECK(ccc(scaled, x) < 1.0);
    CHECK(ccc(shifted, x) < 1.0);
  }
}

TEST_CASE("loss_va identities") {
  std::mt19937_64 rng(9);
  auto target = uniform(rng, 32, -0.9, 0.9);
  std::vector<bool> mask(16, true);
  Tape<double> tape;
  auto same = tape.variable({16, 2}, target);
  CHECK(std::abs(loss_va(same, target, mask).item()) <= 1e-10);

  const std::vector<double> t{1, 3, 2, 2, 3, 1};
  const std::vector<double> p{3, 1, 2, 2, 1, 3};
  auto anti = tape.variable({3, 2}, p);
  CHECK(loss_va(anti, t, std::vector<bool>(3, true)).item() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("loss_va with constant equal sequences is 1") {
  Tape<double> tape;
  const std::vector<double> t{0.2, 0.2, 0.2, 0.2};
  auto p = tape.variable({2, 2}, t);
  CHECK(loss_va(p, t, {true, true}).item() == 1.0);
}

TEST_CASE("loss_expr identities") {
  Tape<double> tape;
  const std::vector<int> cls{0, 3, 7};
  auto uniform_logits = tape.variable({3, 8}, std::vector<double>(24, 0.25));
  CHECK(std::abs(loss_expr(uniform_logits, std::span<const int>(cls), {true, true, true}).item() - std::log(8.0)) <=
        1e-9);

  std::vector<double> margin(24, -50.0);
  for (std::size_t i = 0; i < 3; ++i) margin[i * 8 + static_cast<std::size_t>(cls[i])] = 50.0;
  auto confident = tape.variable({3, 8}, margin);
  CHECK(loss_expr(confident, std::span<const int>(cls), {true, true, true}).item() <= 1e-30);

  std::vector<double> two(8, -1e4);
  two[2] = two[5] = 1.0;
  const std::vector<int> c2{5};
  auto half = tape.variable({1, 8}, two);
  CHECK(loss_expr(half, std::span<const int>(c2), {true}).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-14));
}

TEST_CASE("loss_expr matches the negative log softmax oracle") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    auto logits = uniform(rng, n * 8, -5.0, 5.0);
    std::vector<int> cls(n);
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      cls[i] = static_cast<int>(rng() % 8);
      mask[i] = rng() % 4 != 0;
    }
    mask[0] = true;
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      double z = 0.0;
      for (std::size_t k = 0; k < 8; ++k) z += std::exp(logits[i * 8 + k]);
      sum += -std::log(std::exp(logits[i * 8 + static_cast<std::size_t>(cls[i])]) / z);
      count += 1.0;
    }
    Tape<double> tape;
    auto x = tape.variable({n, 8}, logits);
    CHECK(std::abs(loss_expr(x, std::span<const int>(cls), mask).item() - sum / count) <= 1e-10);
  }
}

TEST_CASE("loss_au values") {
  Tape<double> tape;
  auto at = [&](double x, double y) {
    std::vector<double> logits(12, x), target(12, y);
    auto t = tape.variable({1, 12}, logits);
    return loss_au(t, target, {true}).item();
  };
  CHECK(std::abs(at(0.0, 1.0) - std::numbers::ln2) <= 1e-9);
  CHECK(std::abs(at(0.0, 0.0) - std::numbers::ln2) <= 1e-9);
  CHECK(at(2.0, 1.0) == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  CHECK(at(2.0, 1.0) == doctest::Approx(0.126928).epsilon(1e-6));
  const double tiny = at(-100.0, 0.0);
  CHECK(std::isfinite(tiny));
  CHECK(tiny <= 1e-40);
  for (double x : {1e4, -1e4}) {
    for (double y : {0.0, 1.0}) CHECK(std::isfinite(at(x, y)));
  }
}

TEST_CASE("loss_au agrees with the naive form on moderate logits") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = uniform(rng, 24, -8.0, 8.0);
    std::vector<double> target(24);
    for (auto& y : target) y = static_cast<double>(rng() % 2);
    double naive = 0.0;
    for (std::size_t i = 0; i < 24; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-logits[i]));
      naive += -(target[i] * std::log(s) + (1.0 - target[i]) * std::log(1.0 - s));
    }
    naive /= 24.0;
    Tape<double> tape;
    auto x = tape.variable({2, 12}, logits);
    CHECK(std::abs(loss_au(x, target, {true, true}).item() - naive) <= 1e-8);
  }
}

TEST_CASE("losses ignore masked frames") {
  std::mt19937_64 rng(12);
  const std::size_t n = 10;
  std::vector<bool> mask(n, true);
  mask[2] = mask[7] = false;

  auto run = [&](std::size_t width, auto&& loss) {
    auto base = uniform(rng, n * width, -2.0, 2.0);
    auto moved = base;
    for (std::size_t k = 0; k < width; ++k) {
      moved[2 * width + k] += 5.0;
      moved[7 * width + k] -= 3.0;
    }
    Tape<double> t1, t2;
    auto x1 = t1.variable({n, width}, base);
    auto x2 = t2.variable({n, width}, moved);
    auto l1 = loss(x1), l2 = loss(x2);
    CHECK(l1.item() == l2.item());
    t1.backward(l1);
    t2.backward(l2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < width; ++k) {
        if (mask[i]) {
          CHECK(x1.grad()[i * width + k] == x2.grad()[i * width + k]);
        } else {
          CHECK(x1.grad()[i * width + k] == 0.0);
        }
      }
    }
  };

  auto va_target = uniform(rng, n * 2, -1.0, 1.0);
  run(2, [&](const grad::Tensor<double>& x) { return loss_va(x, va_target, mask); });
  std::vector<int> cls(n);
  for (auto& c : cls) c = static_cast<int>(rng() % 8);
  run(8, [&](const grad::Tensor<double>& x) { return loss_expr(x, std::span<const int>(cls), mask); });
  std::vector<double> au_target(n * 12);
  for (auto& y : au_target) y = static_cast<double>(rng() % 2);
  run(12, [&](const grad::Tensor<double>& x) { return loss_au(x, au_target, mask); });
}

TEST_CASE("losses need valid frames") {
  Tape<double> tape;
  auto x8 = tape.variable({2, 8}, std::vector<double>(16, 0.0));
  const std::vector<int> cls{1, 2};
  CHECK_THROWS_AS(loss_expr(x8, std::span<const int>(cls), {false, false}), StructuralError);
  auto x12 = tape.variable({1, 12}, std::vector<double>(12, 0.0));
  CHECK_THROWS_AS(loss_au(x12, std::vector<double>(12, 0.0), {false}), StructuralError);
  auto x2 = tape.variable({3, 2}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(loss_va(x2, std::vector<double>(6, 0.0), {true, false, false}), StructuralError);
  CHECK_THROWS_AS(loss_va(x8, std::vector<double>(16, 0.0), {true, true}), StructuralError);
}

TEST_CASE("macro F1 conventions") {
  // perfect predictions over 3 classes, all present
  std::vector<std::uint8_t> onehot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  auto r = macro_f1(onehot, onehot, {true, true, true}, 3);
  CHECK(r.macro_f1 == 1.0);

  // class 2 absent from both predictions and targets
  std::vector<std::uint8_t> two{1, 0, 0, 0, 1, 0};
  auto a = macro_f1(two, two, {true, true}, 3);
  CHECK(a.per_class_f1[2] == 0.0);
  CHECK(a.macro_f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("macro F1 matches a confusion-matrix oracle") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const std::size_t c = 1 + rng() % 12;
    std::vector<std::uint8_t> p(n * c), t(n * c);
    for (auto& v : p) v = static_cast<std::uint8_t>(rng() % 2);
    for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 2);
    std::vector<bool> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng() % 5 != 0;
    double macro = 0.0;
    std::vector<double> per(c);
    for (std::size_t k = 0; k < c; ++k) {
      // 2x2 confusion matrix [target][pred]
      double cm[2][2] = {{0, 0}, {0, 0}};
      for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) cm[t[i * c + k]][p[i * c + k]] += 1;
      const double precision_den = cm[1][1] + cm[0][1], recall_den = cm[1][1] + cm[1][0];
      const double precision = precision_den > 0 ? cm[1][1] / precision_den : 0.0;
      const double recall = recall_den > 0 ? cm[1][1] / recall_den : 0.0;
      per[k] = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
      macro += per[k];
    }
    macro /= static_cast<double>(c);
    auto r = macro_f1(p, t, mask, c);
    for (std::size_t k = 0; k < c; ++k) CHECK(r.per_class_f1[k] == doctest::Approx(per[k]).epsilon(1e-15));
    CHECK(r.macro_f1 == doctest::Approx(macro).epsilon(1e-15));
  }
}

TEST_CASE("indicator rules") {
  Matrix<double> logits(2, 3, std::vector<double>{0.1, 0.5, 0.5, -1.0, -2.0, -0.5});
  CHECK(expr_indicators(logits) == std::vector<std::uint8_t>{0, 1, 0, 0, 0, 1});
  Matrix<double> au(1, 3, std::vector<double>{0.0, -1e-9, 3.0});
  CHECK(au_indicators(au) == std::vector<std::uint8_t>{1, 0, 1});
  FrameLabels l(TaskKind::EXPR, {3.0, 0.0}, {true, false});
  auto ind = expr_indicators(l);
  CHECK(ind[3] == 1);
  CHECK(std::count(ind.begin(), ind.end(), 1) == 1);
}

TEST_CASE("evaluate per task") {
  Matrix<double> va_pred(3, 2, std::vector<double>{1, 3, 2, 2, 3, 9});
  FrameLabels va(TaskKind::VA, {0.1, 0.3, 0.2, 0.2, 0.3, 0.0}, {true, true, true});
  auto r = evaluate(va_pred, FrameLabels(TaskKind::VA, {1, 1, 0.5, 0.5, 0, 0}, {true, true, true}));
  CHECK(r.task == TaskKind::VA);
  CHECK(r.valid_frames == 3);
  CHECK(r.mean_ccc == doctest::Approx(0.5 * (r.ccc_valence + r.ccc_arousal)));
  CHECK(std::abs(r.primary_metric() - r.mean_ccc) == 0.0);
  CHECK_THROWS_AS(evaluate(Matrix<double>(2, 2), va), StructuralError);

  Matrix<double> ex(2, 8, 0.0);
  ex(0, 4) = 1.0;
  ex(1, 2) = 1.0;
  auto re = evaluate(ex, FrameLabels(TaskKind::EXPR, {4, 2}, {true, true}));
  CHECK(re.per_class_f1.size() == 8);
  CHECK(re.macro_f1 == doctest::Approx(2.0 / 8.0));

  Matrix<double> au(1, 12, 1.0);
  std::vector<double> y(12, 1.0);
  auto ra = evaluate(au, FrameLabels(TaskKind::AU, y, {true}));
  CHECK(ra.macro_f1 == 1.0);
}

TEST_CASE("report formats") {
  EvalReport r;
  r.task = TaskKind::VA;
  r.ccc_valence = 0.5;
  r.ccc_arousal = 0.25;
  r.mean_ccc = 0.375;
  r.valid_frames = 10;
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["mean_ccc"].get<double>() == 0.375);
  CHECK(j["task"] == "va");
  CHECK(r.to_table().find("mean_ccc        0.375000") != std::string::npos);
  EvalReport e;
  e.task = TaskKind::EXPR;
  e.per_class_f1 = std::vector<double>(8, 0.5);
  e.macro_f1 = 0.5;
  auto je = nlohmann::json::parse(e.to_json());
  CHECK(je["per_class_f1"].size() == 8);
  CHECK(je.contains("mean_ccc") == false);
}
