#include "affectseq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "affectseq/model.hpp"
#include "affectseq/objectives.hpp"

namespace affectseq {

using grad::Shape;
using grad::Tape;
using Tensor = grad::Tensor<double>;

namespace {

std::vector<double> projection(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r(n);
  for (auto& v : r) v = u(rng);
  return r;
}

double projected(const Tensor& out, std::vector<double>& r, std::uint64_t seed) {
  if (r.size() != out.numel()) r = projection(out.numel(), seed);
  double s = 0.0;
  auto v = out.value();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
  return s;
}

Tensor projected_loss(Tape<double>& tape, const Tensor& out, std::vector<double>& r, std::uint64_t seed) {
  if (r.size() != out.numel()) r = projection(out.numel(), seed);
  return grad::sum(grad::mul(out, tape.constant(out.shape(), r)));
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    na = std::max(na, std::abs(a[i]));
    nn = std::max(nn, std::abs(n[i]));
  }
  return diff / std::max({na, nn, 1e-12});
}

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Values bounded away from zero, for primitives with a kink there.
std::vector<double> off_zero(std::mt19937_64& rng, std::size_t n) {
  auto v = uniform(rng, n, 0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v)
    if (sign(rng)) x = -x;
  return v;
}

template <typename Loss>
GradcheckResult check_model(const std::string& name, TaskKind task, const GradcheckOptions& opt, Loss&& make_labels) {
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.task = task;
  cfg.tcn.channels = 4;
  cfg.tcn.kernel_size = 3;
  cfg.tcn.dilations = {1, 2};
  cfg.tcn.num_blocks = 1;
  cfg.encoder.d_model = 4;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 1;
  cfg.encoder.ff_dim = 8;
  cfg.head.hidden_dim = 4;
  PipelineModel<double> model(cfg, opt.seed + 11);

  constexpr std::size_t w = 8, valid_len = 6;
  std::mt19937_64 rng(opt.seed + 12);
  Segment seg;
  seg.features = Matrix<float>(w, cfg.feature_dim);
  std::normal_distribution<float> n01(0.0f, 1.0f);
  for (std::size_t t = 0; t < valid_len; ++t)
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) seg.features(t, j) = n01(rng);
  seg.frame_valid.assign(w, false);
  std::fill_n(seg.frame_valid.begin(), valid_len, true);
  const FrameLabels labels = make_labels(rng, w, valid_len);

  auto loss_of = [&](bool backward) {
    Tape<double> tape;
    PipelineModel<double>::Context ctx{tape, false, nullptr, nullptr};
    auto out = model.forward_segment(ctx, seg.features, seg.frame_valid);
    auto loss = task_loss(out, labels);
    if (backward) tape.backward(loss);
    return loss.item();
  };

  model.zero_grad();
  loss_of(true);
  std::vector<double> analytic, numeric;
  for (auto& p : model.parameters()) {
    analytic.insert(analytic.end(), p.grad.begin(), p.grad.end());
    for (auto& v : p.value) {
      const double keep = v;
      v = keep + opt.step;
      const double up = loss_of(false);
      v = keep - opt.step;
      const double down = loss_of(false);
      v = keep;
      numeric.push_back((up - down) / (2.0 * opt.step));
    }
  }
  return {name, relative_error(analytic, numeric), analytic.size()};
}

}  // namespace

double gradcheck(const GradFn& f, const std::vector<Shape>& shapes, const std::vector<std::vector<double>>& inputs,
                 double step, std::uint64_t seed) {
  if (shapes.size() != inputs.size()) throw StructuralError("gradcheck: shapes and inputs differ in count");
  std::vector<double> r;
  std::vector<double> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.variable(shapes[i], inputs[i]));
    auto out = f(tape, vars);
    tape.backward(projected_loss(tape, out, r, seed));
    for (const auto& v : vars) {
      auto g = v.grad();
      if (g.empty()) {
        analytic.insert(analytic.end(), v.numel(), 0.0);
      } else {
        analytic.insert(analytic.end(), g.begin(), g.end());
      }
    }
  }
  auto eval = [&](const std::vector<std::vector<double>>& x) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    std::vector<Tensor> vars;
    for (std::size_t i = 0; i < x.size(); ++i) vars.push_back(tape.constant(shapes[i], x[i]));
    return projected(f(tape, vars), r, seed);
  };
  std::vector<double> numeric;
  auto x = inputs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double keep = x[i][k];
      x[i][k] = keep + step;
      const double up = eval(x);
      x[i][k] = keep - step;
      const double down = eval(x);
      x[i][k] = keep;
      numeric.push_back((up - down) / (2.0 * step));
    }
  }
  return relative_error(analytic, numeric);
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::vector<GradcheckResult> results;
  auto run = [&](const std::string& name, const std::vector<Shape>& shapes, std::vector<std::vector<double>> inputs,
                 const GradFn& f) {
    std::size_t n = 0;
    for (const auto& v : inputs) n += v.size();
    results.push_back({name, gradcheck(f, shapes, inputs, opt.step, opt.seed + results.size()), n});
  };
  auto rnd = [&](std::size_t n) { return uniform(rng, n, -1.0, 1.0); };
  using Span = std::span<const Tensor>;

  run("matmul", {{3, 4}, {4, 5}}, {rnd(12), rnd(20)}, [](Tape<double>&, Span x) { return grad::matmul(x[0], x[1]); });
  run("transpose", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) { return grad::transpose(x[0]); });
  run("reshape", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) { return grad::reshape(x[0], {2, 6}); });
  run("broadcast", {{3, 1}}, {rnd(3)}, [](Tape<double>&, Span x) { return grad::broadcast_to(x[0], {2, 3, 4}); });
  run("add", {{3, 4}, {4}}, {rnd(12), rnd(4)}, [](Tape<double>&, Span x) { return grad::add(x[0], x[1]); });
  run("sub", {{3, 1}, {3, 4}}, {rnd(3), rnd(12)}, [](Tape<double>&, Span x) { return grad::sub(x[0], x[1]); });
  run("mul", {{3, 4}, {3, 1}}, {rnd(12), rnd(3)}, [](Tape<double>&, Span x) { return grad::mul(x[0], x[1]); });
  run("div", {{3, 4}, {4}}, {rnd(12), uniform(rng, 4, 0.5, 2.0)},
      [](Tape<double>&, Span x) { return grad::div(x[0], x[1]); });
  run("scale", {{5}}, {rnd(5)}, [](Tape<double>&, Span x) { return grad::add_scalar(grad::scale(x[0], 1.7), 0.3); });
  run("concat", {{2, 3}, {2, 2}}, {rnd(6), rnd(4)}, [](Tape<double>&, Span x) { return grad::concat(x, 1); });
  run("slice", {{4, 5}}, {rnd(20)}, [](Tape<double>&, Span x) { return grad::slice(x[0], 1, 1, 4); });
  run("take", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) {
    const std::vector<std::size_t> idx{0, 5, 5, 11, 2};
    return grad::take(x[0], std::span<const std::size_t>(idx));
  });
  run("sum", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) {
    return grad::add(grad::sum(x[0], 0, true), grad::broadcast_to(grad::sum(x[0]), {1, 4}));
  });
  run("mean", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) {
    return grad::add(grad::mean(x[0], 1, false), grad::broadcast_to(grad::mean(x[0]), {3}));
  });
  run("relu", {{4, 3}}, {off_zero(rng, 12)}, [](Tape<double>&, Span x) { return grad::relu(x[0]); });
  run("gelu", {{4, 3}}, {uniform(rng, 12, -3.0, 3.0)}, [](Tape<double>&, Span x) { return grad::gelu(x[0]); });
  run("tanh", {{4, 3}}, {uniform(rng, 12, -2.0, 2.0)}, [](Tape<double>&, Span x) { return grad::tanh(x[0]); });
  run("sigmoid", {{4, 3}}, {uniform(rng, 12, -4.0, 4.0)}, [](Tape<double>&, Span x) { return grad::sigmoid(x[0]); });
  run("exp", {{4, 3}}, {rnd(12)}, [](Tape<double>&, Span x) { return grad::exp(x[0]); });
  run("log", {{4, 3}}, {uniform(rng, 12, 0.2, 3.0)}, [](Tape<double>&, Span x) { return grad::log(x[0]); });
  run("softmax", {{3, 5}}, {uniform(rng, 15, -2.0, 2.0)}, [](Tape<double>&, Span x) { return grad::softmax(x[0], 1); });
  run("log_softmax", {{3, 5}}, {uniform(rng, 15, -2.0, 2.0)},
      [](Tape<double>&, Span x) { return grad::log_softmax(x[0], 0); });
  run("layer_norm", {{3, 6}}, {uniform(rng, 18, -2.0, 2.0)},
      [](Tape<double>&, Span x) { return grad::layer_norm(x[0], 1, 1e-5); });
  run("dropout", {{6, 5}}, {rnd(30)}, [seed = opt.seed](Tape<double>&, Span x) {
    std::mt19937_64 drop_rng(seed + 99);
    return grad::dropout(x[0], 0.3, true, drop_rng);
  });
  run("dilated_causal_conv1d", {{9, 3}, {3, 3, 2}}, {rnd(27), rnd(18)},
      [](Tape<double>&, Span x) { return grad::dilated_causal_conv1d(x[0], x[1], 2); });
  run("masked_fill", {{3, 4}}, {rnd(12)}, [](Tape<double>&, Span x) {
    std::vector<bool> mask(12, false);
    mask[1] = mask[6] = mask[7] = true;
    return grad::masked_fill(x[0], mask, -2.5);
  });
  run("bce_with_logits", {{3, 4}}, {uniform(rng, 12, -3.0, 3.0)}, [](Tape<double>&, Span x) {
    const std::vector<double> y{1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0};
    return grad::bce_with_logits(x[0], std::span<const double>(y));
  });

  // masked attention as composed inside the encoder
  run("masked_softmax_attention", {{4, 2}, {4, 2}, {4, 2}}, {rnd(8), rnd(8), rnd(8)}, [](Tape<double>&, Span x) {
    std::vector<bool> mask(16, false);
    for (std::size_t i = 0; i < 4; ++i) mask[i * 4 + 3] = true;
    auto scores = grad::scale(grad::matmul(x[0], grad::transpose(x[1])), 1.0 / std::sqrt(2.0));
    auto w = grad::softmax(grad::masked_fill(scores, mask, -std::numeric_limits<double>::infinity()), 1);
    return grad::matmul(w, x[2]);
  });

  {
    const std::vector<double> target = uniform(rng, 32, -0.9, 0.9);
    std::vector<bool> mask(16, true);
    mask[3] = mask[10] = false;
    run("loss_va", {{16, 2}}, {uniform(rng, 32, -0.9, 0.9)},
        [target, mask](Tape<double>&, Span x) { return loss_va(x[0], std::span<const double>(target), mask); });
  }
  {
    std::vector<int> target(10);
    std::uniform_int_distribution<int> cls(0, 7);
    for (auto& c : target) c = cls(rng);
    std::vector<bool> mask(10, true);
    mask[2] = false;
    run("loss_expr", {{10, 8}}, {uniform(rng, 80, -2.0, 2.0)},
        [target, mask](Tape<double>&, Span x) { return loss_expr(x[0], std::span<const int>(target), mask); });
  }
  {
    std::vector<double> target(6 * 12);
    std::bernoulli_distribution bit(0.4);
    for (auto& y : target) y = bit(rng) ? 1.0 : 0.0;
    std::vector<bool> mask(6, true);
    mask[4] = false;
    run("loss_au", {{6, 12}}, {uniform(rng, 72, -3.0, 3.0)},
        [target, mask](Tape<double>&, Span x) { return loss_au(x[0], std::span<const double>(target), mask); });
  }

  results.push_back(check_model("pipeline_va", TaskKind::VA, opt, [](std::mt19937_64& r, std::size_t w, std::size_t n) {
    std::vector<double> v = uniform(r, 2 * w, -0.9, 0.9);
    std::vector<bool> valid(w, false);
    std::fill_n(valid.begin(), n, true);
    for (std::size_t t = n; t < w; ++t) v[2 * t] = v[2 * t + 1] = 0.0;
    return FrameLabels(TaskKind::VA, v, valid);
  }));
  results.push_back(check_model("pipeline_expr", TaskKind::EXPR, opt, [](std::mt19937_64& r, std::size_t w, std::size_t n) {
    std::vector<double> v(w, 0.0);
    std::uniform_int_distribution<int> cls(0, 7);
    for (std::size_t t = 0; t < n; ++t) v[t] = cls(r);
    std::vector<bool> valid(w, false);
    std::fill_n(valid.begin(), n, true);
    return FrameLabels(TaskKind::EXPR, v, valid);
  }));
  results.push_back(check_model("pipeline_au", TaskKind::AU, opt, [](std::mt19937_64& r, std::size_t w, std::size_t n) {
    std::vector<double> v(12 * w, 0.0);
    std::bernoulli_distribution bit(0.5);
    for (std::size_t i = 0; i < 12 * n; ++i) v[i] = bit(r) ? 1.0 : 0.0;
    std::vector<bool> valid(w, false);
    std::fill_n(valid.begin(), n, true);
    return FrameLabels(TaskKind::AU, v, valid);
  }));
  return results;
}

}  // namespace affectseq
