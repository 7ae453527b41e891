#include "affectseq/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

namespace affectseq {

using grad::Tensor;

double ccc(std::span<const double> x, std::span<const double> y, const std::vector<bool>& mask) {
  if (x.size() != y.size() || mask.size() != x.size()) {
    throw StructuralError("ccc: sequences of length " + std::to_string(x.size()) + "/" + std::to_string(y.size()) +
                          " with mask of " + std::to_string(mask.size()));
  }
  double n = 0.0, mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    n += 1.0;
    const double dx = x[i] - mx;
    mx += dx / n;
    const double dy = y[i] - my;
    my += dy / n;
    sxx += dx * (x[i] - mx);
    syy += dy * (y[i] - my);
    sxy += dx * (y[i] - my);
  }
  if (n < 2.0) throw StructuralError("ccc: needs at least two valid frames");
  const double cov = sxy / n;
  const double denom = sxx / n + syy / n + (mx - my) * (mx - my);
  if (denom < kCccDegenerateDenominator) return 0.0;
  return std::clamp(2.0 * cov / denom, -1.0, 1.0);
}

double ccc(std::span<const double> x, std::span<const double> y) {
  return ccc(x, y, std::vector<bool>(x.size(), true));
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "task            %s\nvalid_frames    %zu\n", std::string(task_name(task)).c_str(),
                valid_frames);
  out += line;
  if (task == TaskKind::VA) {
    std::snprintf(line, sizeof line, "ccc_valence     %.6f\nccc_arousal     %.6f\nmean_ccc        %.6f\n", ccc_valence,
                  ccc_arousal, mean_ccc);
    out += line;
  } else {
    for (std::size_t c = 0; c < per_class_f1.size(); ++c) {
      std::snprintf(line, sizeof line, "f1[%2zu]          %.6f\n", c, per_class_f1[c]);
      out += line;
    }
    std::snprintf(line, sizeof line, "macro_f1        %.6f\n", macro_f1);
    out += line;
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task_name(task);
  j["valid_frames"] = valid_frames;
  if (task == TaskKind::VA) {
    j["ccc_valence"] = ccc_valence;
    j["ccc_arousal"] = ccc_arousal;
    j["mean_ccc"] = mean_ccc;
  } else {
    j["per_class_f1"] = per_class_f1;
    j["macro_f1"] = macro_f1;
  }
  return j.dump();
}

EvalReport macro_f1(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> target,
                    const std::vector<bool>& mask, std::size_t num_classes) {
  const std::size_t n = mask.size();
  if (num_classes == 0 || predicted.size() != n * num_classes || target.size() != n * num_classes) {
    throw StructuralError("macro_f1: indicator matrices do not match " + std::to_string(n) + " x " +
                          std::to_string(num_classes));
  }
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  EvalReport r;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++r.valid_frames;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const bool p = predicted[i * num_classes + c] != 0;
      const bool t = target[i * num_classes + c] != 0;
      tp[c] += p && t;
      fp[c] += p && !t;
      fn[c] += !p && t;
    }
  }
  r.per_class_f1.resize(num_classes);
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    r.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    total += r.per_class_f1[c];
  }
  r.macro_f1 = total / static_cast<double>(num_classes);
  return r;
}

std::vector<std::uint8_t> expr_indicators(const Matrix<double>& logits) {
  std::vector<std::uint8_t> out(logits.rows * logits.cols, 0);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    out[i * logits.cols + best] = 1;
  }
  return out;
}

std::vector<std::uint8_t> expr_indicators(const FrameLabels& labels) {
  const std::size_t c = output_dim(TaskKind::EXPR);
  std::vector<std::uint8_t> out(labels.size() * c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.valid(i)) out[i * c + static_cast<std::size_t>(labels.expr_class(i))] = 1;
  }
  return out;
}

std::vector<std::uint8_t> au_indicators(const Matrix<double>& logits) {
  std::vector<std::uint8_t> out(logits.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.data[i] >= 0.0 ? 1 : 0;
  return out;
}

EvalReport evaluate(const Matrix<double>& predictions, const FrameLabels& labels) {
  const TaskKind task = labels.task();
  if (predictions.rows != labels.size() || predictions.cols != output_dim(task)) {
    throw StructuralError("evaluate: predictions " + std::to_string(predictions.rows) + " x " +
                          std::to_string(predictions.cols) + " do not match " + std::to_string(labels.size()) +
                          " frames of task " + std::string(task_name(task)));
  }
  EvalReport r;
  switch (task) {
    case TaskKind::VA: {
      const std::size_t n = labels.size();
      std::vector<double> pv(n), pa(n), tv(n), ta(n);
      for (std::size_t i = 0; i < n; ++i) {
        pv[i] = predictions(i, 0);
        pa[i] = predictions(i, 1);
        tv[i] = labels.frame(i)[0];
        ta[i] = labels.frame(i)[1];
      }
      r.ccc_valence = ccc(pv, tv, labels.valid_mask());
      r.ccc_arousal = ccc(pa, ta, labels.valid_mask());
      r.mean_ccc = 0.5 * (r.ccc_valence + r.ccc_arousal);
      r.valid_frames = labels.valid_count();
      break;
    }
    case TaskKind::EXPR:
      r = macro_f1(expr_indicators(predictions), expr_indicators(labels), labels.valid_mask(), output_dim(task));
      break;
    case TaskKind::AU: {
      std::vector<std::uint8_t> target(labels.values().size());
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = labels.values()[i] != 0.0 ? 1 : 0;
      r = macro_f1(au_indicators(predictions), target, labels.valid_mask(), output_dim(task));
      break;
    }
  }
  r.task = task;
  return r;
}

FrameLabels concat_labels(std::span<const FrameLabels> parts) {
  if (parts.empty()) throw StructuralError("concat_labels: nothing to concatenate");
  const TaskKind task = parts.front().task();
  std::vector<double> values;
  std::vector<bool> valid;
  for (const auto& p : parts) {
    if (p.task() != task) throw StructuralError("concat_labels: mixed tasks");
    values.insert(values.end(), p.values().begin(), p.values().end());
    valid.insert(valid.end(), p.valid_mask().begin(), p.valid_mask().end());
  }
  return FrameLabels(task, std::move(values), std::move(valid));
}

// ---- losses ----------------------------------------------------------------

namespace {

template <typename T>
std::size_t frames_of(const Tensor<T>& pred, std::size_t width, const char* op) {
  if (pred.rank() == 0 || pred.shape().back() != width) {
    throw StructuralError(std::string(op) + ": last axis must have " + std::to_string(width) + " entries, got " +
                          grad::shape_str(pred.shape()));
  }
  return pred.numel() / width;
}

}  // namespace

template <typename T>
Tensor<T> loss_va(const Tensor<T>& pred, std::span<const double> target, const std::vector<bool>& mask) {
  const std::size_t n = frames_of(pred, 2, "loss_va");
  if (target.size() != 2 * n || mask.size() != n) throw StructuralError("loss_va: target/mask size mismatch");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) rows.push_back(i);
  if (rows.size() < 2) throw StructuralError("loss_va: needs at least two valid frames");
  const T m = static_cast<T>(rows.size());
  auto& tape = pred.tape();

  std::vector<Tensor<T>> per_dim;
  for (std::size_t dim = 0; dim < 2; ++dim) {
    std::vector<std::size_t> idx(rows.size());
    std::vector<T> y(rows.size());
    T my{0};
    for (std::size_t k = 0; k < rows.size(); ++k) {
      idx[k] = rows[k] * 2 + dim;
      y[k] = static_cast<T>(target[rows[k] * 2 + dim]);
      my += y[k];
    }
    my /= m;
    T vy{0};
    for (auto& v : y) {
      v -= my;
      vy += v * v;
    }
    vy /= m;
    auto yc = tape.constant({rows.size()}, std::move(y));

    auto x = grad::take(pred, idx);
    auto mx = grad::mean(x);
    auto xc = grad::sub(x, mx);
    auto vx = grad::mean(grad::mul(xc, xc));
    auto cov = grad::mean(grad::mul(xc, yc));
    auto gap = grad::add_scalar(mx, -my);
    auto denom = grad::add(grad::add_scalar(vx, vy), grad::mul(gap, gap));
    if (static_cast<double>(denom.item()) < kCccDegenerateDenominator) {
      per_dim.push_back(tape.constant({}, {T(0)}));
    } else {
      per_dim.push_back(grad::div(grad::scale(cov, T(2)), denom));
    }
  }
  auto mean_ccc = grad::scale(grad::add(per_dim[0], per_dim[1]), T(0.5));
  return grad::add_scalar(grad::scale(mean_ccc, T(-1)), T(1));
}

template <typename T>
Tensor<T> loss_expr(const Tensor<T>& logits, std::span<const int> target, const std::vector<bool>& mask) {
  constexpr std::size_t c = output_dim(TaskKind::EXPR);
  const std::size_t n = frames_of(logits, c, "loss_expr");
  if (target.size() != n || mask.size() != n) throw StructuralError("loss_expr: target/mask size mismatch");
  std::vector<std::size_t> rows, picks;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (target[i] < 0 || target[i] >= static_cast<int>(c)) {
      throw DataError("loss_expr: class " + std::to_string(target[i]) + " out of range at frame " + std::to_string(i));
    }
    for (std::size_t k = 0; k < c; ++k) rows.push_back(i * c + k);
    picks.push_back((picks.size()) * c + static_cast<std::size_t>(target[i]));
  }
  if (picks.empty()) throw StructuralError("loss_expr: no valid frames");
  auto valid = grad::reshape(grad::take(logits, rows), {picks.size(), c});
  auto logp = grad::log_softmax(valid, 1);
  return grad::scale(grad::mean(grad::take(logp, picks)), T(-1));
}

template <typename T>
Tensor<T> loss_au(const Tensor<T>& logits, std::span<const double> target, const std::vector<bool>& mask) {
  constexpr std::size_t c = output_dim(TaskKind::AU);
  const std::size_t n = frames_of(logits, c, "loss_au");
  if (target.size() != n * c || mask.size() != n) throw StructuralError("loss_au: target/mask size mismatch");
  std::vector<std::size_t> idx;
  std::vector<T> y;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t k = 0; k < c; ++k) {
      idx.push_back(i * c + k);
      y.push_back(static_cast<T>(target[i * c + k]));
    }
  }
  if (idx.empty()) throw StructuralError("loss_au: no valid entries");
  return grad::mean(grad::bce_with_logits(grad::take(logits, idx), std::span<const T>(y)));
}

template <typename T>
Tensor<T> task_loss(const Tensor<T>& pred, const FrameLabels& labels) {
  switch (labels.task()) {
    case TaskKind::VA:
      return loss_va(pred, labels.values(), labels.valid_mask());
    case TaskKind::EXPR: {
      std::vector<int> classes(labels.size());
      for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = labels.expr_class(i);
      return loss_expr(pred, std::span<const int>(classes), labels.valid_mask());
    }
    case TaskKind::AU:
      return loss_au(pred, labels.values(), labels.valid_mask());
  }
  throw StructuralError("task_loss: unknown task");
}

template Tensor<float> loss_va(const Tensor<float>&, std::span<const double>, const std::vector<bool>&);
template Tensor<double> loss_va(const Tensor<double>&, std::span<const double>, const std::vector<bool>&);
template Tensor<float> loss_expr(const Tensor<float>&, std::span<const int>, const std::vector<bool>&);
template Tensor<double> loss_expr(const Tensor<double>&, std::span<const int>, const std::vector<bool>&);
template Tensor<float> loss_au(const Tensor<float>&, std::span<const double>, const std::vector<bool>&);
template Tensor<double> loss_au(const Tensor<double>&, std::span<const double>, const std::vector<bool>&);
template Tensor<float> task_loss(const Tensor<float>&, const FrameLabels&);
template Tensor<double> task_loss(const Tensor<double>&, const FrameLabels&);

}  // namespace affectseq
