#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "affectseq/datamodel.hpp"
#include "affectseq/tensor.hpp"

namespace affectseq {

/// Denominators below this make CCC degenerate; it is then reported as 0.
inline constexpr double kCccDegenerateDenominator = 1e-12;

/// Concordance correlation coefficient over the frames where mask is true.
/// Single-pass co-moment accumulation with population (1/N) statistics.
/// Throws StructuralError with fewer than two valid pairs.
double ccc(std::span<const double> x, std::span<const double> y, const std::vector<bool>& mask);
double ccc(std::span<const double> x, std::span<const double> y);

struct EvalReport {
  TaskKind task = TaskKind::VA;
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  double mean_ccc = 0.0;
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  std::size_t valid_frames = 0;

  /// mean CCC for VA, macro F1 otherwise.
  double primary_metric() const { return task == TaskKind::VA ? mean_ccc : macro_f1; }
  /// Fixed-width text table.
  std::string to_table() const;
  /// Single-line JSON record.
  std::string to_json() const;
};

/// Per-class F1 (0/0 counted as 0) and their unweighted mean over N x C
/// binary indicator matrices; rows with mask false are skipped.
EvalReport macro_f1(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> target,
                    const std::vector<bool>& mask, std::size_t num_classes);

/// argmax of each logit row, as one-hot indicators (ties take the lowest index).
std::vector<std::uint8_t> expr_indicators(const Matrix<double>& logits);
/// One-hot indicators of EXPR class labels; invalid frames get all zeros.
std::vector<std::uint8_t> expr_indicators(const FrameLabels& labels);
/// sigmoid(logit) >= 0.5, i.e. logit >= 0.
std::vector<std::uint8_t> au_indicators(const Matrix<double>& logits);

/// Scores merged per-frame predictions (n x output_dim) against labels.
/// VA: CCC per dimension over the valid frames; EXPR/AU: macro F1.
EvalReport evaluate(const Matrix<double>& predictions, const FrameLabels& labels);

// ---- differentiable losses -------------------------------------------------
// Each accepts predictions of shape (..., d); leading axes are flattened into
// frames. Frames with mask false never influence the value or the gradient.

/// 1 - (CCC_valence + CCC_arousal) / 2 over the valid frames of the batch.
template <typename T>
grad::Tensor<T> loss_va(const grad::Tensor<T>& pred, std::span<const double> target, const std::vector<bool>& mask);

/// Mean softmax cross-entropy of the true class over valid frames.
template <typename T>
grad::Tensor<T> loss_expr(const grad::Tensor<T>& logits, std::span<const int> target, const std::vector<bool>& mask);

/// Mean logit-space binary cross-entropy over valid frame/unit pairs.
template <typename T>
grad::Tensor<T> loss_au(const grad::Tensor<T>& logits, std::span<const double> target, const std::vector<bool>& mask);

/// Dispatches on labels.task().
template <typename T>
grad::Tensor<T> task_loss(const grad::Tensor<T>& pred, const FrameLabels& labels);

/// Concatenates the labels of consecutive windows (or videos).
FrameLabels concat_labels(std::span<const FrameLabels> parts);

extern template grad::Tensor<float> loss_va(const grad::Tensor<float>&, std::span<const double>, const std::vector<bool>&);
extern template grad::Tensor<double> loss_va(const grad::Tensor<double>&, std::span<const double>, const std::vector<bool>&);
extern template grad::Tensor<float> loss_expr(const grad::Tensor<float>&, std::span<const int>, const std::vector<bool>&);
extern template grad::Tensor<double> loss_expr(const grad::Tensor<double>&, std::span<const int>, const std::vector<bool>&);
extern template grad::Tensor<float> loss_au(const grad::Tensor<float>&, std::span<const double>, const std::vector<bool>&);
extern template grad::Tensor<double> loss_au(const grad::Tensor<double>&, std::span<const double>, const std::vector<bool>&);
extern template grad::Tensor<float> task_loss(const grad::Tensor<float>&, const FrameLabels&);
extern template grad::Tensor<double> task_loss(const grad::Tensor<double>&, const FrameLabels&);

}  // namespace affectseq
