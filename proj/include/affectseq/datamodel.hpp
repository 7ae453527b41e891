#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectseq/errors.hpp"

namespace affectseq {

enum class TaskKind { VA, EXPR, AU };

/// Width of the prediction vector for one frame: VA 2, EXPR 8, AU 12.
constexpr std::size_t output_dim(TaskKind task) {
  switch (task) {
    case TaskKind::VA:
      return 2;
    case TaskKind::EXPR:
      return 8;
    case TaskKind::AU:
      return 12;
  }
  return 0;
}

/// Number of stored label values per frame (EXPR keeps a single class index).
constexpr std::size_t label_width(TaskKind task) {
  return task == TaskKind::EXPR ? 1 : output_dim(task);
}

std::string_view task_name(TaskKind task);

/// Accepts "va", "expr", "au" in any case. Throws ConfigError otherwise.
TaskKind parse_task(std::string_view name);

/// Dense row-major matrix used for features and predictions.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values);

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

template <typename T>
Matrix<T>::Matrix(std::size_t r, std::size_t c, std::vector<T> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw StructuralError("matrix payload has " + std::to_string(data.size()) +
                          " values, expected " + std::to_string(r * c));
  }
}

/// Per-frame labels for one task with an explicit validity mask.
///
/// `values` holds label_width(task) numbers per frame. Invalid frames keep
/// zeros in `values`; only `valid` decides whether a frame is used.
class FrameLabels {
 public:
  FrameLabels() = default;
  FrameLabels(TaskKind task, std::vector<double> values, std::vector<bool> valid);

  /// All-invalid labels of the given length.
  static FrameLabels empty(TaskKind task, std::size_t n_frames);

  TaskKind task() const { return task_; }
  std::size_t size() const { return valid_.size(); }
  std::size_t width() const { return label_width(task_); }

  std::span<const double> frame(std::size_t i) const { return {values_.data() + i * width(), width()}; }
  bool valid(std::size_t i) const { return valid_[i]; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<bool>& valid_mask() const { return valid_; }
  std::size_t valid_count() const;

  /// Class index of an EXPR frame.
  int expr_class(std::size_t i) const { return static_cast<int>(values_[i]); }

  bool operator==(const FrameLabels&) const = default;

 private:
  TaskKind task_ = TaskKind::VA;
  std::vector<double> values_;
  std::vector<bool> valid_;
};

/// One video: per-frame features and labels for a single task. Immutable.
class VideoRecord {
 public:
  VideoRecord(std::string video_id, Matrix<float> features, FrameLabels labels);

  const std::string& video_id() const { return video_id_; }
  const Matrix<float>& features() const { return features_; }
  const FrameLabels& labels() const { return labels_; }
  std::size_t n_frames() const { return features_.rows; }
  std::size_t feature_dim() const { return features_.cols; }
  TaskKind task() const { return labels_.task(); }

 private:
  std::string video_id_;
  Matrix<float> features_;
  FrameLabels labels_;
};

/// Fixed-length window over a video. Frame numbers are 1-based.
struct Segment {
  std::string video_id;
  std::size_t index = 0;        // i, starting at 1
  std::size_t start_frame = 0;  // (i-1)*s + 1
  Matrix<float> features;       // w x D, zero rows past the video end
  std::vector<bool> frame_valid;
  FrameLabels labels;

  std::size_t window() const { return frame_valid.size(); }
  std::size_t valid_length() const;
};

/// Throws DataError when two videos disagree on feature_dim or task.
void check_dataset_consistency(std::span<const VideoRecord> videos);

}  // namespace affectseq
