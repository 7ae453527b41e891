#include "affectseq/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace affectseq {

std::string_view task_name(TaskKind task) {
  switch (task) {
    case TaskKind::VA:
      return "va";
    case TaskKind::EXPR:
      return "expr";
    case TaskKind::AU:
      return "au";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "va") return TaskKind::VA;
  if (lower == "expr") return TaskKind::EXPR;
  if (lower == "au") return TaskKind::AU;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected va, expr or au)");
}

FrameLabels::FrameLabels(TaskKind task, std::vector<double> values, std::vector<bool> valid)
    : task_(task), values_(std::move(values)), valid_(std::move(valid)) {
  const std::size_t w = width();
  if (values_.size() != valid_.size() * w) {
    throw StructuralError("label payload has " + std::to_string(values_.size()) + " values for " +
                          std::to_string(valid_.size()) + " frames of width " + std::to_string(w));
  }
  for (std::size_t i = 0; i < valid_.size(); ++i) {
    if (!valid_[i]) continue;
    for (std::size_t k = 0; k < w; ++k) {
      const double v = values_[i * w + k];
      bool ok = std::isfinite(v);
      switch (task_) {
        case TaskKind::VA:
          ok = ok && v >= -1.0 && v <= 1.0;
          break;
        case TaskKind::EXPR:
          ok = ok && v >= 0.0 && v <= 7.0 && v == std::floor(v);
          break;
        case TaskKind::AU:
          ok = ok && (v == 0.0 || v == 1.0);
          break;
      }
      if (!ok) {
        throw DataError("frame " + std::to_string(i + 1) + ": label value " + std::to_string(v) +
                        " out of range for task " + std::string(task_name(task_)));
      }
    }
  }
}

FrameLabels FrameLabels::empty(TaskKind task, std::size_t n_frames) {
  return FrameLabels(task, std::vector<double>(n_frames * label_width(task), 0.0),
                     std::vector<bool>(n_frames, false));
}

std::size_t FrameLabels::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), true));
}

VideoRecord::VideoRecord(std::string video_id, Matrix<float> features, FrameLabels labels)
    : video_id_(std::move(video_id)), features_(std::move(features)), labels_(std::move(labels)) {
  if (features_.rows == 0) throw DataError("video '" + video_id_ + "' has no frames");
  if (features_.cols == 0) throw DataError("video '" + video_id_ + "' has zero feature dimension");
  if (labels_.size() != features_.rows) {
    throw DataError("video '" + video_id_ + "': " + std::to_string(features_.rows) +
                    " feature rows but " + std::to_string(labels_.size()) + " label frames");
  }
  for (float v : features_.data) {
    if (!std::isfinite(v)) throw DataError("video '" + video_id_ + "' has non-finite features");
  }
}

std::size_t Segment::valid_length() const {
  return static_cast<std::size_t>(std::count(frame_valid.begin(), frame_valid.end(), true));
}

void check_dataset_consistency(std::span<const VideoRecord> videos) {
  if (videos.empty()) return;
  const auto dim = videos.front().feature_dim();
  const auto task = videos.front().task();
  for (const auto& v : videos) {
    if (v.feature_dim() != dim) {
      throw DataError("video '" + v.video_id() + "' has feature_dim " + std::to_string(v.feature_dim()) +
                      ", dataset uses " + std::to_string(dim));
    }
    if (v.task() != task) throw DataError("video '" + v.video_id() + "' carries labels for a different task");
  }
}

}  // namespace affectseq
