#include "affectseq/segmentation.hpp"

#include <algorithm>
#include <string>

namespace affectseq {

void SegmentationConfig::validate() const {
  if (stride < 1) throw ConfigError("segment stride must be >= 1");
  if (window < stride) {
    throw ConfigError("segment stride " + std::to_string(stride) + " exceeds window " + std::to_string(window) +
                      " (overlap requires s <= w)");
  }
}

std::size_t nominal_segment_count(std::size_t n_frames, std::size_t stride) { return n_frames / stride + 1; }

std::size_t emitted_segment_count(std::size_t n_frames, std::size_t stride) {
  if (n_frames == 0) return 0;
  return (n_frames - 1) / stride + 1;
}

std::vector<Segment> split(const VideoRecord& video, const SegmentationConfig& cfg) {
  cfg.validate();
  const std::size_t n = video.n_frames();
  const std::size_t w = cfg.window;
  const std::size_t dim = video.feature_dim();
  const auto& labels = video.labels();
  const std::size_t lw = labels.width();

  std::vector<Segment> out;
  const std::size_t count = std::min(nominal_segment_count(n, cfg.stride), emitted_segment_count(n, cfg.stride));
  out.reserve(count);
  for (std::size_t i = 1; i <= count; ++i) {
    Segment seg;
    seg.video_id = video.video_id();
    seg.index = i;
    seg.start_frame = (i - 1) * cfg.stride + 1;
    seg.features = Matrix<float>(w, dim, 0.0f);
    seg.frame_valid.assign(w, false);
    std::vector<double> values(w * lw, 0.0);
    std::vector<bool> label_valid(w, false);

    const std::size_t first = seg.start_frame - 1;  // 0-based
    const std::size_t len = std::min(w, n - first);
    for (std::size_t t = 0; t < len; ++t) {
      auto src = video.features().row(first + t);
      std::copy(src.begin(), src.end(), seg.features.row(t).begin());
      seg.frame_valid[t] = true;
      auto lab = labels.frame(first + t);
      std::copy(lab.begin(), lab.end(), values.begin() + static_cast<std::ptrdiff_t>(t * lw));
      label_valid[t] = labels.valid(first + t);
    }
    seg.labels = FrameLabels(labels.task(), std::move(values), std::move(label_valid));
    out.push_back(std::move(seg));
  }
  return out;
}

Matrix<double> merge_predictions(std::span<const std::pair<const Segment*, Matrix<double>>> per_segment,
                                 std::size_t n_frames) {
  if (per_segment.empty()) throw StructuralError("merge_predictions: no segments");
  const std::size_t d = per_segment.front().second.cols;
  Matrix<double> sum(n_frames, d, 0.0);
  std::vector<std::size_t> hits(n_frames, 0);

  // Accumulate in frame order so the result does not depend on input order.
  std::vector<std::size_t> order(per_segment.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return per_segment[a].first->start_frame < per_segment[b].first->start_frame;
  });

  for (std::size_t idx : order) {
    const auto& [seg, pred] = per_segment[idx];
    if (pred.cols != d) throw StructuralError("merge_predictions: inconsistent output widths");
    if (pred.rows != seg->window()) {
      throw StructuralError("merge_predictions: prediction rows " + std::to_string(pred.rows) +
                            " differ from window " + std::to_string(seg->window()));
    }
    for (std::size_t t = 0; t < seg->window(); ++t) {
      if (!seg->frame_valid[t]) continue;
      const std::size_t frame = seg->start_frame - 1 + t;
      if (frame >= n_frames) throw StructuralError("merge_predictions: segment extends past the video end");
      auto src = pred.row(t);
      auto dst = sum.row(frame);
      for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
      ++hits[frame];
    }
  }
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (hits[f] == 0) throw StructuralError("merge_predictions: frame " + std::to_string(f + 1) + " is not covered");
    for (auto& v : sum.row(f)) v /= static_cast<double>(hits[f]);
  }
  return sum;
}

Matrix<double> merge_predictions(std::span<const Segment> segments, std::span<const Matrix<double>> outputs,
                                 std::size_t n_frames) {
  if (segments.size() != outputs.size()) throw StructuralError("merge_predictions: segment/output count mismatch");
  std::vector<std::pair<const Segment*, Matrix<double>>> paired;
  paired.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) paired.emplace_back(&segments[i], outputs[i]);
  return merge_predictions(paired, n_frames);
}

}  // namespace affectseq
