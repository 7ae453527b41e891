#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "affectseq/datamodel.hpp"

namespace affectseq {

/// Window length w and stride s, both in frames. Requires 1 <= s <= w.
struct SegmentationConfig {
  std::size_t window = 300;
  std::size_t stride = 200;

  void validate() const;
};

/// Nominal number of windows for an n-frame video: floor(n/s) + 1.
std::size_t nominal_segment_count(std::size_t n_frames, std::size_t stride);

/// Number of windows `split` emits: those whose start frame lies in 1..n.
std::size_t emitted_segment_count(std::size_t n_frames, std::size_t stride);

/// Cuts a video into overlapping windows. Window i starts at frame (i-1)*s+1;
/// windows starting past the last frame are dropped and the tail of the last
/// windows is zero-padded with frame_valid=false.
std::vector<Segment> split(const VideoRecord& video, const SegmentationConfig& cfg);

/// Averages per-window predictions (w x d each) back onto the n frames of a
/// video. Padded positions contribute nothing. Throws StructuralError when a
/// frame is covered by no valid window position.
Matrix<double> merge_predictions(std::span<const std::pair<const Segment*, Matrix<double>>> per_segment,
                                 std::size_t n_frames);

/// Convenience overload for parallel arrays.
Matrix<double> merge_predictions(std::span<const Segment> segments, std::span<const Matrix<double>> outputs,
                                 std::size_t n_frames);

}  // namespace affectseq
