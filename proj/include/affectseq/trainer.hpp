#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectseq/datamodel.hpp"
#include "affectseq/model.hpp"
#include "affectseq/objectives.hpp"
#include "affectseq/segmentation.hpp"

namespace affectseq {

struct OptimConfig {
  double lr = 3e-5;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 0;  // no default; must be set before training
  std::size_t warmup_epochs = 1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

/// Adam moments and step counter, one moment buffer per parameter.
template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  bool operator==(const AdamWState&) const = default;
};

/// One AdamW update with decoupled weight decay:
///   theta <- theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// Throws NumericalError, leaving everything untouched, if any gradient is
/// non-finite.
template <typename T>
void adamw_step(std::deque<grad::Parameter<T>>& params, AdamWState<T>& state, const OptimConfig& cfg, double lr);

/// Linear warmup from 0 to base_lr over warmup_steps, then half-cosine decay
/// to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

/// Fold of a video, 0..folds-1, from a 64-bit FNV-1a hash of its id.
std::size_t fold_of(std::string_view video_id, std::size_t folds = 5);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();

  /// Line-delimited JSON record for the history log.
  std::string to_json() const;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  std::size_t epochs_done = 0;
  AdamWState<float> optim;
  std::string shuffle_rng;  // textual std::mt19937_64 state
  std::string dropout_rng;
  std::vector<EpochRecord> history;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<std::vector<float>> best_params;
};

/// Runs `model` over every window of a video and merges the window outputs.
template <typename T>
Matrix<double> predict_video(PipelineModel<T>& model, const VideoRecord& video, const SegmentationConfig& seg);

/// Concatenates the merged predictions of all videos and scores them.
template <typename T>
EvalReport evaluate_videos(PipelineModel<T>& model, std::span<const VideoRecord> videos, const SegmentationConfig& seg);

/// Epoch loop: seeded shuffle of training windows, minibatch forward,
/// masked task loss, backward, AdamW with scheduled lr, validation.
class Trainer {
 public:
  /// Called after each epoch; returning false stops the run early.
  using EpochHook = std::function<bool(const EpochRecord&, PipelineModel<float>&)>;

  Trainer(PipelineModel<float>& model, std::vector<VideoRecord> train, std::vector<VideoRecord> val,
          OptimConfig optim, SegmentationConfig seg);

  /// Continues from a saved state (parameters must already be in the model).
  void restore(TrainState state);
  const TrainState& state() const { return state_; }

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t warmup_steps() const;

  /// One epoch. Throws NumericalError on a non-finite loss; parameters are
  /// left at their values before the failing step.
  EpochRecord run_epoch();
  /// Epochs until optim.epochs (or `max_epochs` more, when non-zero) or until the hook says stop.
  const std::vector<EpochRecord>& run(const EpochHook& hook = {}, std::size_t max_epochs = 0);

  /// Copies the best-validation parameters into the model (no-op without validation data).
  void load_best_into_model();

 private:
  double step_batch(std::span<const Segment> batch, double lr, std::mt19937_64& dropout_rng);

  PipelineModel<float>& model_;
  std::vector<VideoRecord> train_;
  std::vector<VideoRecord> val_;
  OptimConfig optim_;
  SegmentationConfig seg_;
  std::vector<Segment> segments_;
  TrainState state_;
};

std::string rng_state(const std::mt19937_64& rng);
std::mt19937_64 rng_from_state(const std::string& state);

extern template void adamw_step(std::deque<grad::Parameter<float>>&, AdamWState<float>&, const OptimConfig&, double);
extern template void adamw_step(std::deque<grad::Parameter<double>>&, AdamWState<double>&, const OptimConfig&, double);
extern template Matrix<double> predict_video(PipelineModel<float>&, const VideoRecord&, const SegmentationConfig&);
extern template Matrix<double> predict_video(PipelineModel<double>&, const VideoRecord&, const SegmentationConfig&);
extern template EvalReport evaluate_videos(PipelineModel<float>&, std::span<const VideoRecord>, const SegmentationConfig&);
extern template EvalReport evaluate_videos(PipelineModel<double>&, std::span<const VideoRecord>, const SegmentationConfig&);

}  // namespace affectseq
