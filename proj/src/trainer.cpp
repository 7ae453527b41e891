#include "affectseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

namespace affectseq {

void OptimConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("optim config: " + what);
  };
  require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(eps > 0.0, "eps must be > 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 1, "epochs must be set (>= 1)");
}

template <typename T>
void adamw_step(std::deque<grad::Parameter<T>>& params, AdamWState<T>& state, const OptimConfig& cfg, double lr) {
  for (const auto& p : params) {
    for (T g : p.grad) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("adamw_step: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), T{0});
      state.v.emplace_back(p.value.size(), T{0});
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  std::size_t k = 0;
  for (auto& p : params) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    ++k;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double theta = static_cast<double>(p.value[i]) * decay;
      p.value[i] = static_cast<T>(theta - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t fold_of(std::string_view video_id, std::size_t folds) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : video_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % folds);
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["train_loss"] = train_loss;
  if (std::isfinite(val_metric)) {
    j["val_metric"] = val_metric;
  } else {
    j["val_metric"] = nullptr;
  }
  return j.dump();
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("corrupt RNG state");
  return rng;
}

template <typename T>
Matrix<double> predict_video(PipelineModel<T>& model, const VideoRecord& video, const SegmentationConfig& seg) {
  const auto segments = split(video, seg);
  std::vector<Matrix<double>> outputs;
  outputs.reserve(segments.size());
  for (const auto& s : segments) outputs.push_back(model.predict(s));
  return merge_predictions(segments, outputs, video.n_frames());
}

template <typename T>
EvalReport evaluate_videos(PipelineModel<T>& model, std::span<const VideoRecord> videos, const SegmentationConfig& seg) {
  if (videos.empty()) throw DataError("evaluate: no videos");
  const std::size_t d = output_dim(model.config().task);
  Matrix<double> all(0, d);
  std::vector<FrameLabels> labels;
  for (const auto& v : videos) {
    if (v.task() != model.config().task) throw ConfigError("evaluate: video '" + v.video_id() + "' has other task");
    auto pred = predict_video(model, v, seg);
    all.data.insert(all.data.end(), pred.data.begin(), pred.data.end());
    all.rows += pred.rows;
    labels.push_back(v.labels());
  }
  return evaluate(all, concat_labels(labels));
}

Trainer::Trainer(PipelineModel<float>& model, std::vector<VideoRecord> train, std::vector<VideoRecord> val,
                 OptimConfig optim, SegmentationConfig seg)
    : model_(model), train_(std::move(train)), val_(std::move(val)), optim_(optim), seg_(seg) {
  optim_.validate();
  seg_.validate();
  if (train_.empty()) throw DataError("training set is empty");
  for (const auto* set : {&train_, &val_}) {
    for (const auto& v : *set) {
      if (v.feature_dim() != model_.config().feature_dim) {
        throw ConfigError("video '" + v.video_id() + "' has feature_dim " + std::to_string(v.feature_dim()) +
                          " but the model expects " + std::to_string(model_.config().feature_dim));
      }
      if (v.task() != model_.config().task) {
        throw ConfigError("video '" + v.video_id() + "' is labelled for task " + std::string(task_name(v.task())) +
                          " but the model predicts " + std::string(task_name(model_.config().task)));
      }
    }
  }
  for (const auto& v : train_) {
    auto segs = split(v, seg_);
    std::move(segs.begin(), segs.end(), std::back_inserter(segments_));
  }
  state_.shuffle_rng = rng_state(std::mt19937_64(optim_.seed));
  state_.dropout_rng = rng_state(std::mt19937_64(optim_.seed ^ 0x9E3779B97F4A7C15ULL));
}

void Trainer::restore(TrainState state) { state_ = std::move(state); }

std::size_t Trainer::steps_per_epoch() const {
  return (segments_.size() + optim_.batch_size - 1) / optim_.batch_size;
}

std::size_t Trainer::total_steps() const { return steps_per_epoch() * optim_.epochs; }

std::size_t Trainer::warmup_steps() const {
  const std::size_t total = total_steps();
  return std::min(optim_.warmup_epochs * steps_per_epoch(), total == 0 ? 0 : total - 1);
}

double Trainer::step_batch(std::span<const Segment> batch, double lr, std::mt19937_64& dropout_rng) {
  std::vector<FrameLabels> parts;
  parts.reserve(batch.size());
  for (const auto& s : batch) parts.push_back(s.labels);
  const FrameLabels labels = concat_labels(parts);
  const std::size_t needed = labels.task() == TaskKind::VA ? 2 : 1;
  if (labels.valid_count() < needed) return std::numeric_limits<double>::quiet_NaN();

  grad::Tape<float> tape;
  PipelineModel<float>::Context ctx{tape, true, &dropout_rng, nullptr};
  model_.zero_grad();
  auto out = model_.forward(ctx, batch);
  auto loss = task_loss(out, labels);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NumericalError("training diverged: non-finite loss " + std::to_string(value));
  tape.backward(loss);
  adamw_step(model_.parameters(), state_.optim, optim_, lr);
  return value;
}

EpochRecord Trainer::run_epoch() {
  auto shuffle_rng = rng_from_state(state_.shuffle_rng);
  auto dropout_rng = rng_from_state(state_.dropout_rng);
  std::vector<std::size_t> order(segments_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const std::size_t spe = steps_per_epoch();
  const std::size_t total = total_steps();
  const std::size_t warmup = warmup_steps();
  EpochRecord rec;
  rec.epoch = state_.epochs_done + 1;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<Segment> batch;
  for (std::size_t b = 0; b < spe; ++b) {
    batch.clear();
    const std::size_t end = std::min(order.size(), (b + 1) * optim_.batch_size);
    for (std::size_t i = b * optim_.batch_size; i < end; ++i) batch.push_back(segments_[order[i]]);
    const std::size_t global_step = state_.epochs_done * spe + b;
    rec.lr = lr_schedule(std::min(global_step, total - 1), total, warmup, optim_.lr);
    const double loss = step_batch(batch, rec.lr, dropout_rng);
    if (std::isfinite(loss)) {
      loss_sum += loss;
      ++loss_count;
    }
  }
  rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::numeric_limits<double>::quiet_NaN();

  if (!val_.empty()) {
    rec.val_metric = evaluate_videos(model_, val_, seg_).primary_metric();
    if (rec.val_metric > state_.best_metric) {
      state_.best_metric = rec.val_metric;
      state_.best_epoch = rec.epoch;
      state_.best_params.clear();
      for (const auto& p : model_.parameters()) state_.best_params.push_back(p.value);
    }
  }
  state_.shuffle_rng = rng_state(shuffle_rng);
  state_.dropout_rng = rng_state(dropout_rng);
  state_.epochs_done += 1;
  state_.history.push_back(rec);
  return rec;
}

const std::vector<EpochRecord>& Trainer::run(const EpochHook& hook, std::size_t max_epochs) {
  std::size_t ran = 0;
  while (state_.epochs_done < optim_.epochs && (max_epochs == 0 || ran < max_epochs)) {
    const EpochRecord rec = run_epoch();
    ++ran;
    if (hook && !hook(rec, model_)) break;
  }
  return state_.history;
}

void Trainer::load_best_into_model() {
  if (state_.best_params.empty()) return;
  auto& params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = state_.best_params[i];
}

template void adamw_step(std::deque<grad::Parameter<float>>&, AdamWState<float>&, const OptimConfig&, double);
template void adamw_step(std::deque<grad::Parameter<double>>&, AdamWState<double>&, const OptimConfig&, double);
template Matrix<double> predict_video(PipelineModel<float>&, const VideoRecord&, const SegmentationConfig&);
template Matrix<double> predict_video(PipelineModel<double>&, const VideoRecord&, const SegmentationConfig&);
template EvalReport evaluate_videos(PipelineModel<float>&, std::span<const VideoRecord>, const SegmentationConfig&);
template EvalReport evaluate_videos(PipelineModel<double>&, std::span<const VideoRecord>, const SegmentationConfig&);

}  // namespace affectseq
