#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affectseq/datamodel.hpp"
#include "affectseq/model.hpp"
#include "affectseq/segmentation.hpp"
#include "affectseq/trainer.hpp"

namespace affectseq::io {

namespace fs = std::filesystem;

// ---- feature files ---------------------------------------------------------
// "AFSQ1" | feature_dim u32 LE | n_frames u32 LE | n_frames*feature_dim f32 LE, row-major

inline constexpr std::string_view kFeatureMagic = "AFSQ1";
inline constexpr std::string_view kFeatureExtension = ".afsq";
inline constexpr std::string_view kAnnotationExtension = ".txt";

std::string encode_features(const Matrix<float>& features);
Matrix<float> decode_features(std::string_view bytes, const std::string& origin = "<memory>");
void write_features(const fs::path& path, const Matrix<float>& features);
Matrix<float> read_features(const fs::path& path);

// ---- annotation files ------------------------------------------------------
// One frame per line, optional single header line.
//   VA:   "valence,arousal"; -5 in either column marks the frame invalid
//   EXPR: class index 0..7; -1 marks the frame invalid
//   AU:   twelve comma-separated values in {0,1,-1}; any -1 marks the frame invalid

FrameLabels parse_annotations(std::string_view text, TaskKind task, const std::string& origin = "<memory>");
std::string format_annotations(const FrameLabels& labels);
FrameLabels read_annotations(const fs::path& path, TaskKind task);
void write_annotations(const fs::path& path, const FrameLabels& labels);

/// Per-frame predictions in the annotation layout of their task:
/// VA two reals, EXPR argmax class, AU twelve thresholded indicators.
std::string format_predictions(const Matrix<double>& predictions, TaskKind task);

VideoRecord load_video(const fs::path& feature_path, const fs::path& annotation_path, TaskKind task);

/// Loads every <id>.afsq in `features_dir` with its <id>.txt from
/// `annotations_dir`, sorted by id.
std::vector<VideoRecord> load_dataset(const fs::path& features_dir, const fs::path& annotations_dir, TaskKind task);

/// Every <id>.afsq in `features_dir` without annotations, sorted by id.
std::vector<std::pair<std::string, Matrix<float>>> load_features(const fs::path& features_dir);

/// Writes features/<id>.afsq and annotations/<id>.txt under `root`.
void write_dataset(const fs::path& root, const std::vector<VideoRecord>& videos);

// ---- synthetic data --------------------------------------------------------

struct SyntheticSpec {
  TaskKind task = TaskKind::VA;
  std::size_t n_videos = 20;
  std::size_t n_frames = 600;
  std::size_t feature_dim = 32;
  std::uint64_t seed = 0;
};

/// Features follow a seeded AR(1) latent process seen through a fixed linear
/// mixing plus noise. Labels are synthetic_labels(task, features).
std::vector<VideoRecord> generate_synthetic(const SyntheticSpec& spec);

/// The fixed generator map from features to labels. Depends only on the task
/// and the feature dimension, never on the seed:
///   u_t  = R f_t                          (R: 8 x D, fixed)
///   s_t  = mean of u over frames t-24..t+24 clipped to the video
///   VA:   (tanh(1.5 a_v.s_t), tanh(1.5 a_a.s_t))
///   EXPR: argmax_c (B s_t)_c              (B: 8 x 8, fixed)
///   AU:   [c_k.s_t > 0] for k = 1..12     (c_k fixed)
FrameLabels synthetic_labels(TaskKind task, const Matrix<float>& features);

/// Scores the generator map itself used as a predictor (VA values, one-hot
/// EXPR logits, +-1 AU logits), before any frame masking.
Matrix<double> synthetic_oracle_predictions(TaskKind task, const Matrix<float>& features);

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "AFCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  ModelConfig model;
  SegmentationConfig segmentation;
  OptimConfig optim;
  std::vector<NamedTensor> parameters;
  TrainState state;
};

/// Snapshot of a model (and optionally its training state).
Checkpoint make_checkpoint(const PipelineModel<float>& model, const SegmentationConfig& seg, const OptimConfig& optim,
                           const TrainState& state = {});
/// Builds a model with the checkpoint's configuration and parameters.
PipelineModel<float> restore_model(const Checkpoint& ckpt);
/// Same checkpoint with the best-validation parameters as its parameters.
Checkpoint best_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");
void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view bytes);

}  // namespace affectseq::io
