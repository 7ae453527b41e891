#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "affectseq/model.hpp"
#include "affectseq/segmentation.hpp"
#include "affectseq/trainer.hpp"

namespace affectseq {

using Json = nlohmann::ordered_json;

/// Declarative description of one run. Loaded from a JSON document whose
/// layout is given by run_config_schema(); unknown keys are rejected.
struct RunConfig {
  TaskKind task = TaskKind::VA;
  std::string features_dir;
  std::string annotations_dir;
  std::string output_dir;
  SegmentationConfig segmentation;
  ModelConfig model;
  OptimConfig optim;
  /// Validation fold (0..4) when no explicit lists are given; -1 disables validation.
  int fold = 0;
  std::vector<std::string> train_videos;
  std::vector<std::string> val_videos;
  std::uint64_t seed = 0;

  /// Pushes task and seed into the model/optim sections and validates them.
  void finalize();
};

Json to_json(const SegmentationConfig& cfg);
Json to_json(const ModelConfig& cfg);
Json to_json(const OptimConfig& cfg);
Json to_json(const RunConfig& cfg);

/// Each overlays the keys present in `j` onto `base`; throws ConfigError on
/// unknown keys or wrong types.
SegmentationConfig segmentation_config_from_json(const Json& j, SegmentationConfig base = {});
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});
OptimConfig optim_config_from_json(const Json& j, OptimConfig base = {});
RunConfig run_config_from_json(const Json& j, RunConfig base = {});

RunConfig load_run_config(const std::string& path);

struct DataSplit {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> val;
};

/// Explicit id lists when given, otherwise validation = fold_of(id) == fold
/// (fold -1: no validation). Unknown ids are a DataError.
DataSplit split_videos(std::vector<VideoRecord> videos, const RunConfig& cfg);

/// JSON Schema (draft 2020-12) of the run configuration document.
const std::string& run_config_schema();

}  // namespace affectseq
