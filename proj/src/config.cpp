#include "affectseq/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace affectseq {

namespace {

// Reads typed fields from one JSON object and rejects anything unexpected.
class Section {
 public:
  Section(const Json& j, std::string name, std::set<std::string> allowed) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    for (const auto& [key, _] : j_.items()) {
      if (!allowed.count(key)) throw ConfigError("config section '" + name_ + "': unknown key '" + key + "'");
    }
  }

  template <typename V>
  void read(const char* key, V& out) const {
    if (!j_.contains(key)) return;
    try {
      const auto& v = j_.at(key);
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_unsigned_v<V>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<V>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.template get<V>();
    } catch (const std::exception&) {
      throw ConfigError("config section '" + name_ + "': key '" + key + "' has the wrong type");
    }
  }

  const Json* child(const char* key) const { return j_.contains(key) ? &j_.at(key) : nullptr; }

 private:
  const Json& j_;
  std::string name_;
};

}  // namespace

Json to_json(const SegmentationConfig& cfg) { return Json{{"window", cfg.window}, {"stride", cfg.stride}}; }

Json to_json(const ModelConfig& cfg) {
  Json j;
  j["feature_dim"] = cfg.feature_dim;
  j["task"] = task_name(cfg.task);
  j["dropout"] = cfg.dropout;
  j["tcn"] = Json{{"enabled", cfg.tcn.enabled},
                  {"channels", cfg.tcn.channels},
                  {"kernel_size", cfg.tcn.kernel_size},
                  {"dilations", cfg.tcn.dilations},
                  {"num_blocks", cfg.tcn.num_blocks}};
  j["encoder"] = Json{{"enabled", cfg.encoder.enabled},
                      {"d_model", cfg.encoder.d_model},
                      {"num_layers", cfg.encoder.num_layers},
                      {"num_heads", cfg.encoder.num_heads},
                      {"ff_dim", cfg.encoder.ff_dim}};
  j["head"] = Json{{"hidden_dim", cfg.head.hidden_dim}};
  return j;
}

Json to_json(const OptimConfig& cfg) {
  return Json{{"lr", cfg.lr},
              {"weight_decay", cfg.weight_decay},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"eps", cfg.eps},
              {"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},
              {"warmup_epochs", cfg.warmup_epochs},
              {"seed", cfg.seed}};
}

Json to_json(const RunConfig& cfg) {
  Json j;
  j["task"] = task_name(cfg.task);
  j["features_dir"] = cfg.features_dir;
  j["annotations_dir"] = cfg.annotations_dir;
  j["output_dir"] = cfg.output_dir;
  j["segmentation"] = to_json(cfg.segmentation);
  j["model"] = to_json(cfg.model);
  j["model"]["task"] = task_name(cfg.task);
  j["optim"] = to_json(cfg.optim);
  j["fold"] = cfg.fold;
  j["train_videos"] = cfg.train_videos;
  j["val_videos"] = cfg.val_videos;
  j["seed"] = cfg.seed;
  return j;
}

SegmentationConfig segmentation_config_from_json(const Json& j, SegmentationConfig base) {
  Section s(j, "segmentation", {"window", "stride"});
  s.read("window", base.window);
  s.read("stride", base.stride);
  return base;
}

ModelConfig model_config_from_json(const Json& j, ModelConfig base) {
  Section s(j, "model", {"feature_dim", "task", "dropout", "tcn", "encoder", "head"});
  s.read("feature_dim", base.feature_dim);
  s.read("dropout", base.dropout);
  if (j.contains("task")) {
    std::string task;
    s.read("task", task);
    base.task = parse_task(task);
  }
  if (const Json* t = s.child("tcn")) {
    Section tcn(*t, "model.tcn", {"enabled", "channels", "kernel_size", "dilations", "num_blocks"});
    tcn.read("enabled", base.tcn.enabled);
    tcn.read("channels", base.tcn.channels);
    tcn.read("kernel_size", base.tcn.kernel_size);
    tcn.read("num_blocks", base.tcn.num_blocks);
    if (t->contains("dilations")) {
      const auto& d = t->at("dilations");
      if (!d.is_array()) throw ConfigError("config section 'model.tcn': key 'dilations' must be an array");
      base.tcn.dilations.clear();
      for (const auto& v : d) {
        if (!v.is_number_unsigned()) throw ConfigError("config section 'model.tcn': dilations must be unsigned");
        base.tcn.dilations.push_back(v.get<std::size_t>());
      }
    }
  }
  if (const Json* e = s.child("encoder")) {
    Section enc(*e, "model.encoder", {"enabled", "d_model", "num_layers", "num_heads", "ff_dim"});
    enc.read("enabled", base.encoder.enabled);
    enc.read("d_model", base.encoder.d_model);
    enc.read("num_layers", base.encoder.num_layers);
    enc.read("num_heads", base.encoder.num_heads);
    enc.read("ff_dim", base.encoder.ff_dim);
  }
  if (const Json* h = s.child("head")) {
    Section head(*h, "model.head", {"hidden_dim"});
    head.read("hidden_dim", base.head.hidden_dim);
  }
  return base;
}

OptimConfig optim_config_from_json(const Json& j, OptimConfig base) {
  Section s(j, "optim",
            {"lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "epochs", "warmup_epochs", "seed"});
  s.read("lr", base.lr);
  s.read("weight_decay", base.weight_decay);
  s.read("beta1", base.beta1);
  s.read("beta2", base.beta2);
  s.read("eps", base.eps);
  s.read("batch_size", base.batch_size);
  s.read("epochs", base.epochs);
  s.read("warmup_epochs", base.warmup_epochs);
  s.read("seed", base.seed);
  return base;
}

RunConfig run_config_from_json(const Json& j, RunConfig base) {
  Section s(j, "root",
            {"$schema", "task", "features_dir", "annotations_dir", "output_dir", "segmentation", "model", "optim",
             "fold", "train_videos", "val_videos", "seed"});
  if (j.contains("task")) {
    std::string task;
    s.read("task", task);
    base.task = parse_task(task);
  }
  s.read("features_dir", base.features_dir);
  s.read("annotations_dir", base.annotations_dir);
  s.read("output_dir", base.output_dir);
  s.read("fold", base.fold);
  s.read("seed", base.seed);
  for (auto [key, list] : {std::pair{"train_videos", &base.train_videos}, std::pair{"val_videos", &base.val_videos}}) {
    if (!j.contains(key)) continue;
    const auto& arr = j.at(key);
    if (!arr.is_array()) throw ConfigError(std::string("config key '") + key + "' must be an array of strings");
    list->clear();
    for (const auto& v : arr) {
      if (!v.is_string()) throw ConfigError(std::string("config key '") + key + "' must be an array of strings");
      list->push_back(v.get<std::string>());
    }
  }
  if (const Json* seg = s.child("segmentation")) base.segmentation = segmentation_config_from_json(*seg, base.segmentation);
  if (const Json* m = s.child("model")) {
    base.model = model_config_from_json(*m, base.model);
    if (m->contains("task") && j.contains("task") && base.model.task != base.task) {
      throw ConfigError("config: model.task disagrees with task");
    }
    if (m->contains("task") && !j.contains("task")) base.task = base.model.task;
  }
  if (const Json* o = s.child("optim")) base.optim = optim_config_from_json(*o, base.optim);
  return base;
}

void RunConfig::finalize() {
  model.task = task;
  optim.seed = seed;
  if (fold < -1 || fold > 4) throw ConfigError("fold must lie in -1..4");
  segmentation.validate();
  model.validate();
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

DataSplit split_videos(std::vector<VideoRecord> videos, const RunConfig& cfg) {
  DataSplit out;
  if (cfg.train_videos.empty() && cfg.val_videos.empty()) {
    for (auto& v : videos) {
      const bool val = cfg.fold >= 0 && fold_of(v.video_id()) == static_cast<std::size_t>(cfg.fold);
      (val ? out.val : out.train).push_back(std::move(v));
    }
  } else {
    std::map<std::string, VideoRecord*> by_id;
    for (auto& v : videos) by_id.emplace(v.video_id(), &v);
    for (auto [ids, dest] : {std::pair{&cfg.train_videos, &out.train}, std::pair{&cfg.val_videos, &out.val}}) {
      for (const auto& id : *ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("video '" + id + "' listed in the config is not in the dataset");
        dest->push_back(*it->second);
      }
    }
  }
  if (out.train.empty()) throw DataError("no training videos after the train/validation split");
  return out;
}

const std::string& run_config_schema() {
  static const std::string schema = R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "affectseq run configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "$schema": {"type": "string"},
    "task": {"enum": ["va", "expr", "au"]},
    "features_dir": {"type": "string"},
    "annotations_dir": {"type": "string"},
    "output_dir": {"type": "string"},
    "fold": {"type": "integer", "minimum": -1, "maximum": 4},
    "train_videos": {"type": "array", "items": {"type": "string"}},
    "val_videos": {"type": "array", "items": {"type": "string"}},
    "seed": {"type": "integer", "minimum": 0},
    "segmentation": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "window": {"type": "integer", "minimum": 1},
        "stride": {"type": "integer", "minimum": 1}
      }
    },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "feature_dim": {"type": "integer", "minimum": 1},
        "task": {"enum": ["va", "expr", "au"]},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "tcn": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "enabled": {"type": "boolean"},
            "channels": {"type": "integer", "minimum": 1},
            "kernel_size": {"type": "integer", "minimum": 1},
            "dilations": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "num_blocks": {"type": "integer", "minimum": 1}
          }
        },
        "encoder": {
          "type": "object",
          "additionalProperties": false,
          "properties": {
            "enabled": {"type": "boolean"},
            "d_model": {"type": "integer", "minimum": 1},
            "num_layers": {"type": "integer", "minimum": 1},
            "num_heads": {"type": "integer", "minimum": 1},
            "ff_dim": {"type": "integer", "minimum": 1}
          }
        },
        "head": {
          "type": "object",
          "additionalProperties": false,
          "properties": {"hidden_dim": {"type": "integer", "minimum": 1}}
        }
      }
    },
    "optim": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "lr": {"type": "number", "minimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "warmup_epochs": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0}
      }
    }
  }
}
)";
  return schema;
}

}  // namespace affectseq
