// affect: synthesize, train, evaluate, predict and gradient-check from the command line.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "affectseq/config.hpp"
#include "affectseq/gradcheck.hpp"
#include "affectseq/io.hpp"
#include "affectseq/trainer.hpp"

using namespace affectseq;
namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumerical = 4, kMismatch = 5 };

// Flags shared by train/eval/predict. Each one, when given, overrides the config file.
struct Overrides {
  std::string config;
  std::string task;
  std::string features;
  std::string annotations;
  std::string out;
  std::optional<std::size_t> window, stride, epochs, batch_size, warmup_epochs;
  std::optional<double> lr, weight_decay, dropout;
  std::optional<std::uint64_t> seed;
  std::optional<int> fold;
  bool no_tcn = false;
  bool no_encoder = false;
};

void add_data_flags(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--task", o.task, "va | expr | au");
  app->add_option("--features", o.features, "directory of <id>.afsq feature files");
  app->add_option("--annotations", o.annotations, "directory of <id>.txt annotation files");
}

void add_training_flags(CLI::App* app, Overrides& o) {
  app->add_option("-o,--out", o.out, "output directory");
  app->add_option("--window", o.window, "segment length w");
  app->add_option("--stride", o.stride, "segment stride s");
  app->add_option("--epochs", o.epochs);
  app->add_option("--batch-size", o.batch_size);
  app->add_option("--warmup-epochs", o.warmup_epochs);
  app->add_option("--lr", o.lr, "base learning rate");
  app->add_option("--weight-decay", o.weight_decay);
  app->add_option("--dropout", o.dropout);
  app->add_option("--seed", o.seed);
  app->add_option("--fold", o.fold, "validation fold 0..4, -1 for none");
  app->add_flag("--no-tcn", o.no_tcn, "ablation: drop the TCN");
  app->add_flag("--no-encoder", o.no_encoder, "ablation: drop the Transformer encoder");
}

struct Resolved {
  RunConfig cfg;
  bool feature_dim_given = false;
};

Resolved resolve(const Overrides& o) {
  Resolved r;
  if (!o.config.empty()) {
    r.cfg = load_run_config(o.config);
    std::ifstream in(o.config);
    const auto raw = Json::parse(in);
    r.feature_dim_given = raw.contains("model") && raw["model"].contains("feature_dim");
  }
  auto& c = r.cfg;
  if (!o.task.empty()) c.task = parse_task(o.task);
  if (!o.features.empty()) c.features_dir = o.features;
  if (!o.annotations.empty()) c.annotations_dir = o.annotations;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.window) c.segmentation.window = *o.window;
  if (o.stride) c.segmentation.stride = *o.stride;
  if (o.epochs) c.optim.epochs = *o.epochs;
  if (o.batch_size) c.optim.batch_size = *o.batch_size;
  if (o.warmup_epochs) c.optim.warmup_epochs = *o.warmup_epochs;
  if (o.lr) c.optim.lr = *o.lr;
  if (o.weight_decay) c.optim.weight_decay = *o.weight_decay;
  if (o.dropout) c.model.dropout = *o.dropout;
  if (o.seed) c.seed = *o.seed;
  if (o.fold) c.fold = *o.fold;
  if (o.no_tcn) c.model.tcn.enabled = false;
  if (o.no_encoder) c.model.encoder.enabled = false;
  return r;
}

void require_path(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string(what) + " is not set (use the config file or the flag)");
}

std::vector<VideoRecord> load_labelled(const RunConfig& c) {
  require_path(c.features_dir, "features_dir");
  require_path(c.annotations_dir, "annotations_dir");
  return io::load_dataset(c.features_dir, c.annotations_dir, c.task);
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::string text;
  for (const auto& r : history) text += r.to_json() + "\n";
  io::write_file(path, text);
}

void check_task(const io::Checkpoint& ckpt, TaskKind requested) {
  if (ckpt.model.task != requested) {
    throw CheckpointMismatchError("task mismatch: checkpoint was trained for '" + std::string(task_name(ckpt.model.task)) +
                                  "' but '" + std::string(task_name(requested)) + "' was requested");
  }
}

void check_feature_dim(const io::Checkpoint& ckpt, std::size_t dim) {
  if (ckpt.model.feature_dim != dim) {
    throw CheckpointMismatchError("checkpoint expects feature_dim " + std::to_string(ckpt.model.feature_dim) +
                                  ", data has " + std::to_string(dim));
  }
}

// ---- commands -----------------------------------------------------------------

struct SynthArgs {
  std::string task = "va";
  std::size_t videos = 20, frames = 600, dim = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  io::SyntheticSpec spec{parse_task(a.task), a.videos, a.frames, a.dim, a.seed};
  const auto videos = io::generate_synthetic(spec);
  io::write_dataset(a.out, videos);
  std::printf("wrote %zu videos (%zu frames x %zu dims, task %s) to %s\n", videos.size(), a.frames, a.dim,
              a.task.c_str(), a.out.c_str());
  return kOk;
}

int cmd_train(const Overrides& o, const std::string& resume, std::size_t stop_after) {
  auto [cfg, dim_given] = resolve(o);
  require_path(cfg.output_dir, "output_dir");
  cfg.finalize();
  auto videos = load_labelled(cfg);
  const std::size_t dim = videos.front().feature_dim();
  if (dim_given && cfg.model.feature_dim != dim) {
    throw ConfigError("model.feature_dim is " + std::to_string(cfg.model.feature_dim) + " but the data has " +
                      std::to_string(dim));
  }
  cfg.model.feature_dim = dim;
  cfg.finalize();
  cfg.optim.validate();
  auto split = split_videos(std::move(videos), cfg);

  std::unique_ptr<PipelineModel<float>> model;
  std::optional<io::Checkpoint> start;
  if (!resume.empty()) {
    start = io::load_checkpoint(resume);
    check_task(*start, cfg.task);
    check_feature_dim(*start, dim);
    model = std::make_unique<PipelineModel<float>>(io::restore_model(*start));
    cfg.model = start->model;
    cfg.optim = start->optim;
    cfg.segmentation = start->segmentation;
  } else {
    model = std::make_unique<PipelineModel<float>>(cfg.model, cfg.seed);
  }

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  io::write_file(out / "config.json", to_json(cfg).dump(2) + "\n");

  Trainer trainer(*model, std::move(split.train), std::move(split.val), cfg.optim, cfg.segmentation);
  if (start) trainer.restore(start->state);
  std::printf("task %s | %zu parameters | %zu steps/epoch | epochs %zu\n", std::string(task_name(cfg.task)).c_str(),
              model->parameter_count(), trainer.steps_per_epoch(), cfg.optim.epochs);

  auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const EpochRecord& r, PipelineModel<float>& m) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %3zu  lr %.3e  train_loss %.6f  val %.6f  %.1fs\n", r.epoch, r.lr, r.train_loss, r.val_metric,
                secs);
    std::fflush(stdout);
    io::save_checkpoint(out / "last.ckpt", io::make_checkpoint(m, cfg.segmentation, cfg.optim, trainer.state()));
    write_history(out / "history.jsonl", trainer.state().history);
    return true;
  }, stop_after);
  const auto last = io::make_checkpoint(*model, cfg.segmentation, cfg.optim, trainer.state());
  io::save_checkpoint(out / "best.ckpt", io::best_checkpoint(last));
  if (trainer.state().best_epoch > 0) {
    std::printf("best val %.6f at epoch %zu\n", trainer.state().best_metric, trainer.state().best_epoch);
  }
  return kOk;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::string& report_path) {
  auto [cfg, dim_given] = resolve(o);
  const auto ckpt = io::load_checkpoint(checkpoint);
  if (o.task.empty() && o.config.empty()) cfg.task = ckpt.model.task;
  check_task(ckpt, cfg.task);
  auto videos = load_labelled(cfg);
  if (o.fold && *o.fold >= 0) {
    std::erase_if(videos, [&](const VideoRecord& v) { return fold_of(v.video_id()) != static_cast<std::size_t>(*o.fold); });
    if (videos.empty()) throw DataError("no videos in fold " + std::to_string(*o.fold));
  }
  check_feature_dim(ckpt, videos.front().feature_dim());
  auto model = io::restore_model(ckpt);
  const auto report = evaluate_videos(model, videos, ckpt.segmentation);
  std::cout << report.to_table() << report.to_json() << "\n";
  if (!report_path.empty()) io::write_file(report_path, report.to_json() + "\n");
  return kOk;
}

int cmd_predict(const Overrides& o, const std::string& checkpoint) {
  auto [cfg, dim_given] = resolve(o);
  require_path(cfg.features_dir, "features_dir");
  require_path(cfg.output_dir, "output_dir");
  const auto ckpt = io::load_checkpoint(checkpoint);
  if (!o.task.empty() || !o.config.empty()) check_task(ckpt, cfg.task);
  auto model = io::restore_model(ckpt);
  const TaskKind task = ckpt.model.task;
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  std::size_t frames = 0;
  const auto all = io::load_features(cfg.features_dir);
  for (const auto& [id, features] : all) {
    check_feature_dim(ckpt, features.cols);
    const std::size_t n = features.rows;
    VideoRecord video(id, features, FrameLabels::empty(task, n));
    const auto pred = predict_video(model, video, ckpt.segmentation);
    io::write_file(out / (id + std::string(io::kAnnotationExtension)), io::format_predictions(pred, task));
    frames += n;
  }
  std::printf("wrote predictions for %zu videos (%zu frames) to %s\n", all.size(), frames, out.string().c_str());
  return kOk;
}

int cmd_gradcheck(double tolerance, double step, std::uint64_t seed) {
  const auto results = run_gradcheck({step, tolerance, seed});
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : results) {
    const bool pass = r.passed(tolerance);
    ok = ok && pass;
    worst = std::max(worst, r.max_rel_error);
    std::printf("%-28s %10zu  %.3e  %s\n", r.name.c_str(), r.entries, r.max_rel_error, pass ? "PASS" : "FAIL");
  }
  std::printf("%zu checks, max relative error %.3e, tolerance %.1e: %s\n", results.size(), worst, tolerance,
              ok ? "PASS" : "FAIL");
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"affect: continuous affect recognition over per-frame visual features"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a seeded synthetic dataset");
  s->add_option("--task", synth.task, "va | expr | au")->capture_default_str();
  s->add_option("--videos", synth.videos)->capture_default_str();
  s->add_option("--frames", synth.frames)->capture_default_str();
  s->add_option("--dim", synth.dim, "feature dimension")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("-o,--out", synth.out, "dataset root (features/ and annotations/ are created)")->required();

  Overrides train_o;
  std::string resume;
  auto* t = app.add_subcommand("train", "train a model; writes last.ckpt, best.ckpt, history.jsonl");
  add_data_flags(t, train_o);
  add_training_flags(t, train_o);
  std::size_t stop_after = 0;
  t->add_option("--resume", resume, "continue from a last.ckpt")->check(CLI::ExistingFile);
  t->add_option("--stop-after", stop_after, "run at most this many epochs in this invocation");

  Overrides eval_o;
  std::string eval_ckpt, report_path;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a labelled dataset");
  add_data_flags(e, eval_o);
  e->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  e->add_option("--fold", eval_o.fold, "evaluate only this fold");
  e->add_option("--report", report_path, "also write the JSON record here");

  Overrides pred_o;
  std::string pred_ckpt;
  auto* p = app.add_subcommand("predict", "write one prediction line per frame for every feature file");
  p->add_option("-c,--config", pred_o.config)->check(CLI::ExistingFile);
  p->add_option("--task", pred_o.task);
  p->add_option("--features", pred_o.features);
  p->add_option("-o,--out", pred_o.out);
  p->add_option("--checkpoint", pred_ckpt)->required()->check(CLI::ExistingFile);

  double tolerance = 1e-4, step = 1e-5;
  std::uint64_t gc_seed = 0;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the pipeline");
  g->add_option("--tolerance", tolerance)->capture_default_str();
  g->add_option("--step", step)->capture_default_str();
  g->add_option("--seed", gc_seed)->capture_default_str();

  auto* sc = app.add_subcommand("schema", "print the JSON schema of the run configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kConfig;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train_o, resume, stop_after);
    if (*e) return cmd_eval(eval_o, eval_ckpt, report_path);
    if (*p) return cmd_predict(pred_o, pred_ckpt);
    if (*g) return cmd_gradcheck(tolerance, step, gc_seed);
    if (*sc) {
      std::cout << run_config_schema() << "\n";
      return kOk;
    }
  } catch (const CheckpointMismatchError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kMismatch;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const StructuralError& err) {
    std::cerr << "structural error: " << err.what() << "\n";
    return kData;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
