#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "affectseq/config.hpp"
#include "affectseq/gradcheck.hpp"
#include "affectseq/io.hpp"
#include "affectseq/trainer.hpp"

namespace py = pybind11;
using namespace affectseq;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Matrix<T> to_matrix(const CArray<T>& a) {
  if (a.ndim() != 2) throw StructuralError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Matrix<T>(rows, cols, std::vector<T>(a.data(), a.data() + rows * cols));
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& values, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

VideoRecord make_video(std::string id, const CArray<float>& features, const std::string& task,
                       const CArray<double>& labels, const CArray<bool>& valid) {
  const auto kind = parse_task(task);
  auto x = to_matrix(features);
  if (valid.ndim() != 1 || static_cast<std::size_t>(valid.shape(0)) != x.rows)
    throw StructuralError("valid must have one entry per frame");
  if (static_cast<std::size_t>(labels.size()) != x.rows * label_width(kind))
    throw StructuralError("labels must have " + std::to_string(label_width(kind)) + " values per frame");
  std::vector<bool> mask(valid.data(), valid.data() + valid.shape(0));
  std::vector<double> values(labels.data(), labels.data() + labels.size());
  return VideoRecord(std::move(id), std::move(x), FrameLabels(kind, std::move(values), std::move(mask)));
}

py::dict report_dict(const EvalReport& r) { return py::module_::import("json").attr("loads")(r.to_json()); }

// A trained model together with the settings it was trained under.
struct PyCheckpoint {
  io::Checkpoint ckpt;

  py::array_t<double> predict(const CArray<float>& features) const {
    auto model = io::restore_model(ckpt);
    auto x = to_matrix(features);
    const auto n = x.rows;
    VideoRecord video("input", std::move(x), FrameLabels::empty(ckpt.model.task, n));
    Matrix<double> pred;
    {
      py::gil_scoped_release release;
      pred = predict_video(model, video, ckpt.segmentation);
    }
    return to_array(pred.data, {static_cast<py::ssize_t>(pred.rows), static_cast<py::ssize_t>(pred.cols)});
  }

  py::dict evaluate(const std::vector<VideoRecord>& videos) const {
    if (videos.empty()) throw DataError("no videos to evaluate");
    auto model = io::restore_model(ckpt);
    EvalReport report;
    {
      py::gil_scoped_release release;
      report = evaluate_videos(model, videos, ckpt.segmentation);
    }
    return report_dict(report);
  }
};

py::tuple train(const std::string& config_json, std::vector<VideoRecord> train_videos,
                std::vector<VideoRecord> val_videos) {
  if (train_videos.empty()) throw DataError("no training videos");
  const auto raw = Json::parse(config_json);
  auto cfg = run_config_from_json(raw);
  if (!(raw.contains("model") && raw["model"].contains("feature_dim"))) cfg.model.feature_dim = train_videos.front().feature_dim();
  cfg.finalize();
  cfg.optim.validate();
  PipelineModel<float> model(cfg.model, cfg.seed);
  TrainState state;
  {
    py::gil_scoped_release release;
    Trainer trainer(model, std::move(train_videos), std::move(val_videos), cfg.optim, cfg.segmentation);
    trainer.run();
    state = trainer.state();
  }
  py::list history;
  for (const auto& r : state.history) history.append(py::module_::import("json").attr("loads")(r.to_json()));
  auto last = io::make_checkpoint(model, cfg.segmentation, cfg.optim, state);
  return py::make_tuple(PyCheckpoint{io::best_checkpoint(last)}, history);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continuous affect recognition: TCN + Transformer encoder over per-frame features.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<StructuralError>(m, "StructuralError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<CheckpointMismatchError>(m, "CheckpointMismatchError", config_error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<VideoRecord>(m, "Video")
      .def(py::init(&make_video), py::arg("video_id"), py::arg("features"), py::arg("task"), py::arg("labels"),
           py::arg("valid"))
      .def_property_readonly("video_id", &VideoRecord::video_id)
      .def_property_readonly("task", [](const VideoRecord& v) { return std::string(task_name(v.task())); })
      .def_property_readonly("n_frames", &VideoRecord::n_frames)
      .def_property_readonly("features",
                             [](const VideoRecord& v) {
                               const auto& f = v.features();
                               return to_array(f.data, {static_cast<py::ssize_t>(f.rows), static_cast<py::ssize_t>(f.cols)});
                             })
      .def_property_readonly("labels",
                             [](const VideoRecord& v) {
                               const auto& l = v.labels();
                               return to_array(l.values(), {static_cast<py::ssize_t>(l.size()), static_cast<py::ssize_t>(l.width())});
                             })
      .def_property_readonly("valid", [](const VideoRecord& v) {
        const auto& mask = v.labels().valid_mask();
        py::array_t<bool> out(static_cast<py::ssize_t>(mask.size()));
        for (std::size_t i = 0; i < mask.size(); ++i) out.mutable_at(i) = mask[i];
        return out;
      });

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def_static("load", [](const std::string& path) { return PyCheckpoint{io::load_checkpoint(path)}; })
      .def("save", [](const PyCheckpoint& c, const std::string& path) { io::save_checkpoint(path, c.ckpt); })
      .def_property_readonly("task", [](const PyCheckpoint& c) { return std::string(task_name(c.ckpt.model.task)); })
      .def_property_readonly("config",
                             [](const PyCheckpoint& c) {
                               Json j;
                               j["model"] = to_json(c.ckpt.model);
                               j["segmentation"] = to_json(c.ckpt.segmentation);
                               j["optim"] = to_json(c.ckpt.optim);
                               return j.dump();
                             })
      .def_property_readonly("parameter_count",
                             [](const PyCheckpoint& c) { return c.ckpt.model.parameter_count(); })
      .def("predict", &PyCheckpoint::predict, py::arg("features"),
           "Per-frame predictions (n x output_dim) for an (n x feature_dim) float array.")
      .def("evaluate", &PyCheckpoint::evaluate, py::arg("videos"));

  m.def("train", &train, py::arg("config_json"), py::arg("train_videos"), py::arg("val_videos"),
        "Trains from a JSON run configuration; returns (best checkpoint, per-epoch history).");

  m.def("synthetic",
        [](const std::string& task, std::size_t videos, std::size_t frames, std::size_t dim, std::uint64_t seed) {
          return io::generate_synthetic({parse_task(task), videos, frames, dim, seed});
        },
        py::arg("task"), py::arg("videos") = 20, py::arg("frames") = 600, py::arg("dim") = 32, py::arg("seed") = 0);
  m.def("load_dataset",
        [](const std::string& features, const std::string& annotations, const std::string& task) {
          return io::load_dataset(features, annotations, parse_task(task));
        },
        py::arg("features_dir"), py::arg("annotations_dir"), py::arg("task"));
  m.def("write_dataset", [](const std::string& root, const std::vector<VideoRecord>& videos) { io::write_dataset(root, videos); },
        py::arg("root"), py::arg("videos"));

  m.def("ccc",
        [](const CArray<double>& x, const CArray<double>& y, std::optional<CArray<bool>> mask) {
          if (x.size() != y.size()) throw StructuralError("x and y differ in length");
          std::span<const double> xs(x.data(), x.size()), ys(y.data(), y.size());
          if (!mask) return ccc(xs, ys);
          if (mask->size() != x.size()) throw StructuralError("mask differs in length");
          return ccc(xs, ys, std::vector<bool>(mask->data(), mask->data() + mask->size()));
        },
        py::arg("x"), py::arg("y"), py::arg("mask") = py::none());
  m.def("fold_of", [](const std::string& id) { return fold_of(id); }, py::arg("video_id"));
  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("base_lr"));

  m.def("gradcheck",
        [](double tolerance, double step, std::uint64_t seed) {
          std::vector<std::tuple<std::string, std::size_t, double>> out;
          for (const auto& r : run_gradcheck({step, tolerance, seed})) out.emplace_back(r.name, r.entries, r.max_rel_error);
          return out;
        },
        py::arg("tolerance") = 1e-4, py::arg("step") = 1e-5, py::arg("seed") = 0,
        "(name, entries, max relative error) for every primitive, loss and the composed pipeline.");
  m.def("config_schema", &run_config_schema);
}
