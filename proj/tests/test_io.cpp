#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "affectseq/io.hpp"

using namespace affectseq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("affectseq_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string u32le(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  return s;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.feature_dim = 3;
  c.tcn.channels = 4;
  c.tcn.dilations = {1};
  c.tcn.num_blocks = 1;
  c.encoder.d_model = 4;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 1;
  c.encoder.ff_dim = 4;
  c.head.hidden_dim = 4;
  c.task = TaskKind::AU;
  return c;
}

}  // namespace

TEST_CASE("feature encoding layout") {
  Matrix<float> f(2, 3, std::vector<float>{1, 2, 3, 4, 5, -0.5f});
  const auto bytes = io::encode_features(f);
  REQUIRE(bytes.size() == 5 + 4 + 4 + 6 * 4);
  CHECK(bytes.substr(0, 5) == "AFSQ1");
  CHECK(bytes.substr(5, 4) == u32le(3));
  CHECK(bytes.substr(9, 4) == u32le(2));
  float last = 0.0f;
  std::memcpy(&last, bytes.data() + 13 + 5 * 4, 4);
  CHECK(last == -0.5f);
  CHECK(io::decode_features(bytes) == f);
}

TEST_CASE("feature decoding rejects bad input") {
  Matrix<float> f(10, 2, 0.25f);
  auto bytes = io::encode_features(f);
  CHECK_THROWS_AS(io::decode_features(bytes.substr(0, bytes.size() - 8)), DataError);  // 9 rows of payload
  CHECK_THROWS_AS(io::decode_features(bytes + "xxxx"), DataError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(io::decode_features(bad), DataError);
  CHECK_THROWS_AS(io::decode_features("AFS"), DataError);
}

TEST_CASE("annotation sentinels") {
  auto expr = io::parse_annotations("2\n-1\n7\n", TaskKind::EXPR);
  CHECK(expr.valid_mask() == std::vector<bool>{true, false, true});
  CHECK(expr.expr_class(2) == 7);

  auto va = io::parse_annotations("valence,arousal\n-5.0,0.3\n0.25,-0.5\n", TaskKind::VA);
  CHECK(va.size() == 2);
  CHECK_FALSE(va.valid(0));
  CHECK(va.frame(1)[1] == -0.5);

  auto au = io::parse_annotations("AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26\n"
                                  "1,0,0,0,0,0,0,0,0,0,0,1\n"
                                  "1,0,-1,0,0,0,0,0,0,0,0,1\n",
                                  TaskKind::AU);
  CHECK(au.valid_mask() == std::vector<bool>{true, false});
}

TEST_CASE("annotation errors name file and line") {
  auto message = [](std::string_view text, TaskKind task) {
    try {
      io::parse_annotations(text, task, "clip.txt");
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("1\n8\n", TaskKind::EXPR).find("clip.txt:2") != std::string::npos);
  CHECK(message("0.1,0.2\n0.3\n", TaskKind::VA).find("clip.txt:2") != std::string::npos);
  CHECK(message("0.1,abc\n", TaskKind::VA).find("clip.txt:1") != std::string::npos);
  CHECK(message("1.5,0\n", TaskKind::VA).find("clip.txt:1") != std::string::npos);
  CHECK(message("2.5\n", TaskKind::EXPR).find("clip.txt:1") != std::string::npos);
  CHECK(message("h\n0,0,0,0,0,0,0,0,0,0,0,2\n", TaskKind::AU).find("clip.txt:2") != std::string::npos);
}

TEST_CASE("annotation round trip") {
  for (auto task : {TaskKind::VA, TaskKind::EXPR, TaskKind::AU}) {
    for (const auto& v : io::generate_synthetic({task, 2, 80, 6, 3})) {
      auto text = io::format_annotations(v.labels());
      CHECK(io::parse_annotations(text, task) == v.labels());
    }
  }
}

TEST_CASE("prediction format mirrors the annotations") {
  Matrix<double> va(2, 2, std::vector<double>{0.5, -0.25, 0.0, 1.0});
  CHECK(io::parse_annotations(io::format_predictions(va, TaskKind::VA), TaskKind::VA).values() == va.data);
  Matrix<double> ex(2, 8, 0.0);
  ex(0, 3) = 2.0;
  ex(1, 6) = 0.1;
  CHECK(io::format_predictions(ex, TaskKind::EXPR) == "3\n6\n");
  Matrix<double> au(1, 12, -1.0);
  au(0, 0) = 0.0;
  au(0, 11) = 4.0;
  CHECK(io::format_predictions(au, TaskKind::AU) == "1,0,0,0,0,0,0,0,0,0,0,1\n");
  CHECK_THROWS_AS(io::format_predictions(au, TaskKind::VA), StructuralError);
}

TEST_CASE("synthetic data is deterministic per seed") {
  for (auto task : {TaskKind::VA, TaskKind::EXPR, TaskKind::AU}) {
    TempDir a("synth_a"), b("synth_b");
    io::write_dataset(a.path, io::generate_synthetic({task, 3, 120, 8, 7}));
    io::write_dataset(b.path, io::generate_synthetic({task, 3, 120, 8, 7}));
    for (const auto* sub : {"features", "annotations"}) {
      for (const auto& e : fs::directory_iterator(a.path / sub)) {
        CHECK(io::read_file(e.path()) == io::read_file(b.path / sub / e.path().filename()));
      }
    }
    auto c = io::generate_synthetic({task, 3, 120, 8, 8});
    CHECK(c[0].features() != io::generate_synthetic({task, 3, 120, 8, 7})[0].features());
  }
}

TEST_CASE("synthetic labels are the generator map of the features") {
  for (auto task : {TaskKind::VA, TaskKind::EXPR, TaskKind::AU}) {
    for (const auto& v : io::generate_synthetic({task, 4, 200, 16, 5})) {
      const auto recomputed = io::synthetic_labels(task, v.features());
      std::size_t invalid = 0;
      for (std::size_t t = 0; t < v.n_frames(); ++t) {
        if (!v.labels().valid(t)) {
          ++invalid;
          continue;
        }
        auto a = v.labels().frame(t), b = recomputed.frame(t);
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
      }
      CHECK(invalid == 200 / 50);
    }
  }
}

TEST_CASE("generator used as a predictor scores at least 0.99") {
  for (auto task : {TaskKind::VA, TaskKind::EXPR, TaskKind::AU}) {
    Matrix<double> all(0, output_dim(task));
    std::vector<FrameLabels> labels;
    for (const auto& v : io::generate_synthetic({task, 20, 600, 32, 7})) {
      auto p = io::synthetic_oracle_predictions(task, v.features());
      all.data.insert(all.data.end(), p.data.begin(), p.data.end());
      all.rows += p.rows;
      labels.push_back(v.labels());
    }
    auto report = evaluate(all, concat_labels(labels));
    INFO(task_name(task));
    CHECK(report.primary_metric() >= 0.99);
    if (task != TaskKind::VA) {
      for (double f1 : report.per_class_f1) CHECK(f1 == 1.0);
    }
  }
}

TEST_CASE("dataset directories load sorted and checked") {
  TempDir d("dataset");
  auto videos = io::generate_synthetic({TaskKind::EXPR, 3, 40, 5, 9});
  io::write_dataset(d.path, videos);
  auto loaded = io::load_dataset(d.path / "features", d.path / "annotations", TaskKind::EXPR);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].video_id() == videos[i].video_id());
    CHECK(loaded[i].features() == videos[i].features());
    CHECK(loaded[i].labels() == videos[i].labels());
  }
  io::write_file(d.path / "annotations" / "synth_001.txt", "1\n2\n");
  CHECK_THROWS_AS(io::load_dataset(d.path / "features", d.path / "annotations", TaskKind::EXPR), DataError);
  fs::remove(d.path / "annotations" / "synth_001.txt");
  CHECK_THROWS_AS(io::load_dataset(d.path / "features", d.path / "annotations", TaskKind::EXPR), DataError);
  CHECK_THROWS_AS(io::load_dataset(d.path / "nope", d.path / "annotations", TaskKind::EXPR), DataError);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  PipelineModel<float> m(tiny_model(), 4);
  TrainState st;
  st.epochs_done = 2;
  st.optim.step = 7;
  for (const auto& p : m.parameters()) {
    st.optim.m.emplace_back(p.value.size(), 0.125f);
    st.optim.v.emplace_back(p.value.size(), 0.5f);
    st.best_params.push_back(p.value);
  }
  st.shuffle_rng = rng_state(std::mt19937_64(1));
  st.dropout_rng = rng_state(std::mt19937_64(2));
  st.history.push_back({1, 1e-3, 0.7, 0.4});
  st.history.push_back({2, 5e-4, 0.6, std::numeric_limits<double>::quiet_NaN()});
  st.best_metric = 0.4;
  st.best_epoch = 1;
  OptimConfig optim;
  optim.epochs = 5;
  auto ckpt = io::make_checkpoint(m, {30, 20}, optim, st);

  TempDir d("ckpt");
  io::save_checkpoint(d.path / "a.ckpt", ckpt);
  auto loaded = io::load_checkpoint(d.path / "a.ckpt");
  io::save_checkpoint(d.path / "b.ckpt", loaded);
  CHECK(io::read_file(d.path / "a.ckpt") == io::read_file(d.path / "b.ckpt"));

  CHECK(loaded.model == m.config());
  CHECK(loaded.optim == optim);
  CHECK(loaded.segmentation.window == 30);
  CHECK(loaded.state.optim == st.optim);
  CHECK(loaded.state.shuffle_rng == st.shuffle_rng);
  CHECK(std::isnan(loaded.state.history[1].val_metric));
  auto restored = io::restore_model(loaded);
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    CHECK(restored.parameters()[i].value == m.parameters()[i].value);
}

TEST_CASE("checkpoint rejections") {
  PipelineModel<float> m(tiny_model(), 5);
  OptimConfig optim;
  optim.epochs = 1;
  const auto bytes = io::serialize_checkpoint(io::make_checkpoint(m, {30, 20}, optim));
  auto bad_magic = bytes;
  bad_magic[1] = 'Z';
  CHECK_THROWS_AS(io::deserialize_checkpoint(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(io::deserialize_checkpoint(bad_version), DataError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(io::deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), DataError);
  }
  CHECK_THROWS_AS(io::deserialize_checkpoint(bytes + "!"), DataError);

  auto ckpt = io::deserialize_checkpoint(bytes);
  ckpt.parameters[0].shape[0] += 1;
  CHECK_THROWS_AS(io::restore_model(ckpt), ConfigError);
}

TEST_CASE("best checkpoint swaps in the best parameters") {
  PipelineModel<float> m(tiny_model(), 6);
  TrainState st;
  for (const auto& p : m.parameters()) st.best_params.emplace_back(p.value.size(), 0.5f);
  OptimConfig optim;
  optim.epochs = 1;
  auto best = io::best_checkpoint(io::make_checkpoint(m, {30, 20}, optim, st));
  for (const auto& t : best.parameters)
    for (float v : t.values) CHECK(v == 0.5f);
  auto none = io::best_checkpoint(io::make_checkpoint(m, {30, 20}, optim));
  CHECK(none.parameters[0].values == m.parameters()[0].value);
}
