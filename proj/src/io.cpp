#include "affectseq/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "affectseq/config.hpp"

namespace affectseq::io {

namespace {

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  void floats(const std::vector<float>& v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  std::string_view bytes(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw DataError(origin_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ")");
    }
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return std::string(bytes(checked_count(u64(), 1))); }
  std::vector<float> floats() {
    const std::size_t n = checked_count(u64(), 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::size_t checked_count(std::uint64_t n, std::size_t elem) const {
    if (n > (data_.size() - pos_) / elem) throw DataError(origin_ + ": truncated (declared count " + std::to_string(n) + ")");
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_number(std::string_view field, double& out) {
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

// ---- features ----------------------------------------------------------------

std::string encode_features(const Matrix<float>& features) {
  ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(static_cast<std::uint32_t>(features.cols));
  w.u32(static_cast<std::uint32_t>(features.rows));
  for (float v : features.data) w.f32(v);
  return w.take();
}

Matrix<float> decode_features(std::string_view bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (bytes.size() < kFeatureMagic.size() || r.bytes(kFeatureMagic.size()) != kFeatureMagic) {
    throw DataError(origin + ": bad magic (expected AFSQ1)");
  }
  const std::uint32_t dim = r.u32();
  const std::uint32_t frames = r.u32();
  const std::uint64_t expected = static_cast<std::uint64_t>(dim) * frames * 4;
  if (r.remaining() != expected) {
    throw DataError(origin + ": header declares " + std::to_string(frames) + " frames x " + std::to_string(dim) +
                    " dims (" + std::to_string(expected) + " payload bytes) but " + std::to_string(r.remaining()) +
                    " bytes follow");
  }
  Matrix<float> m(frames, dim);
  for (auto& v : m.data) v = r.f32();
  return m;
}

void write_features(const fs::path& path, const Matrix<float>& features) { write_file(path, encode_features(features)); }

Matrix<float> read_features(const fs::path& path) { return decode_features(read_file(path), path.string()); }

// ---- annotations -------------------------------------------------------------

FrameLabels parse_annotations(std::string_view text, TaskKind task, const std::string& origin) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

  const std::size_t width = label_width(task);
  std::size_t first = 0;
  if (!lines.empty()) {
    double probe = 0.0;
    if (!parse_number(split_fields(trim(lines.front())).front(), probe)) first = 1;  // header
  }

  std::vector<double> values;
  std::vector<bool> valid;
  values.reserve((lines.size() - first) * width);
  for (std::size_t ln = first; ln < lines.size(); ++ln) {
    const std::string where = origin + ":" + std::to_string(ln + 1);
    const auto fields = split_fields(trim(lines[ln]));
    if (fields.size() != width) {
      throw DataError(where + ": expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    }
    std::vector<double> row(width);
    for (std::size_t k = 0; k < width; ++k) {
      if (!parse_number(fields[k], row[k])) throw DataError(where + ": malformed number '" + std::string(fields[k]) + "'");
    }
    bool ok = true;
    switch (task) {
      case TaskKind::VA:
        ok = row[0] != -5.0 && row[1] != -5.0;
        for (double v : row) {
          if (ok && (v < -1.0 || v > 1.0)) throw DataError(where + ": VA value " + format_double(v) + " outside [-1, 1]");
        }
        break;
      case TaskKind::EXPR:
        if (row[0] == -1.0) {
          ok = false;
        } else if (row[0] < 0.0 || row[0] > 7.0 || row[0] != std::floor(row[0])) {
          throw DataError(where + ": expression class " + format_double(row[0]) + " out of range 0..7");
        }
        break;
      case TaskKind::AU:
        for (double v : row) {
          if (v == -1.0) {
            ok = false;
          } else if (v != 0.0 && v != 1.0) {
            throw DataError(where + ": AU value " + format_double(v) + " not in {0, 1, -1}");
          }
        }
        break;
    }
    if (!ok) std::fill(row.begin(), row.end(), 0.0);
    values.insert(values.end(), row.begin(), row.end());
    valid.push_back(ok);
  }
  return FrameLabels(task, std::move(values), std::move(valid));
}

std::string format_annotations(const FrameLabels& labels) {
  std::string out;
  const std::size_t w = labels.width();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = labels.frame(i);
    for (std::size_t k = 0; k < w; ++k) {
      if (k) out += ',';
      if (!labels.valid(i)) {
        out += labels.task() == TaskKind::VA ? "-5" : "-1";
      } else if (labels.task() == TaskKind::VA) {
        out += format_double(row[k]);
      } else {
        out += std::to_string(static_cast<int>(row[k]));
      }
    }
    out += '\n';
  }
  return out;
}

FrameLabels read_annotations(const fs::path& path, TaskKind task) {
  return parse_annotations(read_file(path), task, path.string());
}

void write_annotations(const fs::path& path, const FrameLabels& labels) { write_file(path, format_annotations(labels)); }

std::string format_predictions(const Matrix<double>& predictions, TaskKind task) {
  if (predictions.cols != output_dim(task)) throw StructuralError("format_predictions: width does not match task");
  std::string out;
  for (std::size_t i = 0; i < predictions.rows; ++i) {
    auto row = predictions.row(i);
    switch (task) {
      case TaskKind::VA:
        out += format_double(row[0]) + "," + format_double(row[1]);
        break;
      case TaskKind::EXPR:
        out += std::to_string(std::max_element(row.begin(), row.end()) - row.begin());
        break;
      case TaskKind::AU:
        for (std::size_t k = 0; k < row.size(); ++k) {
          if (k) out += ',';
          out += row[k] >= 0.0 ? '1' : '0';
        }
        break;
    }
    out += '\n';
  }
  return out;
}

VideoRecord load_video(const fs::path& feature_path, const fs::path& annotation_path, TaskKind task) {
  auto features = read_features(feature_path);
  auto labels = read_annotations(annotation_path, task);
  if (labels.size() != features.rows) {
    throw DataError(annotation_path.string() + ": " + std::to_string(labels.size()) + " annotated frames but " +
                    feature_path.string() + " holds " + std::to_string(features.rows));
  }
  return VideoRecord(feature_path.stem().string(), std::move(features), std::move(labels));
}

namespace {

std::vector<fs::path> feature_files(const fs::path& features_dir) {
  if (!fs::is_directory(features_dir)) throw DataError("features directory '" + features_dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(features_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == kFeatureExtension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no feature files in '" + features_dir.string() + "'");
  return files;
}

}  // namespace

std::vector<std::pair<std::string, Matrix<float>>> load_features(const fs::path& features_dir) {
  std::vector<std::pair<std::string, Matrix<float>>> out;
  for (const auto& f : feature_files(features_dir)) out.emplace_back(f.stem().string(), read_features(f));
  return out;
}

std::vector<VideoRecord> load_dataset(const fs::path& features_dir, const fs::path& annotations_dir, TaskKind task) {
  const auto files = feature_files(features_dir);
  if (!fs::is_directory(annotations_dir)) {
    throw DataError("annotations directory '" + annotations_dir.string() + "' not found");
  }
  std::vector<VideoRecord> videos;
  for (const auto& f : files) {
    const auto ann = annotations_dir / (f.stem().string() + std::string(kAnnotationExtension));
    if (!fs::exists(ann)) throw DataError("missing annotation file '" + ann.string() + "'");
    videos.push_back(load_video(f, ann, task));
  }
  check_dataset_consistency(videos);
  return videos;
}

void write_dataset(const fs::path& root, const std::vector<VideoRecord>& videos) {
  for (const auto& v : videos) {
    write_features(root / "features" / (v.video_id() + std::string(kFeatureExtension)), v.features());
    write_annotations(root / "annotations" / (v.video_id() + std::string(kAnnotationExtension)), v.labels());
  }
}

// ---- synthetic ---------------------------------------------------------------

namespace {

constexpr std::size_t kLatent = 8;
constexpr std::size_t kSmoothRadius = 24;
constexpr double kLatentCorrelation = 0.9;
constexpr double kFeatureNoise = 0.5;
constexpr double kVaGain = 1.5;

struct GeneratorMaps {
  std::vector<double> mixing;   // D x L, latent -> features
  std::vector<double> readout;  // L x D
  std::vector<double> valence;  // L
  std::vector<double> arousal;  // L
  std::vector<double> expr;     // 8 x L
  std::vector<double> au;       // 12 x L
};

std::vector<double> unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> m(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      m[r * cols + c] = n(rng);
      norm += m[r * cols + c] * m[r * cols + c];
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] /= norm;
  }
  return m;
}

GeneratorMaps generator_maps(std::size_t dim) {
  std::mt19937_64 rng(0xAFF3C7ULL * 1000003ULL + dim);
  std::normal_distribution<double> n(0.0, 1.0);
  GeneratorMaps g;
  g.mixing.resize(dim * kLatent);
  for (auto& v : g.mixing) v = n(rng);
  g.readout.resize(kLatent * dim);
  const double rs = 1.0 / std::sqrt(static_cast<double>(kLatent * dim));
  for (auto& v : g.readout) v = n(rng) * rs;
  g.valence = unit_rows(rng, 1, kLatent);
  g.arousal = unit_rows(rng, 1, kLatent);
  g.expr = unit_rows(rng, output_dim(TaskKind::EXPR), kLatent);
  g.au = unit_rows(rng, output_dim(TaskKind::AU), kLatent);
  return g;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Smoothed readout s_t, n x L.
std::vector<double> smoothed_readout(const GeneratorMaps& g, const Matrix<float>& f) {
  const std::size_t n = f.rows, d = f.cols;
  std::vector<double> u(n * kLatent, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t l = 0; l < kLatent; ++l) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += g.readout[l * d + j] * static_cast<double>(f(t, j));
      u[t * kLatent + l] = s;
    }
  std::vector<double> s(n * kLatent, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= kSmoothRadius ? t - kSmoothRadius : 0;
    const std::size_t hi = std::min(n - 1, t + kSmoothRadius);
    for (std::size_t l = 0; l < kLatent; ++l) {
      double acc = 0.0;
      for (std::size_t k = lo; k <= hi; ++k) acc += u[k * kLatent + l];
      s[t * kLatent + l] = acc / static_cast<double>(hi - lo + 1);
    }
  }
  return s;
}

}  // namespace

Matrix<double> synthetic_oracle_predictions(TaskKind task, const Matrix<float>& features) {
  const auto g = generator_maps(features.cols);
  const auto s = smoothed_readout(g, features);
  const std::size_t n = features.rows, out = output_dim(task);
  Matrix<double> pred(n, out, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double* st = s.data() + t * kLatent;
    switch (task) {
      case TaskKind::VA:
        pred(t, 0) = std::tanh(kVaGain * dot(g.valence.data(), st, kLatent));
        pred(t, 1) = std::tanh(kVaGain * dot(g.arousal.data(), st, kLatent));
        break;
      case TaskKind::EXPR: {
        std::size_t best = 0;
        double best_score = -1e300;
        for (std::size_t c = 0; c < out; ++c) {
          const double score = dot(g.expr.data() + c * kLatent, st, kLatent);
          if (score > best_score) {
            best_score = score;
            best = c;
          }
        }
        pred(t, best) = 1.0;
        break;
      }
      case TaskKind::AU:
        for (std::size_t k = 0; k < out; ++k) pred(t, k) = dot(g.au.data() + k * kLatent, st, kLatent) > 0.0 ? 1.0 : -1.0;
        break;
    }
  }
  return pred;
}

FrameLabels synthetic_labels(TaskKind task, const Matrix<float>& features) {
  const auto pred = synthetic_oracle_predictions(task, features);
  const std::size_t n = features.rows, w = label_width(task);
  std::vector<double> values(n * w);
  for (std::size_t t = 0; t < n; ++t) {
    auto row = pred.row(t);
    switch (task) {
      case TaskKind::VA:
        values[t * 2] = row[0];
        values[t * 2 + 1] = row[1];
        break;
      case TaskKind::EXPR:
        values[t] = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
        break;
      case TaskKind::AU:
        for (std::size_t k = 0; k < w; ++k) values[t * w + k] = row[k] > 0.0 ? 1.0 : 0.0;
        break;
    }
  }
  return FrameLabels(task, std::move(values), std::vector<bool>(n, true));
}

std::vector<VideoRecord> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_videos == 0 || spec.n_frames == 0 || spec.feature_dim == 0) {
    throw ConfigError("synthetic dataset sizes must be >= 1");
  }
  const auto g = generator_maps(spec.feature_dim);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double innovation = std::sqrt(1.0 - kLatentCorrelation * kLatentCorrelation);
  std::vector<VideoRecord> videos;
  videos.reserve(spec.n_videos);
  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    std::vector<double> z(kLatent);
    for (auto& x : z) x = n01(rng);
    Matrix<float> f(spec.n_frames, spec.feature_dim);
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
      if (t > 0) {
        for (auto& x : z) x = kLatentCorrelation * x + innovation * n01(rng);
      }
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        const double clean = dot(g.mixing.data() + j * kLatent, z.data(), kLatent);
        f(t, j) = static_cast<float>(clean + kFeatureNoise * n01(rng));
      }
    }
    auto full = synthetic_labels(spec.task, f);
    // One unannotated burst per video, up to 2% of the frames.
    std::vector<bool> valid = full.valid_mask();
    const std::size_t burst = spec.n_frames / 50;
    if (burst > 0) {
      std::uniform_int_distribution<std::size_t> at(0, spec.n_frames - burst);
      const std::size_t s0 = at(rng);
      for (std::size_t t = s0; t < s0 + burst; ++t) valid[t] = false;
    }
    std::vector<double> values = full.values();
    for (std::size_t t = 0; t < spec.n_frames; ++t) {
      if (!valid[t]) std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(t * full.width()), full.width(), 0.0);
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03zu", v);
    videos.emplace_back(id, std::move(f), FrameLabels(spec.task, std::move(values), std::move(valid)));
  }
  return videos;
}

// ---- checkpoints -------------------------------------------------------------

Checkpoint make_checkpoint(const PipelineModel<float>& model, const SegmentationConfig& seg, const OptimConfig& optim,
                           const TrainState& state) {
  Checkpoint c;
  c.model = model.config();
  c.segmentation = seg;
  c.optim = optim;
  for (const auto& p : model.parameters()) c.parameters.push_back(NamedTensor{p.name, p.shape, p.value});
  c.state = state;
  return c;
}

PipelineModel<float> restore_model(const Checkpoint& ckpt) {
  PipelineModel<float> model(ckpt.model);
  auto& params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw CheckpointMismatchError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.parameters[i];
    if (src.name != params[i].name || src.shape != params[i].shape || src.values.size() != params[i].value.size()) {
      throw CheckpointMismatchError("checkpoint tensor '" + src.name + "' does not match model parameter '" + params[i].name + "'");
    }
    params[i].value = src.values;
  }
  return model;
}

Checkpoint best_checkpoint(const Checkpoint& ckpt) {
  Checkpoint best = ckpt;
  if (ckpt.state.best_params.size() == ckpt.parameters.size()) {
    for (std::size_t i = 0; i < best.parameters.size(); ++i) best.parameters[i].values = ckpt.state.best_params[i];
  }
  return best;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  Json cfg;
  cfg["model"] = to_json(ckpt.model);
  cfg["segmentation"] = to_json(ckpt.segmentation);
  cfg["optim"] = to_json(ckpt.optim);
  w.str(cfg.dump());

  w.u32(static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& t : ckpt.parameters) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    w.floats(t.values);
  }

  const auto& s = ckpt.state;
  w.u64(s.optim.step);
  w.u32(static_cast<std::uint32_t>(s.optim.m.size()));
  for (std::size_t i = 0; i < s.optim.m.size(); ++i) {
    w.floats(s.optim.m[i]);
    w.floats(s.optim.v[i]);
  }
  w.str(s.shuffle_rng);
  w.str(s.dropout_rng);
  w.u64(s.epochs_done);
  w.f64(s.best_metric);
  w.u64(s.best_epoch);
  w.u64(s.history.size());
  for (const auto& h : s.history) {
    w.u64(h.epoch);
    w.f64(h.lr);
    w.f64(h.train_loss);
    w.f64(h.val_metric);
  }
  w.u32(static_cast<std::uint32_t>(s.best_params.size()));
  for (const auto& p : s.best_params) w.floats(p);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (bytes.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError(origin + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    const Json cfg = Json::parse(r.str());
    c.model = model_config_from_json(cfg.at("model"));
    c.segmentation = segmentation_config_from_json(cfg.at("segmentation"));
    c.optim = optim_config_from_json(cfg.at("optim"));
  } catch (const Json::exception& e) {
    throw DataError(origin + ": corrupt configuration block: " + e.what());
  }

  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    r.checked_count(rank, 8);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.u64()));
    t.values = r.floats();
    if (grad::numel(t.shape) != t.values.size()) throw DataError(origin + ": tensor '" + t.name + "' size mismatch");
    c.parameters.push_back(std::move(t));
  }

  auto& s = c.state;
  s.optim.step = r.u64();
  const std::uint32_t n_moments = r.u32();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    s.optim.m.push_back(r.floats());
    s.optim.v.push_back(r.floats());
  }
  s.shuffle_rng = r.str();
  s.dropout_rng = r.str();
  s.epochs_done = static_cast<std::size_t>(r.u64());
  s.best_metric = r.f64();
  s.best_epoch = static_cast<std::size_t>(r.u64());
  const std::size_t n_hist = r.checked_count(r.u64(), 32);
  for (std::size_t i = 0; i < n_hist; ++i) {
    EpochRecord h;
    h.epoch = static_cast<std::size_t>(r.u64());
    h.lr = r.f64();
    h.train_loss = r.f64();
    h.val_metric = r.f64();
    s.history.push_back(h);
  }
  const std::uint32_t n_best = r.u32();
  for (std::uint32_t i = 0; i < n_best; ++i) s.best_params.push_back(r.floats());
  if (!r.done()) throw DataError(origin + ": trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path), path.string()); }

}  // namespace affectseq::io
