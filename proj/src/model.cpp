#include "affectseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace affectseq {

using grad::Shape;

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(head.hidden_dim >= 1, "head.hidden_dim must be >= 1");
  if (tcn.enabled) {
    require(tcn.channels >= 1, "tcn.channels must be >= 1");
    require(tcn.kernel_size >= 1, "tcn.kernel_size must be >= 1");
    require(tcn.num_blocks >= 1, "tcn.num_blocks must be >= 1");
    require(!tcn.dilations.empty(), "tcn.dilations must not be empty");
    for (auto d : tcn.dilations) require(d >= 1, "tcn dilations must be >= 1");
  }
  if (encoder.enabled) {
    require(encoder.d_model >= 1 && encoder.num_layers >= 1 && encoder.num_heads >= 1 && encoder.ff_dim >= 1,
            "encoder dimensions must be >= 1");
    require(encoder.d_model % encoder.num_heads == 0, "encoder.d_model must be divisible by encoder.num_heads");
    if (tcn.enabled) require(tcn.channels == encoder.d_model, "tcn.channels must equal encoder.d_model");
  }
}

std::size_t ModelConfig::head_input_dim() const {
  if (encoder.enabled) return encoder.d_model;
  if (tcn.enabled) return tcn.channels;
  return feature_dim;
}

// TCN stage (in -> C, kernel K):   K*in*C + C + K*C*C + C  [+ in*C + C when in != C]
// input projection (no TCN):       D*d + d
// encoder layer:                   4*(d*d + d) + d*ff + ff + ff*d + d + 4*d
// encoder final norm:              2*d
// head:                            in*h + h + h*out + out
std::size_t ModelConfig::parameter_count() const {
  std::size_t total = 0;
  if (tcn.enabled) {
    const std::size_t k = tcn.kernel_size, c = tcn.channels;
    std::size_t in = feature_dim;
    for (std::size_t b = 0; b < tcn.num_blocks; ++b) {
      for (std::size_t s = 0; s < tcn.dilations.size(); ++s) {
        total += k * in * c + c + k * c * c + c;
        if (in != c) total += in * c + c;
        in = c;
      }
    }
  }
  if (encoder.enabled) {
    const std::size_t d = encoder.d_model, ff = encoder.ff_dim;
    if (!tcn.enabled) total += feature_dim * d + d;
    total += encoder.num_layers * (4 * (d * d + d) + d * ff + ff + ff * d + d + 4 * d);
    total += 2 * d;
  }
  const std::size_t in = head_input_dim(), h = head.hidden_dim, out = output_dim(task);
  total += in * h + h + h * out + out;
  return total;
}

template <typename T>
std::vector<T> sinusoidal_positions(std::size_t rows, std::size_t dim) {
  std::vector<T> pe(rows * dim);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
PipelineModel<T>::PipelineModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& cfg = config_;
  if (cfg.tcn.enabled) {
    const std::size_t k = cfg.tcn.kernel_size, c = cfg.tcn.channels;
    std::size_t in = cfg.feature_dim;
    for (std::size_t b = 0; b < cfg.tcn.num_blocks; ++b) {
      for (std::size_t s = 0; s < cfg.tcn.dilations.size(); ++s) {
        const std::string p = "tcn." + std::to_string(b) + "." + std::to_string(s) + ".";
        add_parameter(p + "conv1.weight", {k, in, c});
        add_parameter(p + "conv1.bias", {c});
        add_parameter(p + "conv2.weight", {k, c, c});
        add_parameter(p + "conv2.bias", {c});
        if (in != c) {
          add_parameter(p + "proj.weight", {in, c});
          add_parameter(p + "proj.bias", {c});
        }
        in = c;
      }
    }
  }
  if (cfg.encoder.enabled) {
    const std::size_t d = cfg.encoder.d_model, ff = cfg.encoder.ff_dim;
    if (!cfg.tcn.enabled) {
      add_parameter("input_proj.weight", {cfg.feature_dim, d});
      add_parameter("input_proj.bias", {d});
    }
    for (std::size_t l = 0; l < cfg.encoder.num_layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      add_parameter(p + "ln1.gamma", {d});
      add_parameter(p + "ln1.beta", {d});
      for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
        add_parameter(p + proj + ".weight", {d, d});
        add_parameter(p + proj + ".bias", {d});
      }
      add_parameter(p + "ln2.gamma", {d});
      add_parameter(p + "ln2.beta", {d});
      add_parameter(p + "ff1.weight", {d, ff});
      add_parameter(p + "ff1.bias", {ff});
      add_parameter(p + "ff2.weight", {ff, d});
      add_parameter(p + "ff2.bias", {d});
    }
    add_parameter("enc.final_ln.gamma", {d});
    add_parameter("enc.final_ln.beta", {d});
  }
  add_parameter("head.fc1.weight", {cfg.head_input_dim(), cfg.head.hidden_dim});
  add_parameter("head.fc1.bias", {cfg.head.hidden_dim});
  add_parameter("head.fc2.weight", {cfg.head.hidden_dim, output_dim(cfg.task)});
  add_parameter("head.fc2.bias", {output_dim(cfg.task)});

  // Weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and betas 0; gammas 1.
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    const auto ends_with = [&](std::string_view suffix) {
      return p.name.size() >= suffix.size() && p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".gamma")) {
      std::fill(p.value.begin(), p.value.end(), T(1));
    } else if (ends_with(".weight")) {
      std::size_t fan_in = 1;
      for (std::size_t i = 0; i + 1 < p.shape.size(); ++i) fan_in *= p.shape[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : p.value) v = static_cast<T>(dist(rng));
    }
  }
  if (parameter_count() != config_.parameter_count()) {
    throw StructuralError("parameter layout disagrees with ModelConfig::parameter_count");
  }
}

template <typename T>
grad::Parameter<T>& PipelineModel<T>::add_parameter(std::string name, Shape shape) {
  index_.emplace(name, params_.size());
  return params_.emplace_back(std::move(name), std::move(shape));
}

template <typename T>
grad::Parameter<T>& PipelineModel<T>::parameter(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw StructuralError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <typename T>
std::size_t PipelineModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void PipelineModel<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void PipelineModel<T>::fill(T value) {
  for (auto& p : params_) std::fill(p.value.begin(), p.value.end(), value);
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::linear(Context& ctx, const Tensor& x, const std::string& prefix) {
  auto w = ctx.tape.bind(parameter(prefix + ".weight"));
  auto b = ctx.tape.bind(parameter(prefix + ".bias"));
  return grad::add(grad::matmul(x, w), b);
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::affine_norm(Context& ctx, const Tensor& x, const std::string& prefix) {
  auto gamma = ctx.tape.bind(parameter(prefix + ".gamma"));
  auto beta = ctx.tape.bind(parameter(prefix + ".beta"));
  return grad::add(grad::mul(grad::layer_norm(x, 1, T(1e-5)), gamma), beta);
}

namespace {

template <typename T>
grad::Tensor<T> drop(typename PipelineModel<T>::Context& ctx, const grad::Tensor<T>& x, double p) {
  if (!ctx.train || p == 0.0) return x;
  if (ctx.rng == nullptr) throw StructuralError("training forward needs a dropout RNG");
  return grad::dropout(x, static_cast<T>(p), true, *ctx.rng);
}

}  // namespace

template <typename T>
grad::Tensor<T> PipelineModel<T>::tcn_forward(Context& ctx, const Tensor& features) {
  const auto& cfg = config_;
  if (!cfg.tcn.enabled) throw StructuralError("tcn_forward called on a model without TCN");
  if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
    throw StructuralError("tcn_forward: expected (w, " + std::to_string(cfg.feature_dim) + ") input, got " +
                          grad::shape_str(features.shape()));
  }
  Tensor x = features;
  for (std::size_t b = 0; b < cfg.tcn.num_blocks; ++b) {
    for (std::size_t s = 0; s < cfg.tcn.dilations.size(); ++s) {
      const std::string p = "tcn." + std::to_string(b) + "." + std::to_string(s) + ".";
      const std::size_t d = cfg.tcn.dilations[s];
      auto conv = [&](const Tensor& in, const std::string& name) {
        auto w = ctx.tape.bind(parameter(p + name + ".weight"));
        auto bias = ctx.tape.bind(parameter(p + name + ".bias"));
        return drop<T>(ctx, grad::relu(grad::add(grad::dilated_causal_conv1d(in, w, d), bias)), cfg.dropout);
      };
      Tensor y = conv(conv(x, "conv1"), "conv2");
      Tensor residual = index_.count(p + "proj.weight") ? linear(ctx, x, p + "proj") : x;
      x = grad::relu(grad::add(y, residual));
    }
  }
  return x;
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::encoder_forward(Context& ctx, const Tensor& g, const std::vector<bool>& frame_valid) {
  const auto& cfg = config_;
  if (!cfg.encoder.enabled) throw StructuralError("encoder_forward called on a model without encoder");
  const std::size_t d = cfg.encoder.d_model;
  if (g.rank() != 2 || g.dim(1) != d) {
    throw StructuralError("encoder_forward: expected (w, " + std::to_string(d) + ") input, got " +
                          grad::shape_str(g.shape()));
  }
  const std::size_t w = g.dim(0);
  if (frame_valid.size() != w) throw StructuralError("encoder_forward: mask length differs from sequence length");
  if (std::none_of(frame_valid.begin(), frame_valid.end(), [](bool v) { return v; })) {
    throw StructuralError("encoder_forward: every position is masked");
  }

  std::vector<bool> key_masked(w * w);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < w; ++j) key_masked[i * w + j] = !frame_valid[j];

  const std::size_t heads = cfg.encoder.num_heads, dk = d / heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  Tensor x = grad::add(g, ctx.tape.constant({w, d}, sinusoidal_positions<T>(w, d)));
  for (std::size_t l = 0; l < cfg.encoder.num_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    Tensor a = affine_norm(ctx, x, p + "ln1");
    Tensor q = linear(ctx, a, p + "attn.q");
    Tensor k = linear(ctx, a, p + "attn.k");
    Tensor v = linear(ctx, a, p + "attn.v");
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = grad::slice(q, 1, h * dk, (h + 1) * dk);
      Tensor kh = grad::slice(k, 1, h * dk, (h + 1) * dk);
      Tensor vh = grad::slice(v, 1, h * dk, (h + 1) * dk);
      Tensor scores = grad::scale(grad::matmul(qh, grad::transpose(kh)), inv_sqrt_dk);
      Tensor weights = grad::softmax(grad::masked_fill(scores, key_masked, neg_inf), 1);
      if (ctx.attention != nullptr) {
        auto wv = weights.value();
        ctx.attention->emplace_back(wv.begin(), wv.end());
      }
      head_out.push_back(grad::matmul(weights, vh));
    }
    Tensor attn = heads == 1 ? head_out.front() : grad::concat<T>(head_out, 1);
    x = grad::add(x, drop<T>(ctx, linear(ctx, attn, p + "attn.o"), cfg.dropout));

    Tensor b = affine_norm(ctx, x, p + "ln2");
    Tensor f = drop<T>(ctx, grad::gelu(linear(ctx, b, p + "ff1")), cfg.dropout);
    x = grad::add(x, drop<T>(ctx, linear(ctx, f, p + "ff2"), cfg.dropout));
  }
  return affine_norm(ctx, x, "enc.final_ln");
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::head_forward(Context& ctx, const Tensor& h) {
  if (h.rank() != 2 || h.dim(1) != config_.head_input_dim()) {
    throw StructuralError("head_forward: expected (w, " + std::to_string(config_.head_input_dim()) + ") input, got " +
                          grad::shape_str(h.shape()));
  }
  Tensor hidden = drop<T>(ctx, grad::gelu(linear(ctx, h, "head.fc1")), config_.dropout);
  Tensor out = linear(ctx, hidden, "head.fc2");
  return config_.task == TaskKind::VA ? grad::tanh(out) : out;
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::forward_segment(Context& ctx, const Matrix<float>& features,
                                                  const std::vector<bool>& frame_valid) {
  if (features.cols != config_.feature_dim) {
    throw StructuralError("segment feature_dim " + std::to_string(features.cols) + " differs from model feature_dim " +
                          std::to_string(config_.feature_dim));
  }
  if (frame_valid.size() != features.rows) throw StructuralError("segment mask length differs from window");
  std::vector<T> values(features.data.begin(), features.data.end());
  Tensor x = ctx.tape.constant({features.rows, features.cols}, std::move(values));
  if (config_.tcn.enabled) {
    x = tcn_forward(ctx, x);
  } else if (config_.encoder.enabled) {
    x = linear(ctx, x, "input_proj");
  }
  if (config_.encoder.enabled) x = encoder_forward(ctx, x, frame_valid);
  return head_forward(ctx, x);
}

template <typename T>
grad::Tensor<T> PipelineModel<T>::forward(Context& ctx, std::span<const Segment> batch) {
  if (batch.empty()) throw StructuralError("forward: empty batch");
  const std::size_t w = batch.front().window();
  std::vector<Tensor> outs;
  outs.reserve(batch.size());
  for (const auto& seg : batch) {
    if (seg.window() != w) throw StructuralError("forward: segments in a batch must share the window length");
    outs.push_back(forward_segment(ctx, seg.features, seg.frame_valid));
  }
  Tensor stacked = outs.size() == 1 ? outs.front() : grad::concat<T>(outs, 0);
  return grad::reshape(stacked, {batch.size(), w, output_dim(config_.task)});
}

template <typename T>
Matrix<double> PipelineModel<T>::predict(const Segment& segment) {
  grad::Tape<T> tape;
  tape.set_grad_enabled(false);
  Context ctx{tape, false, nullptr, nullptr};
  Tensor y = forward_segment(ctx, segment.features, segment.frame_valid);
  auto v = y.value();
  return Matrix<double>(y.dim(0), y.dim(1), std::vector<double>(v.begin(), v.end()));
}

template std::vector<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template std::vector<double> sinusoidal_positions<double>(std::size_t, std::size_t);
template class PipelineModel<float>;
template class PipelineModel<double>;

}  // namespace affectseq
