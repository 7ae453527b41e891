#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "affectseq/datamodel.hpp"
#include "affectseq/tensor.hpp"

namespace affectseq {

struct TcnConfig {
  bool enabled = true;
  std::size_t channels = 256;
  std::size_t kernel_size = 3;
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  std::size_t num_blocks = 2;

  bool operator==(const TcnConfig&) const = default;
};

struct EncoderConfig {
  bool enabled = true;
  std::size_t d_model = 256;
  std::size_t num_layers = 4;
  std::size_t num_heads = 8;
  std::size_t ff_dim = 1024;

  bool operator==(const EncoderConfig&) const = default;
};

struct HeadConfig {
  std::size_t hidden_dim = 128;

  bool operator==(const HeadConfig&) const = default;
};

struct ModelConfig {
  std::size_t feature_dim = 512;
  TcnConfig tcn;
  EncoderConfig encoder;
  HeadConfig head;
  double dropout = 0.3;
  TaskKind task = TaskKind::VA;

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;

  /// Closed-form number of scalar parameters (see parameter_count in model.cpp).
  std::size_t parameter_count() const;

  /// Width of the features handed to the head.
  std::size_t head_input_dim() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Residual TCN -> Transformer encoder -> MLP head, applied per segment.
///
/// The TCN is `num_blocks` repetitions of one residual stage per dilation.
/// Each stage runs conv(d) -> relu -> dropout twice and adds the stage input
/// (through a 1x1 projection when the channel count changes). The encoder is
/// pre-norm with sinusoidal positions and a final layer norm. Attention never
/// looks at padded frames.
template <typename T>
class PipelineModel {
 public:
  using Tensor = grad::Tensor<T>;
  using Parameter = grad::Parameter<T>;

  /// State for one forward pass.
  struct Context {
    grad::Tape<T>& tape;
    bool train = false;
    std::mt19937_64* rng = nullptr;
    /// When set, receives one w x w attention matrix per layer and head.
    std::vector<std::vector<T>>* attention = nullptr;
  };

  explicit PipelineModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  std::size_t parameter_count() const;

  void zero_grad();
  /// Sets every parameter entry to `value`.
  void fill(T value);

  /// f: w x D -> w x C (causal).
  Tensor tcn_forward(Context& ctx, const Tensor& features);
  /// g: w x C -> w x C. `frame_valid[t]` false marks padding.
  Tensor encoder_forward(Context& ctx, const Tensor& g, const std::vector<bool>& frame_valid);
  /// h: w x C -> w x output_dim(task). VA passes through tanh.
  Tensor head_forward(Context& ctx, const Tensor& h);

  /// One window: w x D features -> w x output_dim.
  Tensor forward_segment(Context& ctx, const Matrix<float>& features, const std::vector<bool>& frame_valid);
  /// Batch of windows -> B x w x output_dim.
  Tensor forward(Context& ctx, std::span<const Segment> batch);

  /// Eval-mode prediction of one window on a private tape.
  Matrix<double> predict(const Segment& segment);

 private:
  Parameter& add_parameter(std::string name, grad::Shape shape);
  Tensor linear(Context& ctx, const Tensor& x, const std::string& prefix);
  Tensor affine_norm(Context& ctx, const Tensor& x, const std::string& prefix);

  ModelConfig config_;
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sinusoidal position table, rows x dim, row-major.
template <typename T>
std::vector<T> sinusoidal_positions(std::size_t rows, std::size_t dim);

extern template class PipelineModel<float>;
extern template class PipelineModel<double>;

}  // namespace affectseq
