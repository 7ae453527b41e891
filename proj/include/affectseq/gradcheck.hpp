#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "affectseq/tensor.hpp"

namespace affectseq {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

using GradFn = std::function<grad::Tensor<double>(grad::Tape<double>&, std::span<const grad::Tensor<double>>)>;

/// Compares reverse-mode adjoints of sum(f(inputs) * R), R a fixed random
/// projection, with central differences over every input entry. All input
/// adjoints are stacked into one vector a (numeric: n) and the result is
/// ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-12).
double gradcheck(const GradFn& f, const std::vector<grad::Shape>& shapes, const std::vector<std::vector<double>>& inputs,
                 double step = 1e-5, std::uint64_t seed = 0);

/// Every primitive, the three losses and the composed pipeline at toy size
/// (w=8, D=4, C=4, one TCN block, one encoder layer, one head).
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace affectseq
