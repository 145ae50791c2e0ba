#pragma once

#include <cstddef>
#include <vector>

#include "mmxai/tensor.hpp"

namespace mmxai {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are owned per linked parameter; a fresh
/// instance starts from zero moments, so a parameter whose gradient is always
/// zero is never moved.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  /// One update from the gradients currently held by the parameters.
  /// Throws on non-finite gradients.
  void step();
  void zero_grad();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr);
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace mmxai
