#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "magup/tensor.hpp"

namespace magup {

// A trainable tensor plus its Adam moments.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;

  void reset_moments();
};

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; grads[i] pairs with params[i].
void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, const AdamOptions& opt);
// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Parameter> params, const AdamOptions& opt);

}  // namespace magup
