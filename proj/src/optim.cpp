#include "magup/optim.hpp"

#include <cmath>

namespace magup {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  reset_moments();
}

void Parameter::reset_moments() {
  first_moment.assign(value.numel(), 0.0);
  second_moment.assign(value.numel(), 0.0);
  step = 0;
}

void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, const AdamOptions& opt) {
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.value.shape()) {
      throw ContractError("adam_step: gradient " + shape_str(g.shape()) + " for parameter " +
                          p.name + " " + shape_str(p.value.shape()));
    }
    if (p.first_moment.size() != p.value.numel()) p.reset_moments();
    ++p.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p.step));
    auto w = p.value.mutable_data();
    const auto gv = g.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      auto& m = p.first_moment[j];
      auto& v = p.second_moment[j];
      m = opt.beta1 * m + (1.0 - opt.beta1) * gv[j];
      v = opt.beta2 * v + (1.0 - opt.beta2) * gv[j] * gv[j];
      const double mhat = m / c1;
      const double vhat = v / c2;
      w[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

void adam_step(std::span<Parameter> params, const AdamOptions& opt) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.value.grad());
  adam_step(params, grads, opt);
}

}  // namespace magup
