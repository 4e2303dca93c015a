#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridsight/tensor.hpp"

namespace gridsight {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam over a named parameter set. Moment buffers are created
// lazily per parameter; a parameter without an accumulated gradient steps
// with g = 0.
struct AdamState {
  AdamConfig cfg;
  std::int64_t step_count = 0;

  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  std::map<std::string, Moments> moments;

  void step(std::map<std::string, Tensor>& params) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), step_count);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), step_count);
    for (auto& [name, param] : params) {
      Moments& mo = moments[name];
      const std::size_t n = param.vec().size();
      if (mo.m.empty()) {
        mo.m.assign(n, 0.0f);
        mo.v.assign(n, 0.0f);
      } else if (mo.m.size() != n) {
        throw std::invalid_argument("adam_step: moment shape mismatch for " + name);
      }
      const bool has_grad = param.has_grad();
      if (has_grad && param.grad().size() != n) {
        throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
      }
      float* theta = param.data();
      const float* g = has_grad ? param.grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const float gi = g ? g[i] : 0.0f;
        mo.m[i] = cfg.beta1 * mo.m[i] + (1.0f - cfg.beta1) * gi;
        mo.v[i] = cfg.beta2 * mo.v[i] + (1.0f - cfg.beta2) * gi * gi;
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        theta[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }
};

// Single-parameter convenience form.
inline void adam_step(Tensor& param, AdamState& state) {
  std::map<std::string, Tensor> one{{"param", param}};
  state.step(one);
}

}  // namespace gridsight
