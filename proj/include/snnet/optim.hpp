#pragma once

// Decoupled-weight-decay adaptive optimizer with per-parameter moment state
// and a cosine learning-rate schedule. Only parameters holding a gradient
// buffer are stepped, so sparsely sampled sub-networks update sparsely; bias
// correction advances per tensor, on its own update count. One-dimensional
// tensors (biases, norm affines) are exempt from weight decay.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "snnet/anchor.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  // lr_scale multiplies the step's learning rate for that parameter.
  struct Entry {
    TensorT<float> param;
    double lr_scale = 1.0;
  };

  AdamW(std::vector<Entry> params, AdamWConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    states_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      states_[i].m.assign(static_cast<size_t>(params_[i].param.numel()), 0.0f);
      states_[i].v.assign(static_cast<size_t>(params_[i].param.numel()), 0.0f);
    }
  }

  void zero_grad() {
    for (auto& e : params_) e.param.clear_grad();
  }

  void step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].param;
      if (!p.has_grad()) continue;
      auto& st = states_[i];
      ++st.t;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      const double lr_eff = lr * params_[i].lr_scale;
      const double wd = (p.ndim() == 1) ? 0.0 : cfg_.weight_decay;
      auto data = p.data_mut();
      auto grad = p.grad();
      for (size_t j = 0; j < data.size(); ++j) {
        const double g = grad[j];
        const double m = cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * g * g;
        st.m[j] = static_cast<float>(m);
        st.v[j] = static_cast<float>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        data[j] = static_cast<float>(data[j] - lr_eff * (update + wd * data[j]));
      }
    }
  }

 private:
  struct State {
    std::vector<float> m, v;
    int64_t t = 0;
  };

  AdamWConfig cfg_;
  std::vector<Entry> params_;
  std::vector<State> states_;
};

// Cosine decay from base to 0 across total steps, no warmup.
inline double cosine_lr(double base, int64_t step, int64_t total) {
  if (total <= 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace snnet
