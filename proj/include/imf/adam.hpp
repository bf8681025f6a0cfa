#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "imf/tensor.hpp"

namespace imf {

// Per-parameter Adam moment buffers. m and v are lazily sized on the first
// update and must match the parameter shape from then on.
struct AdamState {
  std::uint64_t step = 0;
  Tensor m, v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam update, in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

// Keeps one AdamState per named parameter so a model can be updated with a
// single loop over its parameter map.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}

  void update(const std::string& name, Tensor& param, const Tensor& grad) {
    AdamState& st = states_[name];
    if (st.step == 0) st.lr = lr_;
    adam_step(param, grad, st);
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  std::map<std::string, AdamState> states_;
};

}  // namespace imf
