#include "imf/adam.hpp"

#include <cmath>

#include "imf/error.hpp"

namespace imf {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam_step: param shape " + shape_str(param.shape()) +
                         " != grad shape " + shape_str(grad.shape()));
  }
  if (state.m.empty()) {
    state.m = Tensor::zeros(param.shape());
    state.v = Tensor::zeros(param.shape());
  } else if (!state.m.same_shape(param)) {
    throw DimensionError("adam_step: moment buffers do not match param shape " +
                         shape_str(param.shape()));
  }

  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    param[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace imf
