#include "rsmg/optim.hpp"

#include <cmath>
#include <numbers>

namespace rsmg {

void adam_step(AdamState& state, std::vector<Tensor>& params) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "Adam state/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (static_cast<std::int64_t>(state.m[i].size()) != params[i].numel())
      throw Error(ErrorCode::ShapeMismatch, "Adam moment shape does not match parameter " + std::to_string(i));

  ++state.step;
  const double bc1 = 1.0 - std::pow(double(state.beta1), double(state.step));
  const double bc2 = 1.0 - std::pow(double(state.beta2), double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const float g = (grad.empty() ? 0.0f : grad[j]) + state.weight_decay * theta[j];
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

void adam_step(AdamState& state, const ParamList& params) {
  std::vector<Tensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back(p.tensor);
  adam_step(state, tensors);
}

float cosine_lr(long t, long total, float lr_max, float lr_min) {
  if (total < 1) throw Error(ErrorCode::InvalidArg, "cosine_lr needs T >= 1");
  if (t < 0 || t > total) throw Error(ErrorCode::InvalidArg, "cosine_lr step outside [0, T]");
  const double c = std::cos(std::numbers::pi * double(t) / double(total));
  return static_cast<float>(lr_min + 0.5 * (double(lr_max) - lr_min) * (1.0 + c));
}

}  // namespace rsmg
