#pragma once

#include <vector>

#include "rsmg/nn.hpp"

namespace rsmg {

/// Adam with coupled L2 weight decay (g <- g + wd * theta before the moments).
struct AdamState {
  long step = 0;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// Applies one update to every tensor in `params` using its accumulated
/// gradient (missing gradients count as zero).
void adam_step(AdamState& state, std::vector<Tensor>& params);
void adam_step(AdamState& state, const ParamList& params);

/// lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / T)).
float cosine_lr(long t, long total, float lr_max, float lr_min = 0.0f);

}  // namespace rsmg
