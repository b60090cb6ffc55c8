#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rsmg/tensor.hpp"

namespace rsmg {

struct GradCheckResult {
  /// Worst per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||).
  double rel_error = 0.0;
  std::string worst;
  bool ok = false;
};

/// Compares tape gradients of `loss_fn` against central differences for every
/// tensor in `wrt`. At most `max_probes` elements per tensor are probed
/// (evenly strided). Gradients on `wrt` are cleared before and after.
GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& wrt,
                          double h = 1e-3, double tol = 1e-2, int max_probes = 64);

}  // namespace rsmg
