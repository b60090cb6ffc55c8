#include "rsmg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace rsmg {

GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& wrt, double h,
                          double tol, int max_probes) {
  std::vector<Tensor> params = wrt;
  for (auto& p : params) p.zero_grad();
  std::vector<std::vector<float>> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& p : params) {
      auto g = p.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0f);
    }
  }
  for (auto& p : params) p.zero_grad();

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].data();
    const std::int64_t n = params[t].numel();
    const std::int64_t stride = std::max<std::int64_t>(1, n / max_probes);
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::int64_t i = 0; i < n; i += stride) {
      const float saved = data[i];
      data[i] = static_cast<float>(saved + h);
      const double up = loss_fn().item();
      data[i] = static_cast<float>(saved - h);
      const double down = loss_fn().item();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[t][i];
      diff2 += (an - fd) * (an - fd);
      a2 += an * an;
      f2 += fd * fd;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(f2), 1e-6});
    const double rel = std::sqrt(diff2) / denom;
    if (rel >= result.rel_error) {
      result.rel_error = rel;
      result.worst = "input " + std::to_string(t);
    }
  }
  result.ok = result.rel_error <= tol;
  return result;
}

}  // namespace rsmg
