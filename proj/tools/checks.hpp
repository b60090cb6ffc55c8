#pragma once

#include <functional>
#include <string>
#include <vector>

namespace rsmg::checks {

struct Outcome {
  bool ok = false;
  std::string detail;
};

struct Check {
  int id = 0;
  std::string name;
  std::function<Outcome()> run;
};

Outcome wavelet_round_trip();
Outcome gradient_suite();
Outcome resample_identity();
Outcome contrastive_oracle();
Outcome metric_oracles();
Outcome identity_at_init();
/// Trains twice from files in `workdir`; checks the audit and the loss traces.
Outcome protocol_hygiene(const std::string& workdir);
Outcome io_bit_exactness(const std::string& workdir);

/// Criteria 1-6, 8 and 9 in id order. The ablation (7) is long-running and
/// lives with the acceptance driver.
std::vector<Check> quick_checks(const std::string& workdir);

}  // namespace rsmg::checks
