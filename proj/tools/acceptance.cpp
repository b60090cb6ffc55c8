#include <algorithm>
#include <array>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "checks.hpp"
#include "rsmg/pipeline.hpp"

using namespace rsmg;

namespace {

constexpr std::array<int, 3> kLevels = {1, 3, 5};
constexpr double kCpuBudget = 300.0;

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// Desk preset on the default shifted task; one scene pair and one training seed per run.
checks::Outcome directional_ablation(int seeds) {
  std::vector<std::array<double, 3>> oa(seeds);
  double worst_cpu = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto [source, target] = synth_dataset(SynthSpec::desk(), ShiftSpec::standard(), std::uint64_t(s));
    for (std::size_t i = 0; i < kLevels.size(); ++i) {
      RunConfig cfg = preset_config("desk");
      cfg.seed = std::uint64_t(s);
      apply_net_level(cfg, kLevels[i]);
      const double c0 = cpu_seconds();
      const TrainResult res = train(cfg, source);
      oa[s][i] = evaluate(res.model, target).oa;
      const double cpu = cpu_seconds() - c0;
      worst_cpu = std::max(worst_cpu, cpu);
      std::fprintf(stderr, "  seed %d NET-%d: target OA %.4f, %.0f CPU-s\n", s, kLevels[i], oa[s][i], cpu);
    }
  }
  std::array<double, 3> mean{};
  int wins = 0;
  for (const auto& row : oa) {
    for (int i = 0; i < 3; ++i) mean[i] += row[i] / seeds;
    wins += row[2] > row[0];
  }
  const bool ordered = mean[2] >= mean[1] && mean[1] >= mean[0];
  const bool ok = ordered && wins >= 4 && worst_cpu <= kCpuBudget;
  std::ostringstream os;
  os.precision(4);
  os << "mean OA NET-1 " << mean[0] << ", NET-3 " << mean[1] << ", NET-5 " << mean[2] << "; NET-5 > NET-1 on "
     << wins << "/" << seeds << " seeds; slowest run " << int(worst_cpu) << " CPU-s";
  return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Acceptance criteria 1-9"};
  std::string workdir = (std::filesystem::temp_directory_path() / "rsmg_acceptance").string();
  int seeds = 5;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--seeds", seeds, "seeds for the ablation criterion")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  auto all = checks::quick_checks(workdir);
  all.push_back({7, "directional ablation", [seeds] { return directional_ablation(seeds); }});
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  int failed = 0;
  for (const auto& check : all) {
    checks::Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    failed += !outcome.ok;
    std::cout << "criterion " << check.id << " " << (outcome.ok ? "PASS" : "FAIL") << "  " << check.name << ": "
              << outcome.detail << std::endl;
  }
  std::filesystem::remove_all(workdir);
  return failed == 0 ? 0 : 1;
}
