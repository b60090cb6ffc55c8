#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rsmg/dtaug.hpp"

namespace rsmg {

/// Source-to-target shift. Per-band draws derive from `seed` alone.
struct ShiftSpec {
  float gain_spread = 0.0f;    // std of the per-band multiplicative gain around 1
  float offset_spread = 0.0f;  // std of the per-band additive offset
  float morphology = 1.0f;     // blob-scale factor of the target layout
  float noise_sigma = 0.0f;    // extra Gaussian noise on the target
  std::uint64_t seed = 0;

  static ShiftSpec identity() { return {}; }
  /// The shift used by the default source -> target task.
  static ShiftSpec standard();
  /// "identity", "standard", or comma-separated key=value pairs over
  /// gain, offset, morph, noise, seed. Throws ConfigError.
  static ShiftSpec parse(const std::string& text);
  std::string format() const;

  struct Draws {
    std::vector<float> gain;    // one per band, HS bands then LiDAR bands
    std::vector<float> offset;
  };
  Draws draw(int bands) const;
};

struct SynthSpec {
  int height = 64;
  int width = 64;
  int bands = 16;
  int lidar_bands = 1;
  int classes = 3;
  float unlabeled_fraction = 0.1f;

  /// Desk-scale scene size.
  static SynthSpec desk() {
    SynthSpec s;
    s.height = s.width = 96;
    return s;
  }
};

/// Source and target scenes from one generative family. Classes mirror
/// Trees / Roads / Buildings: smooth class blobs, class spectra with band
/// noise for modality 1 and class-dependent elevation and roughness for
/// modality 2. Throws InvalidArg for h, w < 32 or bands < 4.
std::pair<SceneCube, SceneCube> synth_dataset(const SynthSpec& spec, const ShiftSpec& shift, std::uint64_t seed);

// ---- RSMG1 scene files --------------------------------------------------------

inline constexpr char kSceneMagic[8] = {'R', 'S', 'M', 'G', '1', '\0', '\0', '\0'};
inline constexpr std::uint32_t kSceneVersion = 1;

void write_scene(const std::string& path, const SceneCube& scene);
/// Throws BadMagic, VersionMismatch, TruncatedFile, DataError or IoError.
SceneCube read_scene(const std::string& path, Domain domain = Domain::Source);

}  // namespace rsmg
