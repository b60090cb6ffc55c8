#include "rsmg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include "rsmg/io.hpp"
#include "rsmg/ops.hpp"

namespace rsmg {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) { return std::mt19937_64(splitmix(seed ^ splitmix(id))); }

/// Gaussian-blurred white noise, standardised to zero mean and unit variance.
std::vector<float> smooth_field(int h, int w, float sigma, std::mt19937_64& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> a(std::size_t(h) * w);
  for (auto& v : a) v = nd(rng);
  const int r = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5f * float(i * i) / (sigma * sigma));
  std::vector<float> b(a.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int i = -r; i <= r; ++i) s += k[i + r] * a[std::size_t(y) * w + reflect_index(x + i, w)];
      b[std::size_t(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int i = -r; i <= r; ++i) s += k[i + r] * b[std::size_t(reflect_index(y + i, h)) * w + x];
      a[std::size_t(y) * w + x] = s;
    }
  double mean = 0.0, sq = 0.0;
  for (float v : a) mean += v;
  mean /= double(a.size());
  for (float v : a) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / double(a.size()));
  for (auto& v : a) v = static_cast<float>((v - mean) / (sd > 0 ? sd : 1.0));
  return a;
}

struct Family {
  std::vector<std::vector<float>> spectra;  // [class][band]
  std::vector<float> height;
  std::vector<float> roughness;
};

Family make_family(int classes, int bands, std::uint64_t seed) {
  auto rng = stream(seed, 1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Family f;
  const float phase = u(rng) * 2.0f * std::numbers::pi_v<float>;
  for (int k = 0; k < classes; ++k) {
    const float c1 = u(rng), c2 = u(rng), a1 = 0.15f + 0.2f * u(rng), a2 = 0.1f + 0.15f * u(rng);
    std::vector<float> s(bands);
    for (int b = 0; b < bands; ++b) {
      const float t = bands > 1 ? float(b) / float(bands - 1) : 0.0f;
      s[b] = 0.5f + 0.2f * std::sin(1.4f * std::numbers::pi_v<float> * t + phase) +
             a1 * std::exp(-0.5f * (t - c1) * (t - c1) / 0.01f) - a2 * std::exp(-0.5f * (t - c2) * (t - c2) / 0.02f);
    }
    f.spectra.push_back(std::move(s));
  }
  // Trees, Roads, Buildings; extra classes interpolate
  const float heights[3] = {0.55f, 0.05f, 0.7f};
  const float rough[3] = {0.18f, 0.02f, 0.03f};
  for (int k = 0; k < classes; ++k) {
    f.height.push_back(k < 3 ? heights[k] : u(rng));
    f.roughness.push_back(k < 3 ? rough[k] : 0.1f * u(rng));
  }
  return f;
}

SceneCube render(const SynthSpec& spec, const Family& fam, float blob_sigma, std::uint64_t seed, std::uint64_t id) {
  const int h = spec.height, w = spec.width, k = spec.classes;
  const std::size_t hw = std::size_t(h) * w;
  auto rng = stream(seed, id);
  std::vector<std::vector<float>> fields;
  for (int c = 0; c < k; ++c) fields.push_back(smooth_field(h, w, blob_sigma, rng));
  const std::vector<float> illum = smooth_field(h, w, 0.5f * blob_sigma, rng);
  const std::vector<float> terrain = smooth_field(h, w, 2.0f * blob_sigma, rng);

  SceneCube scene;
  scene.num_classes = k;
  scene.hs = Tensor(Shape{spec.bands, h, w});
  scene.lidar = Tensor(Shape{spec.lidar_bands, h, w});
  scene.labels.assign(hw, -1);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> weight(k);
  for (std::size_t p = 0; p < hw; ++p) {
    float mx = -1e30f;
    int arg = 0;
    for (int c = 0; c < k; ++c)
      if (fields[c][p] > mx) mx = fields[c][p], arg = c;
    float z = 0.0f;
    for (int c = 0; c < k; ++c) z += weight[c] = std::exp(4.0f * (fields[c][p] - mx));
    for (auto& v : weight) v /= z;
    for (int b = 0; b < spec.bands; ++b) {
      float s = 0.0f;
      for (int c = 0; c < k; ++c) s += weight[c] * fam.spectra[c][b];
      scene.hs.data()[b * hw + p] = s * (1.0f + 0.1f * illum[p]) + 0.05f * nd(rng);
    }
    float elev = 0.15f * terrain[p], rough = 0.0f;
    for (int c = 0; c < k; ++c) elev += weight[c] * fam.height[c], rough += weight[c] * fam.roughness[c];
    for (int b = 0; b < spec.lidar_bands; ++b) scene.lidar.data()[b * hw + p] = elev + rough * nd(rng) + 0.02f * nd(rng);
    scene.labels[p] = u(rng) < spec.unlabeled_fraction ? -1 : arg;
  }
  return scene;
}

}  // namespace

ShiftSpec ShiftSpec::standard() { return {0.25f, 0.15f, 1.5f, 0.03f, 7}; }

ShiftSpec ShiftSpec::parse(const std::string& text) {
  if (text == "identity" || text == "none") return identity();
  if (text == "standard" || text == "default") return standard();
  ShiftSpec s;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "shift item '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "seed") {
        s.seed = std::stoull(value, &used);
      } else {
        const float v = std::stof(value, &used);
        if (key == "gain") s.gain_spread = v;
        else if (key == "offset") s.offset_spread = v;
        else if (key == "morph") s.morphology = v;
        else if (key == "noise") s.noise_sigma = v;
        else throw Error(ErrorCode::ConfigError, "unknown shift key '" + key + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ConfigError, "bad shift value '" + item + "'");
    }
  }
  if (s.gain_spread < 0 || s.offset_spread < 0 || s.noise_sigma < 0 || !(s.morphology > 0))
    throw Error(ErrorCode::ConfigError, "shift magnitudes must be non-negative and morph positive");
  return s;
}

std::string ShiftSpec::format() const {
  std::ostringstream out;
  out << "gain=" << gain_spread << ",offset=" << offset_spread << ",morph=" << morphology << ",noise=" << noise_sigma
      << ",seed=" << seed;
  return out.str();
}

ShiftSpec::Draws ShiftSpec::draw(int bands) const {
  auto rng = stream(seed, 2);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  const float ga = nd(rng), gb = nd(rng), oa = nd(rng), ob = nd(rng);
  Draws d;
  for (int b = 0; b < bands; ++b) {
    const float t = bands > 1 ? 2.0f * float(b) / float(bands - 1) - 1.0f : 0.0f;
    const float ge = nd(rng), oe = nd(rng);
    d.gain.push_back(std::max(0.2f, 1.0f + gain_spread * (ga + 0.5f * gb * t + 0.3f * ge)));
    d.offset.push_back(offset_spread * (oa + 0.5f * ob * t + 0.3f * oe));
  }
  return d;
}

std::pair<SceneCube, SceneCube> synth_dataset(const SynthSpec& spec, const ShiftSpec& shift, std::uint64_t seed) {
  if (spec.height < 32 || spec.width < 32) throw Error(ErrorCode::InvalidArg, "synthetic scenes need h, w >= 32");
  if (spec.bands < 4) throw Error(ErrorCode::InvalidArg, "synthetic scenes need at least 4 bands");
  if (spec.lidar_bands < 1 || spec.classes < 2) throw Error(ErrorCode::InvalidArg, "need LiDAR bands and 2+ classes");
  const Family fam = make_family(spec.classes, spec.bands, seed);
  const float sigma = 0.1f * float(std::min(spec.height, spec.width));
  SceneCube source = render(spec, fam, sigma, seed, 10);
  SceneCube target = render(spec, fam, sigma * shift.morphology, seed, 11);
  source.domain = Domain::Source;
  target.domain = Domain::Target;

  const auto d = shift.draw(spec.bands + spec.lidar_bands);
  auto rng = stream(shift.seed ^ seed, 3);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  const std::size_t hw = std::size_t(spec.height) * spec.width;
  auto apply = [&](Tensor& cube, int first) {
    for (int b = 0; b < cube.dim(0); ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        float& v = cube.data()[b * hw + p];
        v = d.gain[first + b] * v + d.offset[first + b];
        if (shift.noise_sigma > 0.0f) v += shift.noise_sigma * nd(rng);
      }
  };
  apply(target.hs, 0);
  apply(target.lidar, spec.bands);
  return {std::move(source), std::move(target)};
}

void write_scene(const std::string& path, const SceneCube& scene) {
  scene.validate();
  auto out = open_for_write(path);
  out.write(kSceneMagic, 8);
  write_u32(out, kSceneVersion);
  write_u32(out, static_cast<std::uint32_t>(scene.height()));
  write_u32(out, static_cast<std::uint32_t>(scene.width()));
  write_u32(out, static_cast<std::uint32_t>(scene.hs.dim(0)));
  write_u32(out, static_cast<std::uint32_t>(scene.lidar.dim(0)));
  write_u32(out, static_cast<std::uint32_t>(scene.num_classes));
  write_floats(out, scene.hs.data());
  write_floats(out, scene.lidar.data());
  const std::vector<std::int32_t> labels(scene.labels.begin(), scene.labels.end());
  write_ints(out, labels);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

SceneCube read_scene(const std::string& path, Domain domain) {
  ByteReader in(read_all(path));
  if (in.remaining() < 8 || std::memcmp(in.take(8).data(), kSceneMagic, 8) != 0)
    throw Error(ErrorCode::BadMagic, path + " is not an RSMG1 scene");
  const auto version = in.u32();
  if (version != kSceneVersion)
    throw Error(ErrorCode::VersionMismatch, "scene version " + std::to_string(version) + ", expected 1");
  const auto h = in.u32(), w = in.u32(), c_hs = in.u32(), c_li = in.u32(), k = in.u32();
  if (h == 0 || w == 0 || c_hs == 0 || c_li == 0 || k == 0 || h > 1u << 15 || w > 1u << 15 || c_hs > 1u << 12 ||
      c_li > 1u << 12)
    throw Error(ErrorCode::DataError, "implausible scene header in " + path);
  const std::size_t hw = std::size_t(h) * w;
  const std::size_t need = (std::size_t(c_hs) + c_li) * hw * 4 + hw * 4;
  if (in.remaining() < need) throw Error(ErrorCode::TruncatedFile, path + " ends before its payload");
  SceneCube scene;
  scene.num_classes = int(k);
  scene.domain = domain;
  scene.hs = Tensor(Shape{int(c_hs), int(h), int(w)});
  scene.lidar = Tensor(Shape{int(c_li), int(h), int(w)});
  in.floats(scene.hs.data());
  in.floats(scene.lidar.data());
  std::vector<std::int32_t> labels(hw);
  in.ints(labels);
  scene.labels.assign(labels.begin(), labels.end());
  scene.validate();
  return scene;
}

}  // namespace rsmg
