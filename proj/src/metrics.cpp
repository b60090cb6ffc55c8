#include "rsmg/metrics.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rsmg/io.hpp"

namespace rsmg {

namespace {

using i128 = __int128;

i128 gcd128(i128 a, i128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

/// num / den after reduction; rounded once when both fit in 53 bits.
double ratio(i128 num, i128 den) {
  const i128 g = gcd128(num, den);
  if (g > 1) num /= g, den /= g;
  if (num < (i128(1) << 53) && num > -(i128(1) << 53) && den < (i128(1) << 53)) return double(num) / double(den);
  return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
}

}  // namespace

Metrics metrics_from_confusion(std::vector<std::vector<std::int64_t>> confusion) {
  const int k = static_cast<int>(confusion.size());
  Metrics m;
  i128 total = 0, trace = 0, chance = 0;
  std::vector<i128> rows(k, 0), cols(k, 0);
  for (int i = 0; i < k; ++i) {
    if (static_cast<int>(confusion[i].size()) != k) throw Error(ErrorCode::ShapeMismatch, "confusion must be square");
    for (int j = 0; j < k; ++j) {
      if (confusion[i][j] < 0) throw Error(ErrorCode::InvalidArg, "negative confusion count");
      rows[i] += confusion[i][j];
      cols[j] += confusion[i][j];
      total += confusion[i][j];
    }
    trace += confusion[i][i];
  }
  if (total == 0) throw Error(ErrorCode::EmptyEvalSet, "no labelled samples to evaluate");
  for (int i = 0; i < k; ++i) chance += rows[i] * cols[i];

  m.oa = ratio(trace, total);
  // kappa = (p_o - p_e) / (1 - p_e) = (total*trace - sum row*col) / (total^2 - sum row*col)
  const i128 kden = total * total - chance;
  m.kappa = kden == 0 ? (total * trace == chance ? 1.0 : 0.0) : ratio(total * trace - chance, kden);

  // AA as one fraction: sum_i diag_i / row_i over supported classes, divided by their count
  i128 num = 0, den = 1;
  int supported = 0;
  bool exact = true;
  double approx = 0.0;
  m.per_class_recall.assign(k, 0.0);
  for (int i = 0; i < k; ++i) {
    if (rows[i] == 0) continue;
    ++supported;
    m.per_class_recall[i] = ratio(confusion[i][i], rows[i]);
    approx += double(confusion[i][i]) / double(rows[i]);
    if (!exact) continue;
    const i128 g = gcd128(den, rows[i]);
    const i128 lcm = den / g * rows[i];
    if (lcm > (i128(1) << 62)) {
      exact = false;
      continue;
    }
    num = num * (lcm / den) + i128(confusion[i][i]) * (lcm / rows[i]);
    den = lcm;
  }
  m.aa = exact ? ratio(num, den * supported) : approx / supported;
  m.confusion = std::move(confusion);
  return m;
}

Metrics compute_metrics(std::span<const int> truth, std::span<const int> pred, int num_classes) {
  if (truth.size() != pred.size()) throw Error(ErrorCode::ShapeMismatch, "truth and prediction lengths differ");
  if (num_classes < 1) throw Error(ErrorCode::InvalidArg, "need at least one class");
  std::vector<std::vector<std::int64_t>> confusion(num_classes, std::vector<std::int64_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;
    if (truth[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes)
      throw Error(ErrorCode::InvalidArg, "class id out of range at " + std::to_string(i));
    ++confusion[truth[i]][pred[i]];
  }
  return metrics_from_confusion(std::move(confusion));
}

std::map<std::string, MeanStd> aggregate(const std::vector<Metrics>& runs) {
  if (runs.empty()) throw Error(ErrorCode::EmptyEvalSet, "no runs to aggregate");
  std::map<std::string, MeanStd> out;
  auto summarize = [&](const char* name, double Metrics::*field) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.*field;
    mean /= double(runs.size());
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.*field - mean) * (r.*field - mean);
    out[name] = {mean, runs.size() > 1 ? std::sqrt(ss / double(runs.size() - 1)) : 0.0};
  };
  summarize("oa", &Metrics::oa);
  summarize("aa", &Metrics::aa);
  summarize("kappa", &Metrics::kappa);
  return out;
}

std::string format_report(const std::map<std::string, MeanStd>& summary) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  for (const char* name : {"oa", "aa", "kappa"}) {
    const auto it = summary.find(name);
    if (it == summary.end()) continue;
    out << name << '\t' << it->second.mean << '\t' << it->second.std << '\n';
  }
  return out.str();
}

void write_report(const std::string& path, const std::map<std::string, MeanStd>& summary) {
  auto out = open_for_write(path);
  out << format_report(summary);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

std::vector<int> predict_max_score(const Tensor& s1, const Tensor& s2) {
  if (s1.rank() != 2 || s1.shape() != s2.shape())
    throw Error(ErrorCode::ShapeMismatch, "score shapes " + shape_str(s1.shape()) + " and " + shape_str(s2.shape()));
  const int n = s1.dim(0), k = s1.dim(1);
  std::vector<int> out(n, 0);
  for (int i = 0; i < n; ++i) {
    float best = std::max(s1.data()[i * k], s2.data()[i * k]);
    for (int j = 1; j < k; ++j) {
      const float s = std::max(s1.data()[i * k + j], s2.data()[i * k + j]);
      if (s > best) best = s, out[i] = j;
    }
  }
  return out;
}

std::vector<unsigned char> encode_classification_map(std::span<const int> preds, int height, int width) {
  if (height < 1 || width < 1 || preds.size() != std::size_t(height) * width)
    throw Error(ErrorCode::InvalidArg, "map raster does not match " + std::to_string(height) + "x" + std::to_string(width));
  static const unsigned char colors[3][3] = {{0, 0, 255}, {255, 165, 0}, {0, 128, 0}};
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + preds.size() * 3);
  for (int id : preds) {
    if (id < -1 || id > 2) throw Error(ErrorCode::InvalidArg, "map class id " + std::to_string(id) + " has no color");
    for (int c = 0; c < 3; ++c) bytes.push_back(id < 0 ? 0 : colors[id][c]);
  }
  return bytes;
}

void write_classification_map(const std::string& path, std::span<const int> preds, int height, int width) {
  const auto bytes = encode_classification_map(preds, height, width);
  auto out = open_for_write(path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

}  // namespace rsmg
