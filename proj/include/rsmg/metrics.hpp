#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rsmg/tensor.hpp"

namespace rsmg {

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class_recall;
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][prediction]
};

/// Metrics over pixels whose truth is >= 0. AA averages recall over classes
/// with support. OA, AA and kappa are each rounded once from exact rationals.
/// Throws EmptyEvalSet when nothing is labelled, InvalidArg on bad ids.
Metrics compute_metrics(std::span<const int> truth, std::span<const int> pred, int num_classes);
Metrics metrics_from_confusion(std::vector<std::vector<std::int64_t>> confusion);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

/// Mean and standard deviation of oa, aa and kappa across runs.
std::map<std::string, MeanStd> aggregate(const std::vector<Metrics>& runs);

/// `metric<TAB>mean<TAB>std` lines in the order oa, aa, kappa.
void write_report(const std::string& path, const std::map<std::string, MeanStd>& summary);
std::string format_report(const std::map<std::string, MeanStd>& summary);

/// argmax over classes of max(s1, s2); ties go to the lower class index.
/// Scores are [N, K]; throws ShapeMismatch.
std::vector<int> predict_max_score(const Tensor& s1, const Tensor& s2);

/// Binary PPM of an [h, w] class raster: 0 blue, 1 orange, 2 green, -1 black.
/// Throws InvalidArg for other ids, IoError on write failure.
void write_classification_map(const std::string& path, std::span<const int> preds, int height, int width);
std::vector<unsigned char> encode_classification_map(std::span<const int> preds, int height, int width);

}  // namespace rsmg
