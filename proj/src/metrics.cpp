// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "molformer/errors.hpp"

namespace molformer::metrics {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(ErrorCode::kDimMismatch, "series lengths differ: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw Error(ErrorCode::kEmptySplit, "no values to score");
}

}  // namespace

double rmse(std::span<const double> predictions, std::span<const double> targets) {
  check_sizes(predictions.size(), targets.size());
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
  return std::sqrt(s / static_cast<double>(predictions.size()));
}

double mae(std::span<const double> predictions, std::span<const double> targets) {
  check_sizes(predictions.size(), targets.size());
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - targets[i]);
  return s / static_cast<double>(predictions.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores.size(), labels.size());
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double positives = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw Error(ErrorCode::kLabelParse, "class label " + std::to_string(labels[i]) + " is not 0 or 1");
    if (labels[i] == 1) {
      positives += 1.0;
      rank_sum += rank[i];
    }
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0)
    throw Error(ErrorCode::kSingleClass, "AUC needs both classes in the evaluated split");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimMismatch, "pearson inputs differ in length");
  if (x.size() < 2) throw Error(ErrorCode::kDegeneratePairs, "pearson needs at least two pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kDegeneratePairs, "a series has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimMismatch, "cosine inputs differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace molformer::metrics
