// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

namespace molformer::metrics {

double rmse(std::span<const double> predictions, std::span<const double> targets);
double mae(std::span<const double> predictions, std::span<const double> targets);

/// Area under the ROC curve via the rank-sum statistic with midranks for ties.
/// Labels are 0/1. Throws SingleClass if only one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Throws DegeneratePairs when either series has zero variance or fewer than
/// two points.
double pearson(std::span<const double> x, std::span<const double> y);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace molformer::metrics
