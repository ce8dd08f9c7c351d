// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "molformer/checkpoint.hpp"
#include "molformer/model.hpp"

namespace molformer {

struct LambConfig {
  double lr = 1.6e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-6;
  double weight_decay = 0.0;
  double trust_clamp = 10.0;
};

/// Layer-wise adaptive moments. Per tensor w with gradient g at step t:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
///   r = m/(1-b1^t) / (sqrt(v/(1-b2^t)) + eps) + wd * w
///   w -= lr * clamp(|w|/|r|, 0, trust_clamp) * r
/// The trust ratio is 1 when either norm is zero.
template <typename T>
class Lamb {
 public:
  using DecayPredicate = std::function<bool(const std::string&)>;

  /// By default weight decay skips layer norms and embeddings.
  Lamb(LambConfig config, std::vector<model::NamedTensor<T>> params, DecayPredicate decays = default_decay);

  static bool default_decay(const std::string& name);

  /// Applies one update from the parameters' accumulated gradients. Checks
  /// every gradient first, so a NonFiniteGradient leaves all state untouched.
  void step();

  std::uint64_t steps() const { return steps_; }
  const LambConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  /// Moments and step count as opt.* entries.
  void store(Checkpoint& checkpoint) const;
  void load(const Checkpoint& checkpoint);

 private:
  LambConfig config_;
  std::vector<model::NamedTensor<T>> params_;
  std::vector<bool> decays_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace molformer
