// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/lamb.hpp"

#include <algorithm>
#include <cmath>

#include "molformer/errors.hpp"

namespace molformer {

template <typename T>
Lamb<T>::Lamb(LambConfig config, std::vector<model::NamedTensor<T>> params, DecayPredicate decays)
    : config_(config), params_(std::move(params)) {
  if (!(config_.lr >= 0.0) || !(config_.eps > 0.0) || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
      config_.beta2 < 0.0 || config_.beta2 >= 1.0 || config_.weight_decay < 0.0 || config_.trust_clamp < 0.0)
    throw Error(ErrorCode::kConfig, "invalid optimizer hyperparameters");
  for (const auto& p : params_) {
    decays_.push_back(decays(p.name));
    m_.emplace_back(p.tensor.size(), T(0));
    v_.emplace_back(p.tensor.size(), T(0));
  }
}

template <typename T>
bool Lamb<T>::default_decay(const std::string& name) {
  return name.find("ln") == std::string::npos && name.find("embedding") == std::string::npos;
}

template <typename T>
void Lamb<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad_view())
      if (!std::isfinite(g)) throw Error(ErrorCode::kNonFiniteGradient, "gradient of " + p.name + " is not finite");
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  std::vector<double> r;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const std::size_t n = p.tensor.size();
    const auto w = p.tensor.values();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool has_grad = p.tensor.has_grad();
    const auto g = has_grad ? p.tensor.grad_view() : std::span<const T>{};
    const double wd = decays_[i] ? config_.weight_decay : 0.0;
    r.assign(n, 0.0);
    double w_norm = 0.0, r_norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = has_grad ? static_cast<double>(g[j]) : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      r[j] = (mj / c1) / (std::sqrt(vj / c2) + config_.eps) + wd * w[j];
      w_norm += static_cast<double>(w[j]) * w[j];
      r_norm += r[j] * r[j];
    }
    w_norm = std::sqrt(w_norm);
    r_norm = std::sqrt(r_norm);
    const double trust = (w_norm > 0.0 && r_norm > 0.0) ? std::clamp(w_norm / r_norm, 0.0, config_.trust_clamp) : 1.0;
    const double scale = config_.lr * trust;
    if (scale == 0.0) continue;
    auto dst = p.tensor.mutable_values();
    for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<T>(dst[j] - scale * r[j]);
  }
}

template <typename T>
void Lamb<T>::store(Checkpoint& checkpoint) const {
  checkpoint.header["opt.steps"] = std::to_string(steps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    checkpoint.put("opt.m." + params_[i].name, nn::Tensor<T>(params_[i].tensor.shape(), m_[i]));
    checkpoint.put("opt.v." + params_[i].name, nn::Tensor<T>(params_[i].tensor.shape(), v_[i]));
  }
}

template <typename T>
void Lamb<T>::load(const Checkpoint& checkpoint) {
  steps_ = std::stoull(checkpoint.value("opt.steps"));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto m = checkpoint.get<T>("opt.m." + params_[i].name);
    auto v = checkpoint.get<T>("opt.v." + params_[i].name);
    if (m.size() != m_[i].size() || v.size() != v_[i].size())
      throw Error(ErrorCode::kCheckpointFormat, "optimizer state for " + params_[i].name + " has the wrong size");
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

template class Lamb<float>;
template class Lamb<double>;

}  // namespace molformer
