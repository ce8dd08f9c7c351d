// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "molformer/ops.hpp"
#include "molformer/tensor.hpp"
#include "molformer/tokenizer.hpp"

namespace molformer::attn {

using nn::Tape;
using nn::Tensor;
using Position = std::int64_t;

enum class AttentionVariant {
  kFullAbsolute,
  kFullRotary,
  kLinearRotaryOriginal,
  kLinearRotaryModified,
};

std::string_view variant_name(AttentionVariant variant);
AttentionVariant parse_variant(std::string_view name);
inline bool is_linear(AttentionVariant v) {
  return v == AttentionVariant::kLinearRotaryOriginal || v == AttentionVariant::kLinearRotaryModified;
}
inline bool is_rotary(AttentionVariant v) { return v != AttentionVariant::kFullAbsolute; }

/// Block-diagonal 2x2 rotations R_m over a vector of even dimension. Pair
/// (x[2i], x[2i+1]) at position m turns by m * base^(-2i/dim). Negative
/// positions rotate backwards, so R_{-m} is the transpose of R_m.
template <typename T>
class RotationSchedule {
 public:
  RotationSchedule(std::size_t dim, std::size_t max_positions = kMaxFramedLength, double base = 10000.0);

  std::size_t dim() const { return dim_; }
  std::size_t max_positions() const { return max_positions_; }
  double base() const { return base_; }
  double inverse_frequency(std::size_t pair) const { return inv_freq_[pair]; }

  /// Rotates one vector in place; |position| must be below max_positions.
  void rotate_in_place(std::span<T> x, Position position) const;

 private:
  std::size_t dim_;
  std::size_t max_positions_;
  double base_;
  std::vector<double> inv_freq_;
  std::vector<T> cos_;  // [position][pair]
  std::vector<T> sin_;
};

/// Rotates row i of x ([N, dim]) by position positions[i].
template <typename T>
Tensor<T> rotate(Tape<T>* tape, const Tensor<T>& x, std::span<const Position> positions,
                 const RotationSchedule<T>& schedule);

enum class FeatureKernel { kRelu, kEluPlusOne };

std::string_view kernel_name(FeatureKernel kernel);
FeatureKernel parse_kernel(std::string_view name);

/// Generalized random features phi(x) = kernel(W x). W is [features, input]
/// drawn once from a seed (Gaussian rows orthogonalized in blocks, rescaled to
/// Gaussian norms, inputs tempered by dim^-1/4) and never trained. Both
/// kernels are nonnegative, so linear-attention denominators stay positive.
template <typename T>
class FeatureMap {
 public:
  FeatureMap(std::size_t input_dim, std::size_t features, std::uint64_t seed,
             FeatureKernel kernel = FeatureKernel::kRelu);
  /// Uses the given projection verbatim.
  FeatureMap(Tensor<T> projection, FeatureKernel kernel);

  std::size_t input_dim() const { return projection_.cols(); }
  std::size_t features() const { return projection_.rows(); }
  std::uint64_t seed() const { return seed_; }
  FeatureKernel kernel() const { return kernel_; }
  const Tensor<T>& projection() const { return projection_; }

  /// [N, input_dim] -> [N, features].
  Tensor<T> apply(Tape<T>* tape, const Tensor<T>& x) const;

 private:
  Tensor<T> projection_;
  FeatureKernel kernel_;
  std::uint64_t seed_ = 0;
};

/// Everything a head needs besides q, k, v. Rotation pointers may be null to
/// disable the corresponding rotation (R = I).
template <typename T>
struct AttentionContext {
  AttentionVariant variant = AttentionVariant::kLinearRotaryModified;
  const RotationSchedule<T>* head_rotation = nullptr;     // dim == head_dim
  const RotationSchedule<T>* feature_rotation = nullptr;  // dim == features, original variant only
  const FeatureMap<T>* feature_map = nullptr;
  bool scale_scores = true;
  T eps = T(1e-6);
};

/// out_m = sum_n exp(s(m,n)) v_n / sum_n exp(s(m,n)) over unmasked keys n,
/// s(m,n) = <R_m q_m, R_n k_n> / sqrt(d) (rotation and scaling optional).
template <typename T>
Tensor<T> full_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         std::span<const std::uint8_t> key_mask, const RotationSchedule<T>* rotation,
                         bool scale_scores, Position offset = 0);

/// Numerator kernel <R_m phi(q_m), R_n phi(k_n)>, denominator kernel
/// <phi(q_m), phi(k_n)>. Evaluated with the accumulators
/// S = sum_n R_n phi(k_n) v_n^T and z = sum_n phi(k_n).
template <typename T>
Tensor<T> linear_attention_original(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    std::span<const std::uint8_t> key_mask, const FeatureMap<T>& phi,
                                    const RotationSchedule<T>* feature_rotation, T eps = T(1e-6),
                                    Position offset = 0);

/// Shared kernel <phi(R_m q_m), phi(R_n k_n)> in numerator and denominator.
/// Evaluated with S = sum_n phi(R_n k_n) v_n^T and z = sum_n phi(R_n k_n).
template <typename T>
Tensor<T> linear_attention_modified(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    std::span<const std::uint8_t> key_mask, const FeatureMap<T>& phi,
                                    const RotationSchedule<T>* head_rotation, T eps = T(1e-6),
                                    Position offset = 0);

/// Dispatches on ctx.variant.
template <typename T>
Tensor<T> attend(Tape<T>* tape, const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                 const Tensor<T>& v, std::span<const std::uint8_t> key_mask, Position offset = 0);

/// The N x N weights implied by attend(): attend(q,k,v) == weights * v. For
/// the linear variants this materializes the quadratic matrix and is meant for
/// analysis only.
template <typename T>
Tensor<T> attention_weights(const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                            std::span<const std::uint8_t> key_mask, Position offset = 0);

inline constexpr std::size_t kDefaultAnalysisCap = 256;

/// Head-averaged weight map for one layer. q and k are [N, heads * head_dim].
/// Throws SequenceTooLongForAnalysis when N exceeds max_length.
template <typename T>
Tensor<T> pooled_attention_map(const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                               std::size_t heads, std::span<const std::uint8_t> key_mask,
                               std::size_t max_length = kDefaultAnalysisCap, Position offset = 0);

}  // namespace molformer::attn
