// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/attention.hpp"

#include <cmath>

#include "molformer/errors.hpp"
#include "molformer/rng.hpp"

namespace molformer::attn {

namespace {

std::vector<Position> positions_from(std::size_t n, Position offset) {
  std::vector<Position> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = offset + static_cast<Position>(i);
  return positions;
}

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::span<const std::uint8_t> mask) {
  if (q.cols() != k.cols() || q.rows() != k.rows() || v.rows() != k.rows())
    throw Error(ErrorCode::kDimMismatch, "attention q/k/v shapes disagree: " + nn::shape_string(q.shape()) + ", " +
                                             nn::shape_string(k.shape()) + ", " + nn::shape_string(v.shape()));
  if (!mask.empty() && mask.size() != k.rows())
    throw Error(ErrorCode::kDimMismatch, "key mask has " + std::to_string(mask.size()) + " entries for " +
                                             std::to_string(k.rows()) + " keys");
  if (!mask.empty()) {
    bool any = false;
    for (auto m : mask) any = any || m != 0;
    if (!any) throw Error(ErrorCode::kAllMasked, "every key position is masked");
  }
}

template <typename T>
Tensor<T> masked(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  return mask.empty() ? x : nn::mask_rows(tape, x, mask);
}

template <typename T>
Tensor<T> maybe_rotate(Tape<T>* tape, const Tensor<T>& x, const RotationSchedule<T>* schedule, Position offset) {
  if (schedule == nullptr) return x;
  const auto positions = positions_from(x.rows(), offset);
  return rotate(tape, x, positions, *schedule);
}

// Shared tail of both linear variants: num = fq_num * S, den = fq_den * z^T + eps.
template <typename T>
Tensor<T> linear_readout(Tape<T>* tape, const Tensor<T>& fq_num, const Tensor<T>& fk_num, const Tensor<T>& fq_den,
                         const Tensor<T>& fk_den, const Tensor<T>& v, T eps) {
  const Tensor<T> state = nn::matmul(tape, fk_num, v, true, false);  // [r, d]
  const Tensor<T> normalizer = nn::column_sum(tape, fk_den);         // [1, r]
  const Tensor<T> numerator = nn::matmul(tape, fq_num, state);
  const Tensor<T> denominator = nn::add_scalar(tape, nn::matmul(tape, fq_den, normalizer, false, true), eps);
  return nn::divide_rows(tape, numerator, denominator);
}

}  // namespace

std::string_view variant_name(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::kFullAbsolute: return "full_absolute";
    case AttentionVariant::kFullRotary: return "full_rotary";
    case AttentionVariant::kLinearRotaryOriginal: return "linear_rotary_original";
    case AttentionVariant::kLinearRotaryModified: return "linear_rotary_modified";
  }
  return "unknown";
}

AttentionVariant parse_variant(std::string_view name) {
  for (auto v : {AttentionVariant::kFullAbsolute, AttentionVariant::kFullRotary,
                 AttentionVariant::kLinearRotaryOriginal, AttentionVariant::kLinearRotaryModified}) {
    if (variant_name(v) == name) return v;
  }
  throw Error(ErrorCode::kConfig, "unknown attention variant '" + std::string(name) +
                                      "' (full_absolute, full_rotary, linear_rotary_original, "
                                      "linear_rotary_modified)");
}

std::string_view kernel_name(FeatureKernel kernel) {
  return kernel == FeatureKernel::kRelu ? "relu" : "elu_plus_one";
}

FeatureKernel parse_kernel(std::string_view name) {
  if (name == "relu") return FeatureKernel::kRelu;
  if (name == "elu_plus_one" || name == "elu") return FeatureKernel::kEluPlusOne;
  throw Error(ErrorCode::kConfig, "unknown feature kernel '" + std::string(name) + "' (relu, elu_plus_one)");
}

template <typename T>
RotationSchedule<T>::RotationSchedule(std::size_t dim, std::size_t max_positions, double base)
    : dim_(dim), max_positions_(max_positions), base_(base) {
  if (dim == 0 || dim % 2 != 0)
    throw Error(ErrorCode::kOddHeadDim, "rotary dimension must be even and positive, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  inv_freq_.resize(half);
  for (std::size_t i = 0; i < half; ++i)
    inv_freq_[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
  cos_.resize(max_positions * half);
  sin_.resize(max_positions * half);
  for (std::size_t m = 0; m < max_positions; ++m) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = static_cast<double>(m) * inv_freq_[i];
      cos_[m * half + i] = static_cast<T>(std::cos(angle));
      sin_[m * half + i] = static_cast<T>(std::sin(angle));
    }
  }
}

template <typename T>
void RotationSchedule<T>::rotate_in_place(std::span<T> x, Position position) const {
  if (x.size() != dim_)
    throw Error(x.size() % 2 ? ErrorCode::kOddHeadDim : ErrorCode::kDimMismatch,
                "rotate expects dimension " + std::to_string(dim_) + ", got " + std::to_string(x.size()));
  const auto magnitude = static_cast<std::size_t>(position < 0 ? -position : position);
  if (magnitude >= max_positions_)
    throw Error(ErrorCode::kPositionOverflow, "position " + std::to_string(position) + " beyond rotation table of " +
                                                  std::to_string(max_positions_));
  const T sign = position < 0 ? T(-1) : T(1);
  const std::size_t half = dim_ / 2;
  const T* c = cos_.data() + magnitude * half;
  const T* s = sin_.data() + magnitude * half;
  for (std::size_t i = 0; i < half; ++i) {
    const T a = x[2 * i];
    const T b = x[2 * i + 1];
    const T sn = sign * s[i];
    x[2 * i] = a * c[i] - b * sn;
    x[2 * i + 1] = a * sn + b * c[i];
  }
}

template <typename T>
Tensor<T> rotate(Tape<T>* tape, const Tensor<T>& x, std::span<const Position> positions,
                 const RotationSchedule<T>& schedule) {
  const std::size_t n = x.rows(), d = x.cols();
  if (d % 2 != 0) throw Error(ErrorCode::kOddHeadDim, "cannot rotate odd dimension " + std::to_string(d));
  if (positions.size() != n)
    throw Error(ErrorCode::kDimMismatch, std::to_string(positions.size()) + " positions for " + std::to_string(n) +
                                             " rows");
  Tensor<T> out = x.clone();
  for (std::size_t i = 0; i < n; ++i) schedule.rotate_in_place(std::span<T>(out.raw() + i * d, d), positions[i]);
  nn::check_finite(out, "rotate");
  if (nn::needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    std::vector<Position> saved(positions.begin(), positions.end());
    tape->record({x}, out, [x, out, n, d, &schedule, saved = std::move(saved)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      std::vector<T> row(d);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(g.data() + i * d, d, row.begin());
        schedule.rotate_in_place(row, -saved[i]);
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += row[j];
      }
    });
  }
  return out;
}

template <typename T>
FeatureMap<T>::FeatureMap(std::size_t input_dim, std::size_t features, std::uint64_t seed, FeatureKernel kernel)
    : kernel_(kernel), seed_(seed) {
  if (input_dim == 0 || features == 0)
    throw Error(ErrorCode::kConfig, "feature map dimensions must be positive");
  Rng rng(seed);
  std::vector<double> w(features * input_dim);
  for (auto& x : w) x = rng.normal();
  // Modified Gram-Schmidt within blocks of input_dim rows.
  for (std::size_t start = 0; start < features; start += input_dim) {
    const std::size_t end = std::min(features, start + input_dim);
    for (std::size_t i = start; i < end; ++i) {
      double* row = w.data() + i * input_dim;
      for (std::size_t j = start; j < i; ++j) {
        const double* prev = w.data() + j * input_dim;
        double dot = 0;
        for (std::size_t c = 0; c < input_dim; ++c) dot += row[c] * prev[c];
        for (std::size_t c = 0; c < input_dim; ++c) row[c] -= dot * prev[c];
      }
      double norm = 0;
      for (std::size_t c = 0; c < input_dim; ++c) norm += row[c] * row[c];
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < input_dim; ++c) row[c] /= norm;
    }
  }
  const double temper = std::pow(static_cast<double>(input_dim), -0.25);
  std::vector<T> values(w.size());
  for (std::size_t i = 0; i < features; ++i) {
    double chi = 0;
    for (std::size_t c = 0; c < input_dim; ++c) {
      const double g = rng.normal();
      chi += g * g;
    }
    const double row_scale = std::sqrt(chi) * temper;
    for (std::size_t c = 0; c < input_dim; ++c)
      values[i * input_dim + c] = static_cast<T>(w[i * input_dim + c] * row_scale);
  }
  projection_ = Tensor<T>(nn::Shape{features, input_dim}, std::move(values));
}

template <typename T>
FeatureMap<T>::FeatureMap(Tensor<T> projection, FeatureKernel kernel)
    : projection_(std::move(projection)), kernel_(kernel) {}

template <typename T>
Tensor<T> FeatureMap<T>::apply(Tape<T>* tape, const Tensor<T>& x) const {
  if (x.cols() != input_dim())
    throw Error(ErrorCode::kDimMismatch, "feature map expects " + std::to_string(input_dim()) + " inputs, got " +
                                             std::to_string(x.cols()));
  const Tensor<T> projected = nn::matmul(tape, x, projection_, false, true);
  return kernel_ == FeatureKernel::kRelu ? nn::relu(tape, projected) : nn::elu_plus_one(tape, projected);
}

template <typename T>
Tensor<T> full_attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         std::span<const std::uint8_t> key_mask, const RotationSchedule<T>* rotation,
                         bool scale_scores, Position offset) {
  check_qkv(q, k, v, key_mask);
  const Tensor<T> qr = maybe_rotate(tape, q, rotation, offset);
  const Tensor<T> kr = maybe_rotate(tape, k, rotation, offset);
  Tensor<T> scores = nn::matmul(tape, qr, kr, false, true);
  if (scale_scores) scores = nn::scale(tape, scores, T(1) / std::sqrt(static_cast<T>(q.cols())));
  const Tensor<T> weights = nn::softmax_rows(tape, scores, key_mask);
  return nn::matmul(tape, weights, v);
}

template <typename T>
Tensor<T> linear_attention_original(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    std::span<const std::uint8_t> key_mask, const FeatureMap<T>& phi,
                                    const RotationSchedule<T>* feature_rotation, T eps, Position offset) {
  check_qkv(q, k, v, key_mask);
  const Tensor<T> fq = phi.apply(tape, q);
  const Tensor<T> fk = masked(tape, phi.apply(tape, k), key_mask);
  const Tensor<T> rq = maybe_rotate(tape, fq, feature_rotation, offset);
  const Tensor<T> rk = maybe_rotate(tape, fk, feature_rotation, offset);
  return linear_readout(tape, rq, rk, fq, fk, v, eps);
}

template <typename T>
Tensor<T> linear_attention_modified(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                    std::span<const std::uint8_t> key_mask, const FeatureMap<T>& phi,
                                    const RotationSchedule<T>* head_rotation, T eps, Position offset) {
  check_qkv(q, k, v, key_mask);
  const Tensor<T> fq = phi.apply(tape, maybe_rotate(tape, q, head_rotation, offset));
  const Tensor<T> fk = masked(tape, phi.apply(tape, maybe_rotate(tape, k, head_rotation, offset)), key_mask);
  return linear_readout(tape, fq, fk, fq, fk, v, eps);
}

template <typename T>
Tensor<T> attend(Tape<T>* tape, const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                 const Tensor<T>& v, std::span<const std::uint8_t> key_mask, Position offset) {
  switch (ctx.variant) {
    case AttentionVariant::kFullAbsolute:
      return full_attention(tape, q, k, v, key_mask, static_cast<const RotationSchedule<T>*>(nullptr),
                            ctx.scale_scores, offset);
    case AttentionVariant::kFullRotary:
      return full_attention(tape, q, k, v, key_mask, ctx.head_rotation, ctx.scale_scores, offset);
    case AttentionVariant::kLinearRotaryOriginal:
      return linear_attention_original(tape, q, k, v, key_mask, *ctx.feature_map, ctx.feature_rotation, ctx.eps,
                                       offset);
    case AttentionVariant::kLinearRotaryModified:
      return linear_attention_modified(tape, q, k, v, key_mask, *ctx.feature_map, ctx.head_rotation, ctx.eps,
                                       offset);
  }
  throw Error(ErrorCode::kConfig, "unhandled attention variant");
}

template <typename T>
Tensor<T> attention_weights(const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                            std::span<const std::uint8_t> key_mask, Position offset) {
  check_qkv(q, k, k, key_mask);
  Tape<T>* none = nullptr;
  switch (ctx.variant) {
    case AttentionVariant::kFullAbsolute:
    case AttentionVariant::kFullRotary: {
      const auto* rotation = ctx.variant == AttentionVariant::kFullRotary ? ctx.head_rotation : nullptr;
      Tensor<T> scores = nn::matmul(none, maybe_rotate(none, q, rotation, offset),
                                    maybe_rotate(none, k, rotation, offset), false, true);
      if (ctx.scale_scores) scores = nn::scale(none, scores, T(1) / std::sqrt(static_cast<T>(q.cols())));
      return nn::softmax_rows(none, scores, key_mask);
    }
    case AttentionVariant::kLinearRotaryOriginal: {
      const Tensor<T> fq = ctx.feature_map->apply(none, q);
      const Tensor<T> fk = masked(none, ctx.feature_map->apply(none, k), key_mask);
      const Tensor<T> kernel = nn::matmul(none, maybe_rotate(none, fq, ctx.feature_rotation, offset),
                                          maybe_rotate(none, fk, ctx.feature_rotation, offset), false, true);
      const Tensor<T> den =
          nn::add_scalar(none, nn::matmul(none, fq, nn::column_sum(none, fk), false, true), ctx.eps);
      return nn::divide_rows(none, kernel, den);
    }
    case AttentionVariant::kLinearRotaryModified: {
      const Tensor<T> fq = ctx.feature_map->apply(none, maybe_rotate(none, q, ctx.head_rotation, offset));
      const Tensor<T> fk =
          masked(none, ctx.feature_map->apply(none, maybe_rotate(none, k, ctx.head_rotation, offset)), key_mask);
      const Tensor<T> kernel = nn::matmul(none, fq, fk, false, true);
      const Tensor<T> den =
          nn::add_scalar(none, nn::matmul(none, fq, nn::column_sum(none, fk), false, true), ctx.eps);
      return nn::divide_rows(none, kernel, den);
    }
  }
  throw Error(ErrorCode::kConfig, "unhandled attention variant");
}

template <typename T>
Tensor<T> pooled_attention_map(const AttentionContext<T>& ctx, const Tensor<T>& q, const Tensor<T>& k,
                               std::size_t heads, std::span<const std::uint8_t> key_mask, std::size_t max_length,
                               Position offset) {
  const std::size_t n = q.rows();
  if (n > max_length)
    throw Error(ErrorCode::kSequenceTooLongForAnalysis, "sequence of " + std::to_string(n) +
                                                            " positions exceeds analysis cap " +
                                                            std::to_string(max_length));
  if (heads == 0 || q.cols() % heads != 0)
    throw Error(ErrorCode::kDimMismatch, "width " + std::to_string(q.cols()) + " not divisible into " +
                                             std::to_string(heads) + " heads");
  const std::size_t head_dim = q.cols() / heads;
  Tensor<T> pooled(nn::Shape{n, n});
  Tape<T>* none = nullptr;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> w = attention_weights(ctx, nn::slice(none, q, 0, n, h * head_dim, head_dim),
                                          nn::slice(none, k, 0, n, h * head_dim, head_dim), key_mask, offset);
    for (std::size_t i = 0; i < n * n; ++i) pooled.raw()[i] += w[i];
  }
  for (std::size_t i = 0; i < n * n; ++i) pooled.raw()[i] /= static_cast<T>(heads);
  return pooled;
}

#define MOLFORMER_INSTANTIATE_ATTENTION(T)                                                                     \
  template class RotationSchedule<T>;                                                                          \
  template class FeatureMap<T>;                                                                                \
  template Tensor<T> rotate<T>(Tape<T>*, const Tensor<T>&, std::span<const Position>,                         \
                               const RotationSchedule<T>&);                                                    \
  template Tensor<T> full_attention<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                       std::span<const std::uint8_t>, const RotationSchedule<T>*, bool,        \
                                       Position);                                                              \
  template Tensor<T> linear_attention_original<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,               \
                                                  const Tensor<T>&, std::span<const std::uint8_t>,             \
                                                  const FeatureMap<T>&, const RotationSchedule<T>*, T,         \
                                                  Position);                                                   \
  template Tensor<T> linear_attention_modified<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,               \
                                                  const Tensor<T>&, std::span<const std::uint8_t>,             \
                                                  const FeatureMap<T>&, const RotationSchedule<T>*, T,         \
                                                  Position);                                                   \
  template Tensor<T> attend<T>(Tape<T>*, const AttentionContext<T>&, const Tensor<T>&, const Tensor<T>&,       \
                               const Tensor<T>&, std::span<const std::uint8_t>, Position);                     \
  template Tensor<T> attention_weights<T>(const AttentionContext<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                          std::span<const std::uint8_t>, Position);                            \
  template Tensor<T> pooled_attention_map<T>(const AttentionContext<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                             std::size_t, std::span<const std::uint8_t>, std::size_t, Position);

MOLFORMER_INSTANTIATE_ATTENTION(float)
MOLFORMER_INSTANTIATE_ATTENTION(double)

}  // namespace molformer::attn
