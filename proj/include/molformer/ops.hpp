// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "molformer/tensor.hpp"
#include "molformer/tokenizer.hpp"

// Differentiable ops over rank-1/rank-2 tensors. Every op takes the tape as
// its first argument; pass nullptr to evaluate without recording. Ops are
// instantiated for float and double.
namespace molformer::nn {

/// op(a) * op(b) where op transposes when the flag is set.
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

/// x * w^T + bias, with x [n, in], w [out, in], bias [out] (may be undefined).
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

/// Adds a length-m vector to every row of an [n, m] tensor.
template <typename T>
Tensor<T> add_row_vector(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& row);

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& x, T value);

/// Row i of x multiplied by s[i]; s has one entry per row.
template <typename T>
Tensor<T> scale_rows(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s);

/// Row i of x divided by d[i].
template <typename T>
Tensor<T> divide_rows(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& d);

/// Zeroes rows whose mask entry is 0. The mask is data, not a parameter.
template <typename T>
Tensor<T> mask_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> mask);

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x);

/// [n, m] -> [1, m] column sums.
template <typename T>
Tensor<T> column_sum(Tape<T>* tape, const Tensor<T>& x);

/// Exact-CDF GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

/// elu(x) + 1, strictly positive.
template <typename T>
Tensor<T> elu_plus_one(Tape<T>* tape, const Tensor<T>& x);

/// Row-wise softmax with max subtraction. Columns with key_mask 0 get weight 0;
/// an empty key_mask means all columns are real. Throws AllMasked when a row
/// has no real column.
template <typename T>
Tensor<T> softmax_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> key_mask = {});

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// Inverted dropout. Returns x itself (same storage) when not training or p == 0.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, T p, std::uint64_t seed, bool training);

/// Rows of `table` selected by ids.
template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, std::span<const TokenId> ids);

/// Mean negative log-likelihood over rows with loss_mask == 1.
/// Throws EmptyLossMask when no row is selected.
template <typename T>
Tensor<T> cross_entropy_masked(Tape<T>* tape, const Tensor<T>& logits, std::span<const TokenId> labels,
                               std::span<const std::uint8_t> loss_mask);

/// Mean squared error over all entries.
template <typename T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& prediction, const Tensor<T>& target);

/// Mean over rows with mask == 1; returns [1, m].
template <typename T>
Tensor<T> masked_mean_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> mask);

/// Rectangular block [row0, row0+nrows) x [col0, col0+ncols).
template <typename T>
Tensor<T> slice(Tape<T>* tape, const Tensor<T>& x, std::size_t row0, std::size_t nrows, std::size_t col0,
                std::size_t ncols);

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> concat_rows(Tape<T>* tape, const std::vector<Tensor<T>>& parts);

/// Raises NonFinite when any value is NaN/Inf and checked mode is on.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

}  // namespace molformer::nn
