// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>

#include "molformer/rng.hpp"

namespace molformer::nn {

namespace {

std::atomic<bool> g_checked{false};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// c += op(a) * op(b); a is stored [ar, ac], b is stored [br, bc].
template <typename T>
void gemm_acc(const T* a, std::size_t ar, std::size_t ac, bool ta, const T* b, std::size_t br, std::size_t bc,
              bool tb, T* c) {
  ConstMap<T> A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
  ConstMap<T> B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
  const auto n = static_cast<Eigen::Index>(ta ? ac : ar);
  const auto m = static_cast<Eigen::Index>(tb ? br : bc);
  MutMap<T> C(c, n, m);
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename T>
Tensor<T> like(const Tensor<T>& x) {
  return Tensor<T>(x.shape());
}

template <typename T>
void mark_output(Tensor<T>& out, const char* op) {
  check_finite(out, op);
}

// Elementwise unary op with derivative f'(x) evaluated from the input.
template <typename T, typename F, typename D>
Tensor<T> unary(Tape<T>* tape, const Tensor<T>& x, F f, D df, const char* name) {
  Tensor<T> out = like(x);
  const T* xs = x.data();
  T* ys = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) ys[i] = f(xs[i]);
  mark_output(out, name);
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, df]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      const T* xs = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xs[i]);
    });
  }
  return out;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void set_checked_mode(bool enabled) { g_checked.store(enabled); }
bool checked_mode() { return g_checked.load(); }

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!checked_mode()) return;
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const std::size_t inner_a = transpose_a ? ar : ac;
  const std::size_t inner_b = transpose_b ? bc : br;
  require(inner_a == inner_b, "matmul inner dims differ: " + shape_string(a.shape()) + " x " +
                                  shape_string(b.shape()));
  const std::size_t n = transpose_a ? ac : ar;
  const std::size_t m = transpose_b ? br : bc;
  Tensor<T> out(Shape{n, m});
  gemm_acc(a.data(), ar, ac, transpose_a, b.data(), br, bc, transpose_b, out.raw());
  mark_output(out, "matmul");
  if (needs_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out, transpose_a, transpose_b, ar, ac, br, bc, n, m]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad().data();
        if (!transpose_a) gemm_acc(g, n, m, false, b.data(), br, bc, !transpose_b, ga);
        else gemm_acc(b.data(), br, bc, transpose_b, g, n, m, true, ga);
      }
      if (b.requires_grad()) {
        T* gb = b.grad().data();
        if (!transpose_b) gemm_acc(a.data(), ar, ac, !transpose_a, g, n, m, false, gb);
        else gemm_acc(g, n, m, true, a.data(), ar, ac, transpose_a, gb);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  Tensor<T> y = matmul(tape, x, w, false, true);
  if (!bias.defined()) return y;
  return add_row_vector(tape, y, bias);
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.size() == b.size(), "add shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a[i] + b[i];
  mark_output(out, "add");
  if (needs_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_row_vector(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& row) {
  const std::size_t n = x.rows(), m = x.cols();
  require(row.size() == m, "row vector of size " + std::to_string(row.size()) + " for " + shape_string(x.shape()));
  Tensor<T> out = like(x);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.raw()[i * m + j] = x[i * m + j] + row[j];
  mark_output(out, "add_row_vector");
  if (needs_grad(tape, {&x, &row})) {
    out.set_requires_grad(true);
    tape->record({x, row}, out, [x, row, out, n, m]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = row.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.size() == b.size(), "mul shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a[i] * b[i];
  mark_output(out, "mul");
  if (needs_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
  return unary<T>(
      tape, x, [factor](T v) { return v * factor; }, [factor](T) { return factor; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& x, T value) {
  return unary<T>(
      tape, x, [value](T v) { return v + value; }, [](T) { return T(1); }, "add_scalar");
}

template <typename T>
Tensor<T> scale_rows(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
  const std::size_t n = x.rows(), m = x.cols();
  require(s.size() == n, "scale_rows needs " + std::to_string(n) + " factors, got " + std::to_string(s.size()));
  Tensor<T> out = like(x);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.raw()[i * m + j] = x[i * m + j] * s[i];
  mark_output(out, "scale_rows");
  if (needs_grad(tape, {&x, &s})) {
    out.set_requires_grad(true);
    tape->record({x, s}, out, [x, s, out, n, m]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] * s[i];
      }
      if (s.requires_grad()) {
        auto gs = s.grad();
        for (std::size_t i = 0; i < n; ++i) {
          T acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * x[i * m + j];
          gs[i] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> divide_rows(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& d) {
  const std::size_t n = x.rows(), m = x.cols();
  require(d.size() == n, "divide_rows needs " + std::to_string(n) + " divisors, got " + std::to_string(d.size()));
  Tensor<T> out = like(x);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.raw()[i * m + j] = x[i * m + j] / d[i];
  mark_output(out, "divide_rows");
  if (needs_grad(tape, {&x, &d})) {
    out.set_requires_grad(true);
    tape->record({x, d}, out, [x, d, out, n, m]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] / d[i];
      }
      if (d.requires_grad()) {
        auto gd = d.grad();
        for (std::size_t i = 0; i < n; ++i) {
          T acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * x[i * m + j];
          gd[i] -= acc / (d[i] * d[i]);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mask_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  const std::size_t n = x.rows(), m = x.cols();
  require(mask.size() == n, "mask_rows needs " + std::to_string(n) + " mask entries");
  Tensor<T> factors(Shape{n});
  for (std::size_t i = 0; i < n; ++i) factors.raw()[i] = mask[i] ? T(1) : T(0);
  (void)m;
  return scale_rows(tape, x, factors);
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  mark_output(out, "sum");
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> column_sum(Tape<T>* tape, const Tensor<T>& x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor<T> out(Shape{1, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.raw()[j] += x[i * m + j];
  mark_output(out, "column_sum");
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, n, m]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return unary<T>(
      tape, x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      },
      "gelu");
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  return unary<T>(
      tape, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
Tensor<T> elu_plus_one(Tape<T>* tape, const Tensor<T>& x) {
  return unary<T>(
      tape, x, [](T v) { return v > T(0) ? v + T(1) : std::exp(v); },
      [](T v) { return v > T(0) ? T(1) : std::exp(v); }, "elu_plus_one");
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> key_mask) {
  const std::size_t n = x.rows(), m = x.cols();
  require(key_mask.empty() || key_mask.size() == m, "softmax key mask length mismatch");
  auto real = [&](std::size_t j) { return key_mask.empty() || key_mask[j] != 0; };
  Tensor<T> out = like(x);
  for (std::size_t i = 0; i < n; ++i) {
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (real(j)) peak = std::max(peak, x[i * m + j]);
    if (peak == -std::numeric_limits<T>::infinity())
      throw Error(ErrorCode::kAllMasked, "softmax row " + std::to_string(i) + " has no unmasked entries");
    T total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const T e = real(j) ? std::exp(x[i * m + j] - peak) : T(0);
      out.raw()[i * m + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < m; ++j) out.raw()[i * m + j] /= total;
  }
  mark_output(out, "softmax_rows");
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, n, m]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * out[i * m + j];
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += out[i * m + j] * (g[i * m + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t n = x.rows(), m = x.cols();
  require(gain.size() == m && bias.size() == m, "layer_norm affine size mismatch for " + shape_string(x.shape()));
  Tensor<T> out = like(x);
  std::vector<T> normalized(x.size());
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += x[i * m + j];
    mean /= static_cast<T>(m);
    T var = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const T d = x[i * m + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      const T h = (x[i * m + j] - mean) * inv_std[i];
      normalized[i * m + j] = h;
      out.raw()[i * m + j] = h * gain[j] + bias[j];
    }
  }
  mark_output(out, "layer_norm");
  if (needs_grad(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape->record({x, gain, bias}, out,
                 [x, gain, bias, out, n, m, normalized = std::move(normalized),
                  inv_std = std::move(inv_std)]() mutable {
                   auto g = out.grad();
                   if (gain.requires_grad()) {
                     auto gg = gain.grad();
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < m; ++j) gg[j] += g[i * m + j] * normalized[i * m + j];
                   }
                   if (bias.requires_grad()) {
                     auto gb = bias.grad();
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
                   }
                   if (x.requires_grad()) {
                     auto gx = x.grad();
                     const T inv_m = T(1) / static_cast<T>(m);
                     for (std::size_t i = 0; i < n; ++i) {
                       T mean_dh = 0, mean_dh_h = 0;
                       for (std::size_t j = 0; j < m; ++j) {
                         const T dh = g[i * m + j] * gain[j];
                         mean_dh += dh;
                         mean_dh_h += dh * normalized[i * m + j];
                       }
                       mean_dh *= inv_m;
                       mean_dh_h *= inv_m;
                       for (std::size_t j = 0; j < m; ++j) {
                         const T dh = g[i * m + j] * gain[j];
                         gx[i * m + j] += inv_std[i] * (dh - mean_dh - normalized[i * m + j] * mean_dh_h);
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& x, T p, std::uint64_t seed, bool training) {
  if (!training || p <= T(0)) return x;
  if (p >= T(1)) throw Error(ErrorCode::kConfig, "dropout probability must be below 1");
  Rng rng(seed);
  std::vector<T> keep(x.size());
  const T scale_kept = T(1) / (T(1) - p);
  for (auto& k : keep) k = rng.uniform() < static_cast<double>(p) ? T(0) : scale_kept;
  Tensor<T> factors(x.shape(), std::move(keep));
  return mul(tape, x, factors);
}

template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, std::span<const TokenId> ids) {
  const std::size_t vocab = table.rows(), h = table.cols();
  Tensor<T> out(Shape{ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw Error(ErrorCode::kIdOverflow, "id " + std::to_string(ids[i]) + " outside table of " +
                                              std::to_string(vocab) + " rows");
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * h, h, out.raw() + i * h);
  }
  mark_output(out, "embedding");
  if (needs_grad(tape, {&table})) {
    out.set_requires_grad(true);
    std::vector<TokenId> saved(ids.begin(), ids.end());
    tape->record({table}, out, [table, out, h, saved = std::move(saved)]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < h; ++j) gt[static_cast<std::size_t>(saved[i]) * h + j] += g[i * h + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy_masked(Tape<T>* tape, const Tensor<T>& logits, std::span<const TokenId> labels,
                               std::span<const std::uint8_t> loss_mask) {
  const std::size_t n = logits.rows(), v = logits.cols();
  require(labels.size() == n && loss_mask.size() == n, "cross_entropy label/mask length mismatch");
  std::size_t selected = 0;
  for (auto b : loss_mask) selected += b ? 1 : 0;
  if (selected == 0) throw Error(ErrorCode::kEmptyLossMask, "no position selected for the loss");
  std::vector<T> probs;
  probs.reserve(selected * v);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!loss_mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= v)
      throw Error(ErrorCode::kIdOverflow, "label " + std::to_string(labels[i]) + " outside " + std::to_string(v) +
                                              " classes");
    const T* row = logits.data() + i * v;
    const T peak = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - peak);
    const T log_z = std::log(z) + peak;
    total += log_z - row[labels[i]];
    for (std::size_t j = 0; j < v; ++j) probs.push_back(std::exp(row[j] - log_z));
  }
  const T inv = T(1) / static_cast<T>(selected);
  Tensor<T> out = Tensor<T>::scalar(total * inv);
  mark_output(out, "cross_entropy_masked");
  if (needs_grad(tape, {&logits})) {
    out.set_requires_grad(true);
    std::vector<TokenId> saved_labels(labels.begin(), labels.end());
    std::vector<std::uint8_t> saved_mask(loss_mask.begin(), loss_mask.end());
    tape->record({logits}, out,
                 [logits, out, n, v, inv, probs = std::move(probs), saved_labels = std::move(saved_labels),
                  saved_mask = std::move(saved_mask)]() mutable {
                   const T g = out.grad()[0] * inv;
                   auto gl = logits.grad();
                   std::size_t k = 0;
                   for (std::size_t i = 0; i < n; ++i) {
                     if (!saved_mask[i]) continue;
                     for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[k * v + j];
                     gl[i * v + static_cast<std::size_t>(saved_labels[i])] -= g;
                     ++k;
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& prediction, const Tensor<T>& target) {
  require(prediction.size() == target.size(), "mse_loss size mismatch");
  const std::size_t n = prediction.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = prediction[i] - target[i];
    total += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  mark_output(out, "mse_loss");
  if (needs_grad(tape, {&prediction, &target})) {
    out.set_requires_grad(true);
    tape->record({prediction, target}, out, [prediction, target, out, n]() mutable {
      const T g = out.grad()[0] * T(2) / static_cast<T>(n);
      if (prediction.requires_grad()) {
        auto gp = prediction.grad();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g * (prediction[i] - target[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.grad();
        for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (prediction[i] - target[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> masked_mean_rows(Tape<T>* tape, const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  const std::size_t n = x.rows(), m = x.cols();
  require(mask.size() == n, "masked_mean_rows mask length mismatch");
  std::size_t count = 0;
  for (auto b : mask) count += b ? 1 : 0;
  if (count == 0) throw Error(ErrorCode::kAllMasked, "mean over zero rows");
  const T inv = T(1) / static_cast<T>(count);
  Tensor<T> out(Shape{1, m});
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < m; ++j) out.raw()[j] += x[i * m + j];
  }
  for (std::size_t j = 0; j < m; ++j) out.raw()[j] *= inv;
  mark_output(out, "masked_mean_rows");
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    tape->record({x}, out, [x, out, n, m, inv, saved = std::move(saved)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (!saved[i]) continue;
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j] * inv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>* tape, const Tensor<T>& x, std::size_t row0, std::size_t nrows, std::size_t col0,
                std::size_t ncols) {
  const std::size_t m = x.cols();
  require(row0 + nrows <= x.rows() && col0 + ncols <= m, "slice out of bounds for " + shape_string(x.shape()));
  Tensor<T> out(Shape{nrows, ncols});
  for (std::size_t i = 0; i < nrows; ++i)
    std::copy_n(x.data() + (row0 + i) * m + col0, ncols, out.raw() + i * ncols);
  if (needs_grad(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, row0, nrows, col0, ncols, m]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < nrows; ++i)
        for (std::size_t j = 0; j < ncols; ++j) gx[(row0 + i) * m + col0 + j] += g[i * ncols + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require(p.rows() == n, "concat_cols row mismatch");
    total += p.cols();
    grad = grad || p.requires_grad();
  }
  Tensor<T> out(Shape{n, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(p.data() + i * c, c, out.raw() + i * total + offset);
    offset += c;
  }
  if (tape != nullptr && grad) {
    out.set_requires_grad(true);
    tape->record(parts, out, [parts, out, n, total]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + offset + j];
        }
        offset += c;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const std::size_t m = parts[0].cols();
  std::size_t total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require(p.cols() == m, "concat_rows column mismatch");
    total += p.rows();
    grad = grad || p.requires_grad();
  }
  Tensor<T> out(Shape{total, m});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.size(), out.raw() + offset * m);
    offset += p.rows();
  }
  if (tape != nullptr && grad) {
    out.set_requires_grad(true);
    tape->record(parts, out, [parts, out, m]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset * m + i];
        }
        offset += p.rows();
      }
    });
  }
  return out;
}

#define MOLFORMER_INSTANTIATE_OPS(T)                                                                         \
  template void check_finite<T>(const Tensor<T>&, const char*);                                              \
  template Tensor<T> matmul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, bool, bool);                    \
  template Tensor<T> linear<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> add_row_vector<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar<T>(Tape<T>*, const Tensor<T>&, T);                                           \
  template Tensor<T> scale_rows<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> divide_rows<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mask_rows<T>(Tape<T>*, const Tensor<T>&, std::span<const std::uint8_t>);                \
  template Tensor<T> sum<T>(Tape<T>*, const Tensor<T>&);                                                     \
  template Tensor<T> column_sum<T>(Tape<T>*, const Tensor<T>&);                                              \
  template Tensor<T> gelu<T>(Tape<T>*, const Tensor<T>&);                                                    \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                                    \
  template Tensor<T> elu_plus_one<T>(Tape<T>*, const Tensor<T>&);                                            \
  template Tensor<T> softmax_rows<T>(Tape<T>*, const Tensor<T>&, std::span<const std::uint8_t>);             \
  template Tensor<T> layer_norm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> dropout<T>(Tape<T>*, const Tensor<T>&, T, std::uint64_t, bool);                         \
  template Tensor<T> embedding<T>(Tape<T>*, const Tensor<T>&, std::span<const TokenId>);                     \
  template Tensor<T> cross_entropy_masked<T>(Tape<T>*, const Tensor<T>&, std::span<const TokenId>,           \
                                             std::span<const std::uint8_t>);                                 \
  template Tensor<T> mse_loss<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> masked_mean_rows<T>(Tape<T>*, const Tensor<T>&, std::span<const std::uint8_t>);         \
  template Tensor<T> slice<T>(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> concat_cols<T>(Tape<T>*, const std::vector<Tensor<T>>&);                                \
  template Tensor<T> concat_rows<T>(Tape<T>*, const std::vector<Tensor<T>>&);

MOLFORMER_INSTANTIATE_OPS(float)
MOLFORMER_INSTANTIATE_OPS(double)

}  // namespace molformer::nn
