// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "molformer/attention.hpp"
#include "molformer/dataset.hpp"
#include "molformer/ops.hpp"

namespace molformer::model {

using attn::AttentionVariant;
using nn::Tape;
using nn::Tensor;

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 64;
  std::size_t feedforward = 256;
  AttentionVariant variant = AttentionVariant::kLinearRotaryModified;
  double dropout = 0.1;
  std::size_t max_positions = kMaxFramedLength;
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 32;
  bool scale_scores = true;
  attn::FeatureKernel feature_kernel = attn::FeatureKernel::kRelu;
  double rotary_base = 10000.0;
  double layer_norm_eps = 1e-5;
  std::uint64_t seed = 0;

  /// 2 layers, 2 heads, 64 hidden.
  static EncoderConfig toy();
  /// 12 layers, 12 heads, 768 hidden.
  static EncoderConfig xl();

  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;

  std::map<std::string, std::string> to_pairs() const;
  /// Reads the keys written by to_pairs(); absent keys keep their defaults.
  static EncoderConfig from_pairs(const std::map<std::string, std::string>& pairs);
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct LayerWeights {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w1, b1, w2, b2;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  /// Added to every position index; lets tests probe relative-position behaviour.
  attn::Position position_offset = 0;
};

/// Pre-layer-norm transformer encoder with an MLM projection.
///
/// Rows of a batch are independent: each row attends only over its own
/// unpadded positions. Pad positions still flow through the stack but are
/// excluded as keys. The rotation schedules and feature maps are owned here
/// and referenced by recorded tapes, so an encoder must outlive any tape that
/// ran through it.
template <typename T>
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  /// Deep copy with independent parameter storage.
  Encoder clone() const;

  const EncoderConfig& config() const { return config_; }

  /// Trainable tensors in a fixed order.
  std::vector<NamedTensor<T>> parameters() const;
  /// Frozen tensors (feature-map projections).
  std::vector<NamedTensor<T>> buffers() const;
  void set_requires_grad(bool value);
  void zero_grad();

  /// Switches among variants that share the same weights. Switching to
  /// FullAbsolute needs a position table, so only encoders built with it can.
  void set_variant(AttentionVariant variant);

  /// Final hidden states, [rows * width, hidden].
  Tensor<T> encode(Tape<T>* tape, std::span<const TokenId> ids, std::span<const std::uint8_t> padding_mask,
                   std::size_t rows, std::size_t width, const ForwardOptions& options = {}) const;
  Tensor<T> encode(Tape<T>* tape, const MaskedBatch& batch, const ForwardOptions& options = {}) const;
  Tensor<T> encode(Tape<T>* tape, const TokenMatrix& batch, const ForwardOptions& options = {}) const;

  /// Affine projection to vocabulary logits; no softmax.
  Tensor<T> mlm_logits(Tape<T>* tape, const Tensor<T>& hidden) const;

  /// Masked cross-entropy over the batch's selected positions.
  Tensor<T> mlm_loss(Tape<T>* tape, const MaskedBatch& batch, const ForwardOptions& options = {}) const;

  /// Mean of final hidden states over each row's real positions, [rows, hidden].
  /// Begin/end markers are included in the mean; padding is not.
  Tensor<T> embed(Tape<T>* tape, const TokenMatrix& batch, const ForwardOptions& options = {}) const;
  std::vector<T> embed_molecule(const TokenSequence& sequence) const;

  /// Inputs to each layer's attention (after the first layer norm), computed
  /// in eval mode for a single sequence. Entry i is [length, hidden].
  std::vector<Tensor<T>> attention_inputs(const TokenSequence& sequence) const;

  /// Head-averaged attention map per layer for one sequence.
  std::vector<Tensor<T>> attention_maps(const TokenSequence& sequence,
                                        std::size_t max_length = attn::kDefaultAnalysisCap) const;

  const LayerWeights<T>& layer(std::size_t i) const { return layers_.at(i); }
  const Tensor<T>& token_embedding() const { return token_embedding_; }
  const Tensor<T>& position_embedding() const { return position_embedding_; }
  const Tensor<T>& mlm_weight() const { return mlm_weight_; }
  const Tensor<T>& mlm_bias() const { return mlm_bias_; }
  const attn::FeatureMap<T>& feature_map(std::size_t layer) const { return *feature_maps_.at(layer); }
  attn::AttentionContext<T> attention_context(std::size_t layer) const;

  /// Replaces a named tensor's values (checkpoint loading). Shapes must match.
  void assign(const std::string& name, std::span<const T> values);

 private:
  Tensor<T> run_layers(Tape<T>* tape, Tensor<T> x, std::span<const std::uint8_t> padding_mask, std::size_t rows,
                       std::size_t width, const ForwardOptions& options, std::vector<Tensor<T>>* trace) const;
  Tensor<T> embed_tokens(Tape<T>* tape, std::span<const TokenId> ids, std::size_t rows, std::size_t width,
                         const ForwardOptions& options) const;
  std::vector<NamedTensor<T>> all_named() const;

  EncoderConfig config_;
  Tensor<T> token_embedding_;
  Tensor<T> position_embedding_;  // FullAbsolute only
  std::vector<LayerWeights<T>> layers_;
  Tensor<T> final_gain_, final_bias_;
  Tensor<T> mlm_weight_, mlm_bias_;
  std::unique_ptr<attn::RotationSchedule<T>> head_rotation_;
  std::unique_ptr<attn::RotationSchedule<T>> feature_rotation_;
  std::vector<std::unique_ptr<attn::FeatureMap<T>>> feature_maps_;
};

enum class TaskType { kRegression, kClassification };

struct HeadConfig {
  std::size_t input_dim = 64;
  std::size_t hidden = 768;
  std::size_t outputs = 1;
  double dropout = 0.1;
  std::uint64_t seed = 0;
};

/// affine -> GELU -> dropout -> affine. Regression heads emit raw values,
/// classification heads emit logits.
template <typename T>
class FinetuneHead {
 public:
  explicit FinetuneHead(HeadConfig config);

  const HeadConfig& config() const { return config_; }
  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training = false, std::uint64_t dropout_seed = 0) const;
  std::vector<NamedTensor<T>> parameters() const;
  FinetuneHead clone() const;
  void assign(const std::string& name, std::span<const T> values);

 private:
  HeadConfig config_;
  Tensor<T> w1_, b1_, w2_, b2_;
};

}  // namespace molformer::model
