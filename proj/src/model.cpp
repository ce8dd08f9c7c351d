// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/model.hpp"

#include <cmath>

#include "molformer/errors.hpp"
#include "molformer/kv.hpp"
#include "molformer/rng.hpp"

namespace molformer::model {

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
Tensor<T> normal_tensor(nn::Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<T>(rng.normal() * kInitStd);
  return t;
}

template <typename T>
Tensor<T> filled(nn::Shape shape, T value) {
  return Tensor<T>(std::move(shape), value);
}

template <typename T>
Tensor<T> deep_copy(const Tensor<T>& t) {
  if (!t.defined()) return t;
  Tensor<T> c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

}  // namespace

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::xl() {
  EncoderConfig c;
  c.layers = 12;
  c.heads = 12;
  c.hidden = 768;
  c.feedforward = 3072;
  return c;
}

void EncoderConfig::validate() const {
  std::vector<std::string> problems;
  if (layers == 0) problems.push_back("layers must be positive");
  if (heads == 0 || hidden == 0 || hidden % heads != 0) problems.push_back("hidden must be divisible by heads");
  else if (head_dim() % 2 != 0) problems.push_back("head dimension must be even for rotary embeddings");
  if (feedforward == 0) problems.push_back("feedforward must be positive");
  if (vocab_size <= special::kCount) problems.push_back("vocab_size must exceed the 5 special tokens");
  if (feature_dim == 0 || feature_dim % 2 != 0) problems.push_back("feature_dim must be even and positive");
  if (dropout < 0.0 || dropout >= 1.0) problems.push_back("dropout must be in [0, 1)");
  if (max_positions == 0) problems.push_back("max_positions must be positive");
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
    throw Error(ErrorCode::kConfig, msg);
  }
}

std::map<std::string, std::string> EncoderConfig::to_pairs() const {
  return {
      {"model.layers", std::to_string(layers)},
      {"model.heads", std::to_string(heads)},
      {"model.hidden", std::to_string(hidden)},
      {"model.feedforward", std::to_string(feedforward)},
      {"model.variant", std::string(attn::variant_name(variant))},
      {"model.dropout", kv::format(dropout)},
      {"model.max_positions", std::to_string(max_positions)},
      {"model.vocab_size", std::to_string(vocab_size)},
      {"model.feature_dim", std::to_string(feature_dim)},
      {"model.scale_scores", scale_scores ? "true" : "false"},
      {"model.feature_kernel", std::string(attn::kernel_name(feature_kernel))},
      {"model.rotary_base", kv::format(rotary_base)},
      {"model.layer_norm_eps", kv::format(layer_norm_eps)},
      {"model.seed", std::to_string(seed)},
  };
}

EncoderConfig EncoderConfig::from_pairs(const std::map<std::string, std::string>& pairs) {
  EncoderConfig c;
  c.layers = kv::get_u64(pairs, "model.layers", c.layers);
  c.heads = kv::get_u64(pairs, "model.heads", c.heads);
  c.hidden = kv::get_u64(pairs, "model.hidden", c.hidden);
  c.feedforward = kv::get_u64(pairs, "model.feedforward", c.feedforward);
  if (auto it = pairs.find("model.variant"); it != pairs.end()) c.variant = attn::parse_variant(it->second);
  c.dropout = kv::get_double(pairs, "model.dropout", c.dropout);
  c.max_positions = kv::get_u64(pairs, "model.max_positions", c.max_positions);
  c.vocab_size = kv::get_u64(pairs, "model.vocab_size", c.vocab_size);
  c.feature_dim = kv::get_u64(pairs, "model.feature_dim", c.feature_dim);
  c.scale_scores = kv::get_bool(pairs, "model.scale_scores", c.scale_scores);
  if (auto it = pairs.find("model.feature_kernel"); it != pairs.end())
    c.feature_kernel = attn::parse_kernel(it->second);
  c.rotary_base = kv::get_double(pairs, "model.rotary_base", c.rotary_base);
  c.layer_norm_eps = kv::get_double(pairs, "model.layer_norm_eps", c.layer_norm_eps);
  c.seed = kv::get_u64(pairs, "model.seed", c.seed);
  return c;
}

template <typename T>
Encoder<T>::Encoder(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t h = config_.hidden, f = config_.feedforward, v = config_.vocab_size;
  std::uint64_t stream = 0;
  auto next_rng = [&] { return Rng(derive_seed(config_.seed, {0x1a17, stream++})); };
  {
    Rng rng = next_rng();
    token_embedding_ = normal_tensor<T>({v, h}, rng);
  }
  {
    Rng rng = next_rng();
    if (config_.variant == AttentionVariant::kFullAbsolute)
      position_embedding_ = normal_tensor<T>({config_.max_positions, h}, rng);
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Rng rng = next_rng();
    LayerWeights<T> w;
    w.ln1_gain = filled<T>({h}, T(1));
    w.ln1_bias = filled<T>({h}, T(0));
    w.wq = normal_tensor<T>({h, h}, rng);
    w.bq = filled<T>({h}, T(0));
    w.wk = normal_tensor<T>({h, h}, rng);
    w.bk = filled<T>({h}, T(0));
    w.wv = normal_tensor<T>({h, h}, rng);
    w.bv = filled<T>({h}, T(0));
    w.wo = normal_tensor<T>({h, h}, rng);
    w.bo = filled<T>({h}, T(0));
    w.ln2_gain = filled<T>({h}, T(1));
    w.ln2_bias = filled<T>({h}, T(0));
    w.w1 = normal_tensor<T>({f, h}, rng);
    w.b1 = filled<T>({f}, T(0));
    w.w2 = normal_tensor<T>({h, f}, rng);
    w.b2 = filled<T>({h}, T(0));
    layers_.push_back(std::move(w));
    feature_maps_.push_back(std::make_unique<attn::FeatureMap<T>>(
        config_.head_dim(), config_.feature_dim, derive_seed(config_.seed, {0xfea7, l}), config_.feature_kernel));
  }
  final_gain_ = filled<T>({h}, T(1));
  final_bias_ = filled<T>({h}, T(0));
  {
    Rng rng = next_rng();
    mlm_weight_ = normal_tensor<T>({v, h}, rng);
  }
  mlm_bias_ = filled<T>({v}, T(0));
  head_rotation_ =
      std::make_unique<attn::RotationSchedule<T>>(config_.head_dim(), config_.max_positions, config_.rotary_base);
  feature_rotation_ =
      std::make_unique<attn::RotationSchedule<T>>(config_.feature_dim, config_.max_positions, config_.rotary_base);
  set_requires_grad(true);
}

template <typename T>
Encoder<T> Encoder<T>::clone() const {
  Encoder<T> copy(config_);
  const auto src = all_named();
  const auto dst = copy.all_named();
  for (std::size_t i = 0; i < src.size(); ++i) copy.assign(dst[i].name, src[i].tensor.values());
  for (std::size_t l = 0; l < feature_maps_.size(); ++l)
    copy.feature_maps_[l] = std::make_unique<attn::FeatureMap<T>>(deep_copy(feature_maps_[l]->projection()),
                                                                  feature_maps_[l]->kernel());
  return copy;
}

template <typename T>
std::vector<NamedTensor<T>> Encoder<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"token_embedding", token_embedding_});
  if (position_embedding_.defined()) out.push_back({"position_embedding", position_embedding_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", w.ln1_gain});
    out.push_back({p + "ln1.bias", w.ln1_bias});
    out.push_back({p + "attention.wq", w.wq});
    out.push_back({p + "attention.bq", w.bq});
    out.push_back({p + "attention.wk", w.wk});
    out.push_back({p + "attention.bk", w.bk});
    out.push_back({p + "attention.wv", w.wv});
    out.push_back({p + "attention.bv", w.bv});
    out.push_back({p + "attention.wo", w.wo});
    out.push_back({p + "attention.bo", w.bo});
    out.push_back({p + "ln2.gain", w.ln2_gain});
    out.push_back({p + "ln2.bias", w.ln2_bias});
    out.push_back({p + "ffn.w1", w.w1});
    out.push_back({p + "ffn.b1", w.b1});
    out.push_back({p + "ffn.w2", w.w2});
    out.push_back({p + "ffn.b2", w.b2});
  }
  out.push_back({"final_ln.gain", final_gain_});
  out.push_back({"final_ln.bias", final_bias_});
  out.push_back({"mlm.weight", mlm_weight_});
  out.push_back({"mlm.bias", mlm_bias_});
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Encoder<T>::buffers() const {
  std::vector<NamedTensor<T>> out;
  for (std::size_t l = 0; l < feature_maps_.size(); ++l)
    out.push_back({"layers." + std::to_string(l) + ".attention.feature_projection", feature_maps_[l]->projection()});
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Encoder<T>::all_named() const {
  auto out = parameters();
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

template <typename T>
void Encoder<T>::set_requires_grad(bool value) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(value);
}

template <typename T>
void Encoder<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
void Encoder<T>::set_variant(AttentionVariant variant) {
  if (variant == AttentionVariant::kFullAbsolute && !position_embedding_.defined())
    throw Error(ErrorCode::kConfig, "encoder has no absolute position table; cannot switch to full_absolute");
  config_.variant = variant;
}

template <typename T>
void Encoder<T>::assign(const std::string& name, std::span<const T> values) {
  for (auto& nt : all_named()) {
    if (nt.name != name) continue;
    if (nt.tensor.size() != values.size())
      throw Error(ErrorCode::kDimMismatch, "tensor " + name + " holds " + std::to_string(nt.tensor.size()) +
                                               " values, got " + std::to_string(values.size()));
    auto dst = nt.tensor.mutable_values();
    std::copy(values.begin(), values.end(), dst.begin());
    return;
  }
  throw Error(ErrorCode::kCheckpointFormat, "encoder has no tensor named " + name);
}

template <typename T>
attn::AttentionContext<T> Encoder<T>::attention_context(std::size_t layer) const {
  attn::AttentionContext<T> ctx;
  ctx.variant = config_.variant;
  ctx.head_rotation = head_rotation_.get();
  ctx.feature_rotation = feature_rotation_.get();
  ctx.feature_map = feature_maps_.at(layer).get();
  ctx.scale_scores = config_.scale_scores;
  return ctx;
}

template <typename T>
Tensor<T> Encoder<T>::embed_tokens(Tape<T>* tape, std::span<const TokenId> ids, std::size_t rows, std::size_t width,
                                   const ForwardOptions& options) const {
  if (ids.size() != rows * width)
    throw Error(ErrorCode::kDimMismatch, std::to_string(ids.size()) + " ids for a " + std::to_string(rows) + "x" +
                                             std::to_string(width) + " batch");
  if (options.position_offset < 0 ||
      width + static_cast<std::size_t>(options.position_offset) > config_.max_positions)
    throw Error(ErrorCode::kPositionOverflow, "positions up to " +
                                                  std::to_string(width + options.position_offset) +
                                                  " exceed max_positions " + std::to_string(config_.max_positions));
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw Error(ErrorCode::kIdOverflow, "token id " + std::to_string(id) + " outside vocabulary of " +
                                              std::to_string(config_.vocab_size));
  }
  Tensor<T> x = nn::embedding(tape, token_embedding_, ids);
  if (config_.variant == AttentionVariant::kFullAbsolute) {
    std::vector<TokenId> positions(rows * width);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c)
        positions[r * width + c] = static_cast<TokenId>(c + static_cast<std::size_t>(options.position_offset));
    x = nn::add(tape, x, nn::embedding(tape, position_embedding_, positions));
  }
  return nn::dropout(tape, x, static_cast<T>(config_.dropout), derive_seed(options.dropout_seed, {0xe0}),
                     options.training);
}

template <typename T>
Tensor<T> Encoder<T>::run_layers(Tape<T>* tape, Tensor<T> x, std::span<const std::uint8_t> padding_mask,
                                 std::size_t rows, std::size_t width, const ForwardOptions& options,
                                 std::vector<Tensor<T>>* trace) const {
  const std::size_t heads = config_.heads, hd = config_.head_dim();
  const T p = static_cast<T>(config_.dropout);
  const T eps = static_cast<T>(config_.layer_norm_eps);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l];
    const auto ctx = attention_context(l);
    const Tensor<T> normed = nn::layer_norm(tape, x, w.ln1_gain, w.ln1_bias, eps);
    if (trace) trace->push_back(normed);
    const Tensor<T> q = nn::linear(tape, normed, w.wq, w.bq);
    const Tensor<T> k = nn::linear(tape, normed, w.wk, w.bk);
    const Tensor<T> v = nn::linear(tape, normed, w.wv, w.bv);
    std::vector<Tensor<T>> row_outputs;
    row_outputs.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto key_mask = padding_mask.subspan(r * width, width);
      std::vector<Tensor<T>> head_outputs;
      head_outputs.reserve(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        head_outputs.push_back(attn::attend(tape, ctx, nn::slice(tape, q, r * width, width, hh * hd, hd),
                                            nn::slice(tape, k, r * width, width, hh * hd, hd),
                                            nn::slice(tape, v, r * width, width, hh * hd, hd), key_mask,
                                            options.position_offset));
      }
      row_outputs.push_back(heads == 1 ? head_outputs[0] : nn::concat_cols(tape, head_outputs));
    }
    const Tensor<T> attended = rows == 1 ? row_outputs[0] : nn::concat_rows(tape, row_outputs);
    Tensor<T> projected = nn::linear(tape, attended, w.wo, w.bo);
    projected = nn::dropout(tape, projected, p, derive_seed(options.dropout_seed, {l, 1}), options.training);
    x = nn::add(tape, x, projected);

    const Tensor<T> normed2 = nn::layer_norm(tape, x, w.ln2_gain, w.ln2_bias, eps);
    Tensor<T> ff = nn::linear(tape, nn::gelu(tape, nn::linear(tape, normed2, w.w1, w.b1)), w.w2, w.b2);
    ff = nn::dropout(tape, ff, p, derive_seed(options.dropout_seed, {l, 2}), options.training);
    x = nn::add(tape, x, ff);
  }
  return nn::layer_norm(tape, x, final_gain_, final_bias_, eps);
}

template <typename T>
Tensor<T> Encoder<T>::encode(Tape<T>* tape, std::span<const TokenId> ids, std::span<const std::uint8_t> padding_mask,
                             std::size_t rows, std::size_t width, const ForwardOptions& options) const {
  if (padding_mask.size() != rows * width)
    throw Error(ErrorCode::kDimMismatch, "padding mask does not match batch shape");
  Tensor<T> x = embed_tokens(tape, ids, rows, width, options);
  return run_layers(tape, std::move(x), padding_mask, rows, width, options, nullptr);
}

template <typename T>
Tensor<T> Encoder<T>::encode(Tape<T>* tape, const MaskedBatch& batch, const ForwardOptions& options) const {
  return encode(tape, batch.inputs, batch.padding_mask, batch.rows, batch.width, options);
}

template <typename T>
Tensor<T> Encoder<T>::encode(Tape<T>* tape, const TokenMatrix& batch, const ForwardOptions& options) const {
  return encode(tape, batch.ids, batch.mask, batch.rows, batch.width, options);
}

template <typename T>
Tensor<T> Encoder<T>::mlm_logits(Tape<T>* tape, const Tensor<T>& hidden) const {
  return nn::linear(tape, hidden, mlm_weight_, mlm_bias_);
}

template <typename T>
Tensor<T> Encoder<T>::mlm_loss(Tape<T>* tape, const MaskedBatch& batch, const ForwardOptions& options) const {
  const Tensor<T> hidden = encode(tape, batch, options);
  return nn::cross_entropy_masked(tape, mlm_logits(tape, hidden), batch.labels, batch.loss_mask);
}

template <typename T>
Tensor<T> Encoder<T>::embed(Tape<T>* tape, const TokenMatrix& batch, const ForwardOptions& options) const {
  const Tensor<T> hidden = encode(tape, batch, options);
  std::vector<Tensor<T>> pooled;
  pooled.reserve(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto mask = std::span<const std::uint8_t>(batch.mask).subspan(r * batch.width, batch.width);
    pooled.push_back(nn::masked_mean_rows(tape, nn::slice(tape, hidden, r * batch.width, batch.width, 0,
                                                          config_.hidden),
                                          mask));
  }
  return batch.rows == 1 ? pooled[0] : nn::concat_rows(tape, pooled);
}

template <typename T>
std::vector<T> Encoder<T>::embed_molecule(const TokenSequence& sequence) const {
  const TokenMatrix m = pad_sequences(std::span<const TokenSequence>(&sequence, 1));
  const Tensor<T> e = embed(nullptr, m);
  return std::vector<T>(e.values().begin(), e.values().end());
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::attention_inputs(const TokenSequence& sequence) const {
  const TokenMatrix m = pad_sequences(std::span<const TokenSequence>(&sequence, 1));
  std::vector<Tensor<T>> trace;
  ForwardOptions options;
  Tensor<T> x = embed_tokens(nullptr, m.ids, 1, m.width, options);
  run_layers(nullptr, std::move(x), m.mask, 1, m.width, options, &trace);
  return trace;
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::attention_maps(const TokenSequence& sequence, std::size_t max_length) const {
  if (sequence.length() > max_length)
    throw Error(ErrorCode::kSequenceTooLongForAnalysis, "sequence of " + std::to_string(sequence.length()) +
                                                            " tokens exceeds analysis cap " +
                                                            std::to_string(max_length));
  const auto inputs = attention_inputs(sequence);
  const std::vector<std::uint8_t> mask(sequence.length(), 1);
  std::vector<Tensor<T>> maps;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l];
    const Tensor<T> q = nn::linear<T>(nullptr, inputs[l], w.wq, w.bq);
    const Tensor<T> k = nn::linear<T>(nullptr, inputs[l], w.wk, w.bk);
    maps.push_back(attn::pooled_attention_map(attention_context(l), q, k, config_.heads, mask, max_length));
  }
  return maps;
}

template <typename T>
FinetuneHead<T>::FinetuneHead(HeadConfig config) : config_(config) {
  if (config_.input_dim == 0 || config_.hidden == 0 || config_.outputs == 0)
    throw Error(ErrorCode::kConfig, "head dimensions must be positive");
  Rng rng(derive_seed(config_.seed, {0x4ead}));
  w1_ = normal_tensor<T>({config_.hidden, config_.input_dim}, rng);
  b1_ = filled<T>({config_.hidden}, T(0));
  w2_ = normal_tensor<T>({config_.outputs, config_.hidden}, rng);
  b2_ = filled<T>({config_.outputs}, T(0));
  for (auto& p : parameters()) p.tensor.set_requires_grad(true);
}

template <typename T>
Tensor<T> FinetuneHead<T>::forward(Tape<T>* tape, const Tensor<T>& x, bool training,
                                   std::uint64_t dropout_seed) const {
  if (x.cols() != config_.input_dim)
    throw Error(ErrorCode::kDimMismatch, "head expects input width " + std::to_string(config_.input_dim) + ", got " +
                                             std::to_string(x.cols()));
  Tensor<T> h = nn::gelu(tape, nn::linear(tape, x, w1_, b1_));
  h = nn::dropout(tape, h, static_cast<T>(config_.dropout), dropout_seed, training);
  return nn::linear(tape, h, w2_, b2_);
}

template <typename T>
std::vector<NamedTensor<T>> FinetuneHead<T>::parameters() const {
  return {{"head.w1", w1_}, {"head.b1", b1_}, {"head.w2", w2_}, {"head.b2", b2_}};
}

template <typename T>
FinetuneHead<T> FinetuneHead<T>::clone() const {
  FinetuneHead<T> copy(config_);
  copy.w1_ = deep_copy(w1_);
  copy.b1_ = deep_copy(b1_);
  copy.w2_ = deep_copy(w2_);
  copy.b2_ = deep_copy(b2_);
  return copy;
}

template <typename T>
void FinetuneHead<T>::assign(const std::string& name, std::span<const T> values) {
  for (auto& nt : parameters()) {
    if (nt.name != name) continue;
    if (nt.tensor.size() != values.size())
      throw Error(ErrorCode::kDimMismatch, "tensor " + name + " size mismatch");
    auto dst = nt.tensor.mutable_values();
    std::copy(values.begin(), values.end(), dst.begin());
    return;
  }
  throw Error(ErrorCode::kCheckpointFormat, "head has no tensor named " + name);
}

template class Encoder<float>;
template class Encoder<double>;
template class FinetuneHead<float>;
template class FinetuneHead<double>;

}  // namespace molformer::model
