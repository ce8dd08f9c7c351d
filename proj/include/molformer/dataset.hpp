// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "molformer/tokenizer.hpp"

namespace molformer {

/// Inclusive framed-length intervals and per-bucket emission thresholds.
struct BucketSpec {
  std::vector<std::pair<std::size_t, std::size_t>> intervals;
  std::vector<std::size_t> min_emit;

  /// [1,42] [43,66] [67,122] [123,202]; the last bucket waits for 50 rows.
  static BucketSpec defaults();

  std::size_t count() const { return intervals.size(); }
  /// Intervals must be sorted, disjoint and jointly cover [1, 202].
  void validate() const;

  /// Text forms used by the config file: "1-42,43-66" and "1,1,1,50".
  static BucketSpec parse(const std::string& boundaries, const std::string& min_emit);
  std::string boundaries_string() const;
  std::string min_emit_string() const;
};

std::size_t assign_bucket(std::size_t framed_length, const BucketSpec& spec);

/// Row-major padded id matrix. mask is 1 at real tokens and 0 at padding;
/// padding only ever appears to the right of real tokens.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> source_lines;

  TokenId id(std::size_t r, std::size_t c) const { return ids[r * width + c]; }
  bool real(std::size_t r, std::size_t c) const { return mask[r * width + c] != 0; }
  std::size_t row_length(std::size_t r) const;
  std::size_t real_tokens() const;
};

/// Pads to `width`, or to the longest sequence when width is 0.
TokenMatrix pad_sequences(std::span<const TokenSequence> sequences, std::size_t width = 0);

/// Adds `extra` pad columns to the right of every row.
TokenMatrix append_padding(const TokenMatrix& matrix, std::size_t extra);

struct BucketEmission {
  std::size_t bucket = 0;
  TokenMatrix matrix;
  double accumulation_weight = 0.0;
};

struct BucketedBatch {
  std::vector<BucketEmission> buckets;
  std::size_t total_rows() const;
  bool empty() const { return buckets.empty(); }
};

/// Rows held back per bucket until its min_emit threshold is reached.
using CarryQueues = std::vector<std::vector<TokenSequence>>;

/// Groups a minibatch by bucket. Rows of an under-threshold bucket join that
/// bucket's carry queue instead of being emitted; carried rows are emitted
/// first once the threshold is met.
BucketedBatch bucketize(std::span<const TokenSequence> minibatch, const BucketSpec& spec, CarryQueues& carry);

/// Emits every non-empty carry queue regardless of threshold (epoch end).
BucketedBatch flush_carry(const BucketSpec& spec, CarryQueues& carry);

struct CorruptionRates {
  double select = 0.15;
  double mask = 0.8;
  double random = 0.1;  // remainder is kept unchanged
};

struct MaskedBatch {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> labels;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::uint8_t> padding_mask;

  std::size_t selected() const;
};

struct CorruptionCounts {
  std::size_t eligible = 0;
  std::size_t selected = 0;
  std::size_t masked = 0;
  std::size_t randomized = 0;
  std::size_t kept = 0;
};

/// Masked-language-model corruption. Only real, non-special positions are
/// eligible. Each selected position independently becomes the mask id,
/// a uniform non-special id, or stays unchanged.
MaskedBatch apply_mlm_corruption(const TokenMatrix& batch, std::size_t vocab_size, std::uint64_t seed,
                                 const CorruptionRates& rates = {}, CorruptionCounts* counts = nullptr);

/// The uncorrupted view of a matrix: inputs == labels and an empty loss mask.
MaskedBatch identity_batch(const TokenMatrix& batch);

struct CorpusStats {
  std::size_t lines = 0;
  std::size_t skipped = 0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
  double mean_length = 0.0;
  double std_length = 0.0;  // population
  std::size_t unique_tokens = 0;

  void write_csv(std::ostream& out) const;
};

/// Single pass over the corpus; lengths are framed (begin/end included).
CorpusStats corpus_stats(std::span<const std::string> corpus);

/// Encodes every line that tokenizes and fits the length cap. Failing lines
/// are counted in `skipped` when given.
std::vector<TokenSequence> encode_corpus(std::span<const std::string> corpus, const Vocabulary& vocab,
                                         std::size_t* skipped = nullptr);

}  // namespace molformer
