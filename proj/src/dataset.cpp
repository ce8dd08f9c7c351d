// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "molformer/errors.hpp"
#include "molformer/rng.hpp"

namespace molformer {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) {
    part.erase(0, part.find_first_not_of(" \t"));
    part.erase(part.find_last_not_of(" \t") + 1);
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::size_t parse_size(const std::string& text) {
  std::size_t used = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text[0] == '-')
    throw Error(ErrorCode::kConfig, "not a non-negative integer: '" + text + "'");
  return static_cast<std::size_t>(value);
}

BucketEmission make_emission(std::size_t bucket, std::vector<TokenSequence>& rows) {
  BucketEmission emission;
  emission.bucket = bucket;
  emission.matrix = pad_sequences(rows);
  rows.clear();
  return emission;
}

void assign_weights(BucketedBatch& batch) {
  const double total = static_cast<double>(batch.total_rows());
  for (auto& b : batch.buckets) b.accumulation_weight = static_cast<double>(b.matrix.rows) / total;
}

}  // namespace

BucketSpec BucketSpec::defaults() {
  return BucketSpec{{{1, 42}, {43, 66}, {67, 122}, {123, 202}}, {1, 1, 1, 50}};
}

void BucketSpec::validate() const {
  if (intervals.empty()) throw Error(ErrorCode::kConfig, "bucket spec has no intervals");
  if (min_emit.size() != intervals.size())
    throw Error(ErrorCode::kConfig, "bucket spec has " + std::to_string(intervals.size()) + " intervals but " +
                                        std::to_string(min_emit.size()) + " min_emit values");
  std::size_t expected_start = 1;
  for (const auto& [lo, hi] : intervals) {
    if (lo != expected_start || hi < lo)
      throw Error(ErrorCode::kConfig, "bucket intervals must be sorted, disjoint and contiguous from 1; got " +
                                          boundaries_string());
    expected_start = hi + 1;
  }
  if (expected_start != kMaxFramedLength + 1)
    throw Error(ErrorCode::kConfig, "bucket intervals must end at 202; got " + boundaries_string());
}

BucketSpec BucketSpec::parse(const std::string& boundaries, const std::string& min_emit) {
  BucketSpec spec;
  for (const auto& part : split(boundaries, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) throw Error(ErrorCode::kConfig, "bucket interval needs lo-hi: '" + part + "'");
    spec.intervals.emplace_back(parse_size(part.substr(0, dash)), parse_size(part.substr(dash + 1)));
  }
  for (const auto& part : split(min_emit, ',')) spec.min_emit.push_back(parse_size(part));
  spec.validate();
  return spec;
}

std::string BucketSpec::boundaries_string() const {
  std::string out;
  for (const auto& [lo, hi] : intervals) {
    if (!out.empty()) out += ',';
    out += std::to_string(lo) + "-" + std::to_string(hi);
  }
  return out;
}

std::string BucketSpec::min_emit_string() const {
  std::string out;
  for (auto m : min_emit) {
    if (!out.empty()) out += ',';
    out += std::to_string(m);
  }
  return out;
}

std::size_t assign_bucket(std::size_t framed_length, const BucketSpec& spec) {
  if (framed_length < 1 || framed_length > kMaxFramedLength)
    throw Error(ErrorCode::kOutOfRange, "framed length " + std::to_string(framed_length) + " outside [1, 202]");
  for (std::size_t b = 0; b < spec.intervals.size(); ++b) {
    if (framed_length >= spec.intervals[b].first && framed_length <= spec.intervals[b].second) return b;
  }
  throw Error(ErrorCode::kOutOfRange, "no bucket covers length " + std::to_string(framed_length));
}

std::size_t TokenMatrix::row_length(std::size_t r) const {
  std::size_t n = 0;
  while (n < width && mask[r * width + n]) ++n;
  return n;
}

std::size_t TokenMatrix::real_tokens() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenMatrix pad_sequences(std::span<const TokenSequence> sequences, std::size_t width) {
  TokenMatrix m;
  m.rows = sequences.size();
  std::size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.length());
  m.width = width == 0 ? longest : width;
  if (m.width < longest)
    throw Error(ErrorCode::kOutOfRange, "pad width " + std::to_string(width) + " below longest row " +
                                            std::to_string(longest));
  m.ids.assign(m.rows * m.width, special::kPad);
  m.mask.assign(m.rows * m.width, 0);
  m.source_lines.reserve(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto& ids = sequences[r].ids;
    std::copy(ids.begin(), ids.end(), m.ids.begin() + static_cast<std::ptrdiff_t>(r * m.width));
    std::fill_n(m.mask.begin() + static_cast<std::ptrdiff_t>(r * m.width), ids.size(), std::uint8_t{1});
    m.source_lines.push_back(sequences[r].source_line);
  }
  return m;
}

TokenMatrix append_padding(const TokenMatrix& matrix, std::size_t extra) {
  TokenMatrix out;
  out.rows = matrix.rows;
  out.width = matrix.width + extra;
  out.source_lines = matrix.source_lines;
  out.ids.assign(out.rows * out.width, special::kPad);
  out.mask.assign(out.rows * out.width, 0);
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.width; ++c) {
      out.ids[r * out.width + c] = matrix.ids[r * matrix.width + c];
      out.mask[r * out.width + c] = matrix.mask[r * matrix.width + c];
    }
  }
  return out;
}

std::size_t BucketedBatch::total_rows() const {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.matrix.rows;
  return n;
}

BucketedBatch bucketize(std::span<const TokenSequence> minibatch, const BucketSpec& spec, CarryQueues& carry) {
  carry.resize(spec.count());
  std::vector<std::vector<TokenSequence>> pools(spec.count());
  for (std::size_t b = 0; b < spec.count(); ++b) pools[b] = std::move(carry[b]);
  for (const auto& seq : minibatch) pools[assign_bucket(seq.length(), spec)].push_back(seq);

  BucketedBatch batch;
  for (std::size_t b = 0; b < spec.count(); ++b) {
    carry[b].clear();
    if (pools[b].empty()) continue;
    if (pools[b].size() >= spec.min_emit[b]) {
      batch.buckets.push_back(make_emission(b, pools[b]));
    } else {
      carry[b] = std::move(pools[b]);
    }
  }
  assign_weights(batch);
  return batch;
}

BucketedBatch flush_carry(const BucketSpec& spec, CarryQueues& carry) {
  carry.resize(spec.count());
  BucketedBatch batch;
  for (std::size_t b = 0; b < spec.count(); ++b) {
    if (!carry[b].empty()) batch.buckets.push_back(make_emission(b, carry[b]));
  }
  assign_weights(batch);
  return batch;
}

std::size_t MaskedBatch::selected() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

MaskedBatch apply_mlm_corruption(const TokenMatrix& batch, std::size_t vocab_size, std::uint64_t seed,
                                 const CorruptionRates& rates, CorruptionCounts* counts) {
  if (vocab_size <= special::kCount)
    throw Error(ErrorCode::kDegenerateVocab, "vocabulary has no non-special tokens to draw replacements from");
  MaskedBatch out = identity_batch(batch);
  Rng rng(seed);
  CorruptionCounts local;
  const std::uint64_t regular = vocab_size - special::kCount;
  for (std::size_t i = 0; i < out.inputs.size(); ++i) {
    if (!batch.mask[i] || is_special(batch.ids[i])) continue;
    ++local.eligible;
    if (rng.uniform() >= rates.select) continue;
    ++local.selected;
    out.loss_mask[i] = 1;
    const double category = rng.uniform();
    if (category < rates.mask) {
      out.inputs[i] = special::kMask;
      ++local.masked;
    } else if (category < rates.mask + rates.random) {
      out.inputs[i] = static_cast<TokenId>(special::kCount + rng.below(regular));
      ++local.randomized;
    } else {
      ++local.kept;
    }
  }
  if (counts) *counts = local;
  return out;
}

MaskedBatch identity_batch(const TokenMatrix& batch) {
  MaskedBatch out;
  out.rows = batch.rows;
  out.width = batch.width;
  out.inputs = batch.ids;
  out.labels = batch.ids;
  out.loss_mask.assign(batch.ids.size(), 0);
  out.padding_mask = batch.mask;
  return out;
}

void CorpusStats::write_csv(std::ostream& out) const {
  out << "metric,value\n";
  out << "lines," << lines << '\n';
  out << "skipped," << skipped << '\n';
  out << "min_length," << min_length << '\n';
  out << "max_length," << max_length << '\n';
  out << std::setprecision(10);
  out << "mean_length," << mean_length << '\n';
  out << "std_length," << std_length << '\n';
  out << "unique_tokens," << unique_tokens << '\n';
}

CorpusStats corpus_stats(std::span<const std::string> corpus) {
  CorpusStats stats;
  std::unordered_set<std::string> unique;
  double mean = 0.0;
  double m2 = 0.0;
  for (const auto& line : corpus) {
    std::vector<std::string> tokens;
    try {
      tokens = tokenize(line);
    } catch (const Error&) {
      ++stats.skipped;
      continue;
    }
    const std::size_t length = tokens.size() + 2;
    ++stats.lines;
    if (stats.lines == 1) {
      stats.min_length = stats.max_length = length;
    } else {
      stats.min_length = std::min(stats.min_length, length);
      stats.max_length = std::max(stats.max_length, length);
    }
    const double delta = static_cast<double>(length) - mean;
    mean += delta / static_cast<double>(stats.lines);
    m2 += delta * (static_cast<double>(length) - mean);
    for (auto& t : tokens) unique.insert(std::move(t));
  }
  if (stats.lines == 0) throw Error(ErrorCode::kNoValidLines, "corpus has no tokenizable lines");
  stats.mean_length = mean;
  stats.std_length = std::sqrt(m2 / static_cast<double>(stats.lines));
  stats.unique_tokens = unique.size();
  return stats;
}

std::vector<TokenSequence> encode_corpus(std::span<const std::string> corpus, const Vocabulary& vocab,
                                         std::size_t* skipped) {
  std::vector<TokenSequence> out;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      out.push_back(encode(corpus[i], vocab, i));
    } catch (const Error&) {
      ++bad;
    }
  }
  if (skipped) *skipped = bad;
  return out;
}

}  // namespace molformer
