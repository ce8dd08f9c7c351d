// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace molformer {

using TokenId = std::int32_t;

/// Framed sequences (begin and end markers included) never exceed this length.
inline constexpr std::size_t kMaxFramedLength = 202;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnknown = 1;
inline constexpr TokenId kBegin = 2;
inline constexpr TokenId kEnd = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

inline bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(special::kCount); }

/// Splits a SMILES string into lexical tokens. Bracket atoms, two-letter
/// halogens, ring-bond digits and %NN closures are single tokens; the joined
/// tokens always reproduce the input exactly.
std::vector<std::string> tokenize(std::string_view smiles);

/// Bidirectional token <-> id map. Ids are dense; the five specials occupy
/// 0..4 in the order pad, unknown, begin, end, mask. Immutable once built.
class Vocabulary {
 public:
  /// Builds from non-special tokens in the given order.
  explicit Vocabulary(std::vector<std::string> regular_tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t regular_count() const { return tokens_.size() - special::kCount; }
  const std::string& token(TokenId id) const;
  /// Returns special::kUnknown for tokens not in the vocabulary.
  TokenId id_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  std::span<const std::string> tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline constexpr std::string_view kSpecialNames[special::kCount] = {"<pad>", "<unk>", "<bos>", "<eos>",
                                                                    "<mask>"};

struct VocabularyBuild {
  Vocabulary vocab;
  std::size_t accepted_lines = 0;
  std::size_t skipped_lines = 0;
};

/// Reads one SMILES per line; lines that fail to tokenize are skipped and
/// counted. Throws NoValidLines when nothing tokenizes.
VocabularyBuild build_vocabulary(std::istream& corpus);
VocabularyBuild build_vocabulary(std::span<const std::string> corpus);

struct TokenSequence {
  std::vector<TokenId> ids;
  std::string raw;
  bool framed = true;
  std::size_t source_line = 0;

  std::size_t length() const { return ids.size(); }
};

/// Produces begin + ids + end. Throws TooLong when the framed length exceeds
/// kMaxFramedLength.
TokenSequence encode(std::string_view smiles, const Vocabulary& vocab, std::size_t source_line = 0);

/// Inverse of encode with special tokens stripped.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

/// Reads a text file into lines with trailing CR stripped. Line i of the result
/// is corpus line i; blank lines are kept so indices stay aligned.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace molformer
