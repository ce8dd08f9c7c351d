// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/tokenizer.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include "molformer/errors.hpp"

namespace molformer {

namespace {

// Bracket atoms, two-letter halogens, organic subset, aromatic atoms,
// bond / branch / misc symbols, %NN ring closures, single ring digits.
const std::regex& smiles_pattern() {
  static const std::regex pattern(
      R"(\[[^\]]+\]|Br|Cl|[BCNOSPFI]|[bcnops]|[()=#\-+\\/:~@?>*$.]|%[0-9]{2}|[0-9])",
      std::regex::optimize);
  return pattern;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view smiles) {
  if (smiles.empty()) throw Error(ErrorCode::kEmptyInput, "empty SMILES string");
  std::vector<std::string> tokens;
  const auto& pattern = smiles_pattern();
  auto it = smiles.begin();
  while (it != smiles.end()) {
    std::match_results<std::string_view::const_iterator> match;
    if (!std::regex_search(it, smiles.end(), match, pattern, std::regex_constants::match_continuous) ||
        match.length(0) == 0) {
      const auto position = static_cast<std::size_t>(it - smiles.begin());
      throw Error(ErrorCode::kUnlexableCharacter,
                  "no token matches '" + std::string(1, *it) + "' at position " + std::to_string(position));
    }
    tokens.emplace_back(match[0].first, match[0].second);
    it += match.length(0);
  }
  return tokens;
}

Vocabulary::Vocabulary(std::vector<std::string> regular_tokens) {
  tokens_.reserve(regular_tokens.size() + special::kCount);
  for (auto name : kSpecialNames) tokens_.emplace_back(name);
  for (auto& token : regular_tokens) tokens_.push_back(std::move(token));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [pos, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw Error(ErrorCode::kConfig, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error(ErrorCode::kUnknownId, "id " + std::to_string(id) + " outside vocabulary of size " +
                                           std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnknown : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write vocabulary file " + path.string());
  for (const auto& token : tokens_) out << token << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < special::kCount)
    throw Error(ErrorCode::kConfig, "vocabulary file " + path.string() + " has fewer than 5 lines");
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (lines[i] != kSpecialNames[i])
      throw Error(ErrorCode::kConfig, "vocabulary file " + path.string() + " line " + std::to_string(i + 1) +
                                          " must be " + std::string(kSpecialNames[i]));
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + special::kCount, lines.end()));
}

VocabularyBuild build_vocabulary(std::span<const std::string> corpus) {
  std::vector<std::string> order;
  std::unordered_map<std::string, bool> seen;
  std::size_t accepted = 0;
  std::size_t skipped = 0;
  for (const auto& line : corpus) {
    std::vector<std::string> tokens;
    try {
      tokens = tokenize(line);
    } catch (const Error&) {
      ++skipped;
      continue;
    }
    ++accepted;
    for (auto& token : tokens) {
      if (seen.emplace(token, true).second) order.push_back(std::move(token));
    }
  }
  if (accepted == 0)
    throw Error(ErrorCode::kNoValidLines, "none of " + std::to_string(corpus.size()) + " corpus lines tokenized");
  return VocabularyBuild{Vocabulary(std::move(order)), accepted, skipped};
}

VocabularyBuild build_vocabulary(std::istream& corpus) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(corpus, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return build_vocabulary(lines);
}

TokenSequence encode(std::string_view smiles, const Vocabulary& vocab, std::size_t source_line) {
  const auto tokens = tokenize(smiles);
  const std::size_t framed_length = tokens.size() + 2;
  if (framed_length > kMaxFramedLength)
    throw Error(ErrorCode::kTooLong, "framed length " + std::to_string(framed_length) + " exceeds " +
                                         std::to_string(kMaxFramedLength));
  TokenSequence seq;
  seq.raw = std::string(smiles);
  seq.source_line = source_line;
  seq.ids.reserve(framed_length);
  seq.ids.push_back(special::kBegin);
  for (const auto& token : tokens) seq.ids.push_back(vocab.id_of(token));
  seq.ids.push_back(special::kEnd);
  return seq;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const auto& token = vocab.token(id);
    if (!is_special(id)) out += token;
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace molformer
