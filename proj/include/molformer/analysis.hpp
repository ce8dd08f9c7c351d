// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "molformer/model.hpp"
#include "molformer/tokenizer.hpp"

namespace molformer::analysis {

struct MoleculeGeometry {
  std::string smiles;
  std::vector<std::string> symbols;
  std::vector<std::array<double, 3>> coords;  // angstrom

  std::size_t atom_count() const { return symbols.size(); }
};

/// Blocks of: atom count line, SMILES line, then `symbol x y z` per atom.
std::vector<MoleculeGeometry> parse_geometries(std::istream& in);
std::vector<MoleculeGeometry> read_geometries(const std::filesystem::path& path);

/// Removes H atoms; corpus SMILES carry hydrogens implicitly.
MoleculeGeometry drop_hydrogens(const MoleculeGeometry& geometry);

/// Symmetric, zero diagonal, row-major [n * n].
std::vector<double> distance_matrix(const MoleculeGeometry& geometry);

/// Bracket atoms, the organic subset (B C N O S P F Cl Br I), aromatic atoms
/// (b c n o s p) and the wildcard.
bool is_atom_token(std::string_view token);

/// Framed positions (index into sequence.ids) of atom tokens, in SMILES order.
/// Payload position p is framed position p + 1.
std::vector<std::size_t> atom_token_alignment(const TokenSequence& sequence);

enum class DistanceCategory { kShort, kMedium, kLong };
inline constexpr std::size_t kCategoryCount = 3;

std::string_view category_name(DistanceCategory category);
/// Short (0, 2], Medium (2, 4], Long (4, 10]; nullopt outside (0, 10].
std::optional<DistanceCategory> categorize(double distance);

enum class AffinityTransform { kExponential, kInverse, kIndicator };

std::string_view transform_name(AffinityTransform transform);
AffinityTransform parse_transform(std::string_view name);

struct CosineOptions {
  AffinityTransform transform = AffinityTransform::kExponential;
  double length_scale = 2.0;  // d0 in exp(-d / d0)
  std::size_t max_length = attn::kDefaultAnalysisCap;
};

double affinity(double distance, const CosineOptions& options);

/// Per-category cosine between attention weights and distance affinities
/// over ordered atom pairs (i != j). `map` is the [n_tokens, n_tokens]
/// head-averaged map, `atoms` the atom token positions and `distances` the
/// [atoms, atoms] distance matrix. Categories with no pairs are nullopt.
std::array<std::optional<double>, kCategoryCount> category_cosines(std::span<const double> map, std::size_t n_tokens,
                                                                   std::span<const std::size_t> atoms,
                                                                   std::span<const double> distances,
                                                                   const CosineOptions& options);

struct AttentionDistanceReport {
  std::vector<std::array<double, kCategoryCount>> mean_cosine;  // [layer][category], NaN when no molecule counts
  std::vector<std::array<std::size_t, kCategoryCount>> molecules;
  std::size_t aligned = 0;
  std::size_t skipped = 0;

  /// `layer,category,mean_cosine,n_molecules`, layers 1-based.
  void write_csv(std::ostream& out) const;
};

/// Mean over aligned molecules of each layer's category cosines. Molecules
/// that fail to encode or whose heavy-atom count differs from their atom
/// token count are skipped and counted.
template <typename T>
AttentionDistanceReport attention_distance_cosine(const model::Encoder<T>& encoder, const Vocabulary& vocab,
                                                  const std::vector<MoleculeGeometry>& geometries,
                                                  const CosineOptions& options = {});

/// Writes a map as CSV, one row per query position.
template <typename T>
void write_attention_map(std::ostream& out, const nn::Tensor<T>& map);

std::uint64_t fnv1a64(std::string_view text);

struct NGramFingerprint {
  std::vector<std::uint32_t> bits;  // sorted, unique
  std::size_t width = 2048;
  std::size_t max_n = 3;
};

/// Token n-grams for n = 1..max_n, each joined with spaces.
std::vector<std::string> token_ngrams(std::string_view smiles, std::size_t max_n = 3);

/// Sets bit fnv1a64(ngram) mod width for every n-gram.
NGramFingerprint fingerprint(std::string_view smiles, std::size_t width = 2048, std::size_t max_n = 3);

/// |A & B| / |A | B|; 1 when both are empty. Throws HashConfigMismatch when
/// widths or n-gram orders differ.
double tanimoto(const NGramFingerprint& a, const NGramFingerprint& b);

/// Distinct n-grams common to both molecules (unhashed).
std::size_t shared_ngrams(std::string_view a, std::string_view b, std::size_t max_n = 3);

struct MoleculePair {
  std::string a, b;
};

/// CSV with header `smiles_a,smiles_b`.
std::vector<MoleculePair> parse_pairs(std::istream& in);
std::vector<MoleculePair> read_pairs(const std::filesystem::path& path);

struct SimilarityRow {
  std::size_t pair_id = 0;
  double embed_dist = 0.0;
  double tanimoto = 0.0;
  std::size_t shared_ngrams = 0;
};

struct SimilarityReport {
  std::vector<SimilarityRow> rows;
  double pearson_tanimoto = 0.0;  // NaN when the similarity series is constant
  double pearson_shared = 0.0;

  /// `pair_id,embed_dist,tanimoto,shared_ngrams`.
  void write_csv(std::ostream& out) const;
};

/// Euclidean distances between mean-pooled embeddings against fingerprint
/// Tanimoto and shared n-gram counts. Throws DegeneratePairs for fewer than
/// two pairs or when every embedding distance is equal.
template <typename T>
SimilarityReport embedding_similarity_correlation(const model::Encoder<T>& encoder, const Vocabulary& vocab,
                                                  const std::vector<MoleculePair>& pairs, std::size_t width = 2048,
                                                  std::size_t max_n = 3);

}  // namespace molformer::analysis
