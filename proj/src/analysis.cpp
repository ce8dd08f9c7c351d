// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "molformer/errors.hpp"
#include "molformer/metrics.hpp"

namespace molformer::analysis {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::vector<MoleculeGeometry> parse_geometries(std::istream& in) {
  std::vector<MoleculeGeometry> out;
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&](std::string& dst) {
    while (std::getline(in, dst)) {
      ++lineno;
      dst = trim(dst);
      if (!dst.empty()) return true;
    }
    return false;
  };
  while (next_line(line)) {
    std::size_t count = 0;
    try {
      std::size_t used = 0;
      count = std::stoull(line, &used);
      if (used != line.size()) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfig, "geometry line " + std::to_string(lineno) + ": expected an atom count");
    }
    MoleculeGeometry g;
    if (!std::getline(in, g.smiles)) throw Error(ErrorCode::kConfig, "geometry block ends before its SMILES line");
    ++lineno;
    g.smiles = trim(g.smiles);
    for (std::size_t i = 0; i < count; ++i) {
      if (!next_line(line)) throw Error(ErrorCode::kConfig, "geometry block for " + g.smiles + " is truncated");
      std::istringstream fields(line);
      std::string symbol;
      std::array<double, 3> xyz{};
      if (!(fields >> symbol >> xyz[0] >> xyz[1] >> xyz[2]) || !std::isfinite(xyz[0]) || !std::isfinite(xyz[1]) ||
          !std::isfinite(xyz[2]))
        throw Error(ErrorCode::kConfig, "geometry line " + std::to_string(lineno) + ": expected 'symbol x y z'");
      g.symbols.push_back(symbol);
      g.coords.push_back(xyz);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<MoleculeGeometry> read_geometries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_geometries(in);
}

MoleculeGeometry drop_hydrogens(const MoleculeGeometry& geometry) {
  MoleculeGeometry out;
  out.smiles = geometry.smiles;
  for (std::size_t i = 0; i < geometry.atom_count(); ++i) {
    if (geometry.symbols[i] == "H") continue;
    out.symbols.push_back(geometry.symbols[i]);
    out.coords.push_back(geometry.coords[i]);
  }
  return out;
}

std::vector<double> distance_matrix(const MoleculeGeometry& geometry) {
  const std::size_t n = geometry.atom_count();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = geometry.coords[i];
      const auto& b = geometry.coords[j];
      const double v =
          std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  }
  return d;
}

bool is_atom_token(std::string_view token) {
  if (token.empty()) return false;
  if (token.front() == '[') return true;
  static constexpr std::string_view kAtoms[] = {"B", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I",
                                                "b", "c", "n", "o", "s", "p", "*"};
  return std::find(std::begin(kAtoms), std::end(kAtoms), token) != std::end(kAtoms);
}

std::vector<std::size_t> atom_token_alignment(const TokenSequence& sequence) {
  const auto tokens = tokenize(sequence.raw);
  std::vector<std::size_t> out;
  const std::size_t offset = sequence.framed ? 1 : 0;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (is_atom_token(tokens[i])) out.push_back(i + offset);
  return out;
}

std::string_view category_name(DistanceCategory category) {
  switch (category) {
    case DistanceCategory::kShort:
      return "short";
    case DistanceCategory::kMedium:
      return "medium";
    case DistanceCategory::kLong:
      return "long";
  }
  return "?";
}

std::optional<DistanceCategory> categorize(double distance) {
  if (!(distance > 0.0) || distance > 10.0) return std::nullopt;
  if (distance <= 2.0) return DistanceCategory::kShort;
  if (distance <= 4.0) return DistanceCategory::kMedium;
  return DistanceCategory::kLong;
}

std::string_view transform_name(AffinityTransform transform) {
  switch (transform) {
    case AffinityTransform::kExponential:
      return "exp";
    case AffinityTransform::kInverse:
      return "inverse";
    case AffinityTransform::kIndicator:
      return "indicator";
  }
  return "?";
}

AffinityTransform parse_transform(std::string_view name) {
  if (name == "exp") return AffinityTransform::kExponential;
  if (name == "inverse") return AffinityTransform::kInverse;
  if (name == "indicator") return AffinityTransform::kIndicator;
  throw Error(ErrorCode::kConfig, "unknown affinity transform '" + std::string(name) + "' (exp, inverse, indicator)");
}

double affinity(double distance, const CosineOptions& options) {
  switch (options.transform) {
    case AffinityTransform::kExponential:
      return std::exp(-distance / options.length_scale);
    case AffinityTransform::kInverse:
      return 1.0 / distance;
    case AffinityTransform::kIndicator:
      return 1.0;
  }
  return 0.0;
}

std::array<std::optional<double>, kCategoryCount> category_cosines(std::span<const double> map, std::size_t n_tokens,
                                                                   std::span<const std::size_t> atoms,
                                                                   std::span<const double> distances,
                                                                   const CosineOptions& options) {
  const std::size_t n = atoms.size();
  if (map.size() != n_tokens * n_tokens || distances.size() != n * n)
    throw Error(ErrorCode::kDimMismatch, "attention map or distance matrix has the wrong size");
  std::array<std::vector<double>, kCategoryCount> attention, affinities;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = distances[i * n + j];
      const auto cat = categorize(d);
      if (!cat) continue;
      const auto c = static_cast<std::size_t>(*cat);
      attention[c].push_back(map[atoms[i] * n_tokens + atoms[j]]);
      affinities[c].push_back(affinity(d, options));
    }
  }
  std::array<std::optional<double>, kCategoryCount> out;
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    if (!attention[c].empty()) out[c] = metrics::cosine(attention[c], affinities[c]);
  return out;
}

void AttentionDistanceReport::write_csv(std::ostream& out) const {
  out << "layer,category,mean_cosine,n_molecules\n";
  for (std::size_t l = 0; l < mean_cosine.size(); ++l)
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      out << l + 1 << ',' << category_name(static_cast<DistanceCategory>(c)) << ','
          << format_value(mean_cosine[l][c]) << ',' << molecules[l][c] << '\n';
}

template <typename T>
AttentionDistanceReport attention_distance_cosine(const model::Encoder<T>& encoder, const Vocabulary& vocab,
                                                  const std::vector<MoleculeGeometry>& geometries,
                                                  const CosineOptions& options) {
  const std::size_t layers = encoder.config().layers;
  AttentionDistanceReport report;
  std::vector<std::array<double, kCategoryCount>> sums(layers, std::array<double, kCategoryCount>{});
  report.molecules.assign(layers, std::array<std::size_t, kCategoryCount>{});
  for (const auto& raw : geometries) {
    const MoleculeGeometry g = drop_hydrogens(raw);
    std::optional<TokenSequence> seq;
    try {
      seq = encode(g.smiles, vocab);
    } catch (const Error&) {
      ++report.skipped;
      continue;
    }
    const auto atoms = atom_token_alignment(*seq);
    if (atoms.size() != g.atom_count() || atoms.empty() || seq->length() > options.max_length) {
      ++report.skipped;
      continue;
    }
    ++report.aligned;
    const auto distances = distance_matrix(g);
    const auto maps = encoder.attention_maps(*seq, options.max_length);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::vector<double> map(maps[l].values().begin(), maps[l].values().end());
      const auto cos = category_cosines(map, seq->length(), atoms, distances, options);
      for (std::size_t c = 0; c < kCategoryCount; ++c) {
        if (!cos[c]) continue;
        sums[l][c] += *cos[c];
        ++report.molecules[l][c];
      }
    }
  }
  if (report.aligned == 0)
    throw Error(ErrorCode::kNoAlignedMolecules, "none of " + std::to_string(geometries.size()) +
                                                    " geometries aligned with their tokenization");
  report.mean_cosine.resize(layers);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      report.mean_cosine[l][c] = report.molecules[l][c] == 0
                                     ? std::nan("")
                                     : sums[l][c] / static_cast<double>(report.molecules[l][c]);
  return report;
}

template <typename T>
void write_attention_map(std::ostream& out, const nn::Tensor<T>& map) {
  const std::size_t n = map.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < map.cols(); ++j) out << (j ? "," : "") << format_value(map(i, j));
    out << '\n';
  }
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> token_ngrams(std::string_view smiles, std::size_t max_n) {
  const auto tokens = tokenize(smiles);
  std::vector<std::string> out;
  for (std::size_t n = 1; n <= max_n; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (std::size_t k = 1; k < n; ++k) gram += ' ' + tokens[i + k];
      out.push_back(std::move(gram));
    }
  }
  return out;
}

NGramFingerprint fingerprint(std::string_view smiles, std::size_t width, std::size_t max_n) {
  if (width == 0 || max_n == 0) throw Error(ErrorCode::kConfig, "fingerprint width and n-gram order must be positive");
  NGramFingerprint fp;
  fp.width = width;
  fp.max_n = max_n;
  for (const auto& gram : token_ngrams(smiles, max_n))
    fp.bits.push_back(static_cast<std::uint32_t>(fnv1a64(gram) % width));
  std::sort(fp.bits.begin(), fp.bits.end());
  fp.bits.erase(std::unique(fp.bits.begin(), fp.bits.end()), fp.bits.end());
  return fp;
}

double tanimoto(const NGramFingerprint& a, const NGramFingerprint& b) {
  if (a.width != b.width || a.max_n != b.max_n)
    throw Error(ErrorCode::kHashConfigMismatch, "fingerprints use different widths or n-gram orders");
  if (a.bits.empty() && b.bits.empty()) return 1.0;
  std::vector<std::uint32_t> common;
  std::set_intersection(a.bits.begin(), a.bits.end(), b.bits.begin(), b.bits.end(), std::back_inserter(common));
  const std::size_t uni = a.bits.size() + b.bits.size() - common.size();
  return static_cast<double>(common.size()) / static_cast<double>(uni);
}

std::size_t shared_ngrams(std::string_view a, std::string_view b, std::size_t max_n) {
  const auto ga = token_ngrams(a, max_n);
  const auto gb = token_ngrams(b, max_n);
  const std::set<std::string> sa(ga.begin(), ga.end());
  const std::set<std::string> sb(gb.begin(), gb.end());
  std::size_t n = 0;
  for (const auto& g : sa) n += sb.count(g);
  return n;
}

std::vector<MoleculePair> parse_pairs(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "smiles_a,smiles_b")
    throw Error(ErrorCode::kConfig, "pair file must start with the header smiles_a,smiles_b");
  std::vector<MoleculePair> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw Error(ErrorCode::kConfig, "pair line " + std::to_string(lineno) + " needs exactly two SMILES");
    out.push_back({trim(line.substr(0, comma)), trim(line.substr(comma + 1))});
  }
  return out;
}

std::vector<MoleculePair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_pairs(in);
}

void SimilarityReport::write_csv(std::ostream& out) const {
  out << "pair_id,embed_dist,tanimoto,shared_ngrams\n";
  for (const auto& r : rows)
    out << r.pair_id << ',' << format_value(r.embed_dist) << ',' << format_value(r.tanimoto) << ','
        << r.shared_ngrams << '\n';
}

template <typename T>
SimilarityReport embedding_similarity_correlation(const model::Encoder<T>& encoder, const Vocabulary& vocab,
                                                  const std::vector<MoleculePair>& pairs, std::size_t width,
                                                  std::size_t max_n) {
  if (pairs.size() < 2) throw Error(ErrorCode::kDegeneratePairs, "need at least two molecule pairs");
  SimilarityReport report;
  std::vector<double> dist, tan, shared;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto ea = encoder.embed_molecule(encode(pairs[i].a, vocab));
    const auto eb = encoder.embed_molecule(encode(pairs[i].b, vocab));
    double d = 0.0;
    for (std::size_t k = 0; k < ea.size(); ++k)
      d += (static_cast<double>(ea[k]) - eb[k]) * (static_cast<double>(ea[k]) - eb[k]);
    SimilarityRow row;
    row.pair_id = i;
    row.embed_dist = std::sqrt(d);
    row.tanimoto = tanimoto(fingerprint(pairs[i].a, width, max_n), fingerprint(pairs[i].b, width, max_n));
    row.shared_ngrams = shared_ngrams(pairs[i].a, pairs[i].b, max_n);
    dist.push_back(row.embed_dist);
    tan.push_back(row.tanimoto);
    shared.push_back(static_cast<double>(row.shared_ngrams));
    report.rows.push_back(row);
  }
  if (std::all_of(dist.begin(), dist.end(), [&](double v) { return v == dist.front(); }))
    throw Error(ErrorCode::kDegeneratePairs, "every pair has the same embedding distance");
  auto correlate = [&](const std::vector<double>& y) {
    try {
      return metrics::pearson(dist, y);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegeneratePairs) throw;
      return std::nan("");
    }
  };
  report.pearson_tanimoto = correlate(tan);
  report.pearson_shared = correlate(shared);
  return report;
}

template AttentionDistanceReport attention_distance_cosine<float>(const model::Encoder<float>&, const Vocabulary&,
                                                                  const std::vector<MoleculeGeometry>&,
                                                                  const CosineOptions&);
template AttentionDistanceReport attention_distance_cosine<double>(const model::Encoder<double>&, const Vocabulary&,
                                                                   const std::vector<MoleculeGeometry>&,
                                                                   const CosineOptions&);
template void write_attention_map<float>(std::ostream&, const nn::Tensor<float>&);
template void write_attention_map<double>(std::ostream&, const nn::Tensor<double>&);
template SimilarityReport embedding_similarity_correlation<float>(const model::Encoder<float>&, const Vocabulary&,
                                                                  const std::vector<MoleculePair>&, std::size_t,
                                                                  std::size_t);
template SimilarityReport embedding_similarity_correlation<double>(const model::Encoder<double>&, const Vocabulary&,
                                                                   const std::vector<MoleculePair>&, std::size_t,
                                                                   std::size_t);

}  // namespace molformer::analysis
