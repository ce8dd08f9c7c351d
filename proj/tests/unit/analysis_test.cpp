// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/analysis.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "molformer/errors.hpp"
#include "molformer/metrics.hpp"
#include "molformer/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace molformer::analysis {
namespace {

using attn::AttentionVariant;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kConfig;
}

model::EncoderConfig eval_config(AttentionVariant variant, std::uint64_t seed = 1) {
  auto c = fixtures::toy_config(variant, seed);
  c.dropout = 0.0;
  return c;
}

std::vector<std::size_t> alignment_of(const std::string& smiles) {
  const std::vector<std::string> corpus = {smiles};
  const auto vocab = build_vocabulary(corpus).vocab;
  return atom_token_alignment(encode(smiles, vocab));
}

TEST(Alignment, BranchedMolecule) {
  // payload 0,1,3,5 -> framed 1,2,4,6
  EXPECT_EQ(alignment_of("CC(C)O"), (std::vector<std::size_t>{1, 2, 4, 6}));
}

TEST(Alignment, RingDigitsAndBracketAtoms) {
  EXPECT_EQ(alignment_of("C1CC1").size(), 3u);
  EXPECT_EQ(alignment_of("[nH]"), (std::vector<std::size_t>{1}));
  EXPECT_EQ(alignment_of("ClC(=O)Br"), (std::vector<std::size_t>{1, 2, 5, 7}));
}

TEST(Alignment, MatchesIndependentScanOnCorpus) {
  const auto& vocab = fixtures::toy_vocab();
  for (const auto& line : fixtures::toy_corpus()) {
    auto expected = oracle::atom_token_positions(line);
    for (auto& p : expected) ++p;
    EXPECT_EQ(atom_token_alignment(encode(line, vocab)), expected) << line;
  }
}

TEST(Alignment, AtomTokenClassification) {
  for (const char* t : {"C", "c", "N", "n", "O", "o", "S", "s", "P", "p", "B", "b", "F", "Cl", "Br", "I", "*",
                        "[nH]", "[Si]", "[C@@H]", "[O-]"})
    EXPECT_TRUE(is_atom_token(t)) << t;
  for (const char* t : {"(", ")", "=", "#", "1", "%12", "/", "\\", ".", "<bos>", "<pad>", "<mask>"})
    EXPECT_FALSE(is_atom_token(t)) << t;
}

TEST(Categorize, BoundariesAreRightClosed) {
  EXPECT_FALSE(categorize(0.0));
  EXPECT_EQ(categorize(1e-9), DistanceCategory::kShort);
  EXPECT_EQ(categorize(2.0), DistanceCategory::kShort);
  EXPECT_EQ(categorize(2.0000001), DistanceCategory::kMedium);
  EXPECT_EQ(categorize(4.0), DistanceCategory::kMedium);
  EXPECT_EQ(categorize(4.5), DistanceCategory::kLong);
  EXPECT_EQ(categorize(10.0), DistanceCategory::kLong);
  EXPECT_FALSE(categorize(10.0001));
  EXPECT_EQ(category_name(DistanceCategory::kMedium), "medium");
}

TEST(Categorize, PartitionConservesPairCount) {
  Rng rng(4);
  std::array<std::size_t, kCategoryCount> counts{};
  std::size_t in_range = 0;
  for (int i = 0; i < 5000; ++i) {
    const double d = rng.uniform() * 12.0;
    if (d > 0.0 && d <= 10.0) ++in_range;
    if (const auto c = categorize(d)) ++counts[static_cast<std::size_t>(*c)];
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2], in_range);
}

TEST(Affinity, Transforms) {
  CosineOptions o;
  EXPECT_NEAR(affinity(2.0, o), std::exp(-1.0), 1e-15);
  o.length_scale = 4.0;
  EXPECT_NEAR(affinity(2.0, o), std::exp(-0.5), 1e-15);
  o.transform = AffinityTransform::kInverse;
  EXPECT_DOUBLE_EQ(affinity(4.0, o), 0.25);
  o.transform = AffinityTransform::kIndicator;
  EXPECT_DOUBLE_EQ(affinity(7.0, o), 1.0);
  EXPECT_EQ(parse_transform("inverse"), AffinityTransform::kInverse);
  EXPECT_EQ(parse_transform(transform_name(AffinityTransform::kExponential)), AffinityTransform::kExponential);
  EXPECT_EQ(code_of([] { parse_transform("gauss"); }), ErrorCode::kConfig);
}

// Two atoms at tokens 1 and 2, distances chosen per test.
struct PairSetup {
  std::vector<std::size_t> atoms = {1, 2, 3};
  std::vector<double> distances;
  std::vector<double> map = std::vector<double>(16, 0.0);
};

PairSetup three_atoms() {
  // 1.5 short between 0-1, 3.0 medium between 1-2, 4.5 long between 0-2
  PairSetup s;
  s.distances = {0.0, 1.5, 4.5, 1.5, 0.0, 3.0, 4.5, 3.0, 0.0};
  return s;
}

TEST(CategoryCosines, ProportionalIsOneAndOrthogonalIsZero) {
  auto s = three_atoms();
  s.distances = {0.0, 1.0, 1.5, 1.0, 0.0, 1.8, 1.5, 1.8, 0.0};  // every pair short
  const CosineOptions o;
  auto put = [&](std::size_t i, std::size_t j, double v) { s.map[s.atoms[i] * 4 + s.atoms[j]] = v; };
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) put(i, j, 0.3 * affinity(s.distances[i * 3 + j], o));
  auto cos = category_cosines(s.map, 4, s.atoms, s.distances, o);
  ASSERT_TRUE(cos[0]);
  EXPECT_NEAR(*cos[0], 1.0, 1e-12);
  EXPECT_FALSE(cos[1]);
  EXPECT_FALSE(cos[2]);

  // Affinities are all positive, so an orthogonal attention vector is zero.
  std::fill(s.map.begin(), s.map.end(), 0.0);
  put(0, 0, 1.0);
  cos = category_cosines(s.map, 4, s.atoms, s.distances, o);
  EXPECT_NEAR(*cos[0], 0.0, 1e-12);
}

TEST(CategoryCosines, SelectsPairsByCategory) {
  auto s = three_atoms();
  CosineOptions o;
  o.transform = AffinityTransform::kIndicator;
  auto put = [&](std::size_t i, std::size_t j, double v) { s.map[s.atoms[i] * 4 + s.atoms[j]] = v; };
  put(0, 1, 0.2);
  put(1, 0, 0.6);
  put(1, 2, 0.5);
  put(2, 1, 0.5);
  put(0, 2, 0.9);
  put(2, 0, 0.0);
  const auto cos = category_cosines(s.map, 4, s.atoms, s.distances, o);
  // Each category has two ordered pairs against an all-ones affinity.
  auto expect = [](double a, double b) { return (a + b) / (std::sqrt(2.0) * std::hypot(a, b)); };
  EXPECT_NEAR(*cos[0], expect(0.2, 0.6), 1e-12);
  EXPECT_NEAR(*cos[1], 1.0, 1e-12);
  EXPECT_NEAR(*cos[2], expect(0.9, 0.0), 1e-12);
}

TEST(CategoryCosines, ScaleInvariant) {
  auto s = three_atoms();
  Rng rng(2);
  for (auto& v : s.map) v = rng.uniform();
  const CosineOptions o;
  const auto a = category_cosines(s.map, 4, s.atoms, s.distances, o);
  for (auto& v : s.map) v *= 7.5;
  const auto b = category_cosines(s.map, 4, s.atoms, s.distances, o);
  for (std::size_t c = 0; c < kCategoryCount; ++c) EXPECT_NEAR(*a[c], *b[c], 1e-12);
}

TEST(CategoryCosines, SizeMismatch) {
  auto s = three_atoms();
  s.map.resize(9);
  EXPECT_EQ(code_of([&] { category_cosines(s.map, 4, s.atoms, s.distances, {}); }), ErrorCode::kDimMismatch);
}

TEST(CategoryCosines, FarPairsAreExcluded) {
  auto s = three_atoms();
  s.distances = {0.0, 11.0, 12.0, 11.0, 0.0, 13.0, 12.0, 13.0, 0.0};
  const auto cos = category_cosines(s.map, 4, s.atoms, s.distances, {});
  for (const auto& c : cos) EXPECT_FALSE(c);
}

TEST(Geometry, ParseDropHydrogensAndDistances) {
  std::istringstream in(
      "4\n"
      "CO\n"
      "C 0 0 0\n"
      "H 0 0 1.09\n"
      "O 1.43 0 0\n"
      "H 1.8 0.9 0\n"
      "\n"
      "1\n"
      "[nH]\n"
      "N 0 0 0\n");
  const auto gs = parse_geometries(in);
  ASSERT_EQ(gs.size(), 2u);
  EXPECT_EQ(gs[0].smiles, "CO");
  EXPECT_EQ(gs[0].atom_count(), 4u);
  const auto heavy = drop_hydrogens(gs[0]);
  EXPECT_EQ(heavy.symbols, (std::vector<std::string>{"C", "O"}));
  const auto d = distance_matrix(heavy);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_DOUBLE_EQ(d[0], 0.0);
  EXPECT_DOUBLE_EQ(d[3], 0.0);
  EXPECT_NEAR(d[1], 1.43, 1e-12);
  EXPECT_EQ(d[1], d[2]);
  EXPECT_EQ(gs[1].symbols, (std::vector<std::string>{"N"}));
}

TEST(Geometry, DistanceMatrixIsSymmetric) {
  const auto g = fixtures::synthetic_geometry("c1ccccc1CCO", 3);
  const auto d = distance_matrix(g);
  const std::size_t n = g.atom_count();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(d[i * n + i], 0.0);
    for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(d[i * n + j], d[j * n + i]);
  }
}

TEST(Geometry, MalformedBlocks) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    parse_geometries(in);
  };
  EXPECT_EQ(code_of([&] { parse("two\nCO\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { parse("2\nCO\nC 0 0 0\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { parse("1\nC\nC 0 0\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { parse("1\n"); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { read_geometries("/nonexistent/geo.xyz"); }), ErrorCode::kIo);
}

TEST(Geometry, FormatParseRoundTrip) {
  const std::vector<MoleculeGeometry> gs = {fixtures::synthetic_geometry("CCO", 1, 2),
                                            fixtures::synthetic_geometry("c1ccccc1", 2)};
  std::istringstream in(fixtures::format_geometries(gs));
  const auto back = parse_geometries(in);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_EQ(back[m].smiles, gs[m].smiles);
    EXPECT_EQ(back[m].symbols, gs[m].symbols);
    for (std::size_t i = 0; i < gs[m].atom_count(); ++i)
      for (int x = 0; x < 3; ++x) EXPECT_NEAR(back[m].coords[i][x], gs[m].coords[i][x], 1e-9);
  }
}

std::vector<MoleculeGeometry> corpus_geometries(std::size_t count, std::size_t hydrogens) {
  std::vector<MoleculeGeometry> out;
  const auto& corpus = fixtures::toy_corpus();
  for (std::size_t i = 0; i < count; ++i) out.push_back(fixtures::synthetic_geometry(corpus[i * 7], i, hydrogens));
  return out;
}

class AttentionDistance : public ::testing::TestWithParam<AttentionVariant> {};

TEST_P(AttentionDistance, MatchesDirectSummationOracle) {
  const model::Encoder<double> enc(eval_config(GetParam(), 9));
  const auto& vocab = fixtures::toy_vocab();
  const auto geometries = corpus_geometries(12, 3);
  const auto report = attention_distance_cosine(enc, vocab, geometries);
  EXPECT_EQ(report.aligned, 12u);
  EXPECT_EQ(report.skipped, 0u);

  const std::size_t layers = enc.config().layers;
  std::vector<std::array<double, 3>> sums(layers, std::array<double, 3>{});
  std::vector<std::array<std::size_t, 3>> counts(layers, std::array<std::size_t, 3>{});
  for (const auto& g : geometries) {
    const auto per = oracle::attention_distance_cosines(enc, encode(g.smiles, vocab), drop_hydrogens(g), 2.0);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t c = 0; c < 3; ++c)
        if (!std::isnan(per[l][c])) {
          sums[l][c] += per[l][c];
          ++counts[l][c];
        }
  }
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t c = 0; c < 3; ++c) {
      ASSERT_GT(counts[l][c], 0u);
      EXPECT_EQ(report.molecules[l][c], counts[l][c]);
      EXPECT_NEAR(report.mean_cosine[l][c], sums[l][c] / double(counts[l][c]), 1e-6);
    }
}

INSTANTIATE_TEST_SUITE_P(Variants, AttentionDistance,
                         ::testing::Values(AttentionVariant::kLinearRotaryModified,
                                           AttentionVariant::kLinearRotaryOriginal, AttentionVariant::kFullRotary,
                                           AttentionVariant::kFullAbsolute),
                         [](const auto& info) { return std::string(attn::variant_name(info.param)); });

TEST(AttentionDistanceReport, SkipsMisalignedMolecules) {
  const model::Encoder<float> enc(eval_config(AttentionVariant::kLinearRotaryModified));
  auto geometries = corpus_geometries(3, 0);
  auto extra = geometries[0];
  extra.symbols.push_back("C");
  extra.coords.push_back({9.0, 9.0, 9.0});
  geometries.push_back(extra);
  MoleculeGeometry bad;
  bad.smiles = "C x";
  bad.symbols = {"C"};
  bad.coords = {{0.0, 0.0, 0.0}};
  geometries.push_back(bad);
  const auto report = attention_distance_cosine(enc, fixtures::toy_vocab(), geometries);
  EXPECT_EQ(report.aligned, 3u);
  EXPECT_EQ(report.skipped, 2u);

  const std::vector<MoleculeGeometry> none = {extra, bad};
  EXPECT_EQ(code_of([&] { attention_distance_cosine(enc, fixtures::toy_vocab(), none); }),
            ErrorCode::kNoAlignedMolecules);
}

TEST(AttentionDistanceReport, CsvFormat) {
  AttentionDistanceReport r;
  r.mean_cosine = {{0.5, 0.25, std::nan("")}};
  r.molecules = {{3, 2, 0}};
  std::ostringstream out;
  r.write_csv(out);
  EXPECT_EQ(out.str(),
            "layer,category,mean_cosine,n_molecules\n"
            "1,short,0.5,3\n"
            "1,medium,0.25,2\n"
            "1,long,nan,0\n");
}

TEST(AttentionMapCsv, OneRowPerQuery) {
  nn::Tensor<double> map(nn::Shape{2, 2}, {0.25, 0.75, 1.0, 0.0});
  std::ostringstream out;
  write_attention_map(out, map);
  EXPECT_EQ(out.str(), "0.25,0.75\n1,0\n");
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(NGrams, JoinedWithSpaces) {
  EXPECT_EQ(token_ngrams("CCO", 3), (std::vector<std::string>{"C", "C", "O", "C C", "C O", "C C O"}));
  EXPECT_EQ(token_ngrams("Cl", 3), (std::vector<std::string>{"Cl"}));
}

TEST(Fingerprint, BitsAreHashedNGrams) {
  const auto f = fingerprint("CCO");
  std::set<std::uint32_t> expected;
  for (const auto& g : token_ngrams("CCO", 3)) expected.insert(std::uint32_t(fnv1a64(g) % 2048));
  EXPECT_EQ(f.bits, std::vector<std::uint32_t>(expected.begin(), expected.end()));
  EXPECT_EQ(f.width, 2048u);
  EXPECT_EQ(fingerprint("CCO").bits, f.bits);
}

TEST(Tanimoto, HandCounts) {
  NGramFingerprint a{{1, 2}}, b{{2, 3}}, empty{};
  EXPECT_DOUBLE_EQ(tanimoto(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(tanimoto(a, a), 1.0);
  EXPECT_DOUBLE_EQ(tanimoto(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(tanimoto(a, empty), 0.0);
  EXPECT_DOUBLE_EQ(tanimoto(fingerprint("CCCC"), fingerprint("NNN")), 0.0);
  NGramFingerprint narrow{{1}, 1024};
  EXPECT_EQ(code_of([&] { tanimoto(a, narrow); }), ErrorCode::kHashConfigMismatch);
  NGramFingerprint bigrams{{1}, 2048, 2};
  EXPECT_EQ(code_of([&] { tanimoto(a, bigrams); }), ErrorCode::kHashConfigMismatch);
}

TEST(Tanimoto, BoundedAndSymmetricOnCorpus) {
  const auto& corpus = fixtures::toy_corpus();
  for (std::size_t i = 0; i + 1 < 60; ++i) {
    const auto a = fingerprint(corpus[i]), b = fingerprint(corpus[i + 1]);
    const double t = tanimoto(a, b);
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0);
    EXPECT_EQ(t, tanimoto(b, a));
    EXPECT_EQ(tanimoto(a, a), 1.0);
  }
}

TEST(SharedNGrams, DistinctCommonGrams) {
  // CCO: C, O, C C, C O, C C O ; CO: C, O, C O
  EXPECT_EQ(shared_ngrams("CCO", "CO"), 3u);
  EXPECT_EQ(shared_ngrams("CCO", "CCO"), 5u);
  EXPECT_EQ(shared_ngrams("CCC", "NNN"), 0u);
}

TEST(Pairs, HeaderRequired) {
  std::istringstream ok("smiles_a,smiles_b\nCC,CO\r\n\nc1ccccc1,CCN\n");
  const auto pairs = parse_pairs(ok);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[1].a, "c1ccccc1");
  EXPECT_EQ(pairs[1].b, "CCN");
  std::istringstream no_header("CC,CO\n");
  EXPECT_EQ(code_of([&] { parse_pairs(no_header); }), ErrorCode::kConfig);
  std::istringstream three("smiles_a,smiles_b\nCC,CO,CN\n");
  EXPECT_EQ(code_of([&] { parse_pairs(three); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { read_pairs("/nonexistent/pairs.csv"); }), ErrorCode::kIo);
}

TEST(Similarity, IdenticalPairsHaveZeroDistanceAndAreDegenerate) {
  const model::Encoder<float> enc(eval_config(AttentionVariant::kLinearRotaryModified));
  const auto& corpus = fixtures::toy_corpus();
  const std::vector<MoleculePair> same = {{corpus[0], corpus[0]}, {corpus[1], corpus[1]}};
  EXPECT_EQ(code_of([&] { embedding_similarity_correlation(enc, fixtures::toy_vocab(), same); }),
            ErrorCode::kDegeneratePairs);
  const std::vector<MoleculePair> one = {{corpus[0], corpus[1]}};
  EXPECT_EQ(code_of([&] { embedding_similarity_correlation(enc, fixtures::toy_vocab(), one); }),
            ErrorCode::kDegeneratePairs);
}

TEST(Similarity, RowsMatchDirectComputation) {
  const model::Encoder<double> enc(eval_config(AttentionVariant::kLinearRotaryModified, 3));
  const auto& vocab = fixtures::toy_vocab();
  const auto& corpus = fixtures::toy_corpus();
  std::vector<MoleculePair> pairs;
  for (std::size_t i = 0; i < 12; ++i) pairs.push_back({corpus[i], corpus[i + 20]});
  pairs.push_back({corpus[5], corpus[5]});
  const auto report = embedding_similarity_correlation(enc, vocab, pairs);
  ASSERT_EQ(report.rows.size(), pairs.size());
  std::vector<double> dist, tani, shared;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto ea = enc.embed_molecule(encode(pairs[i].a, vocab));
    const auto eb = enc.embed_molecule(encode(pairs[i].b, vocab));
    double d = 0.0;
    for (std::size_t j = 0; j < ea.size(); ++j) d += (ea[j] - eb[j]) * (ea[j] - eb[j]);
    d = std::sqrt(d);
    const auto& row = report.rows[i];
    EXPECT_EQ(row.pair_id, i);
    EXPECT_NEAR(row.embed_dist, d, 1e-10);
    EXPECT_EQ(row.tanimoto, tanimoto(fingerprint(pairs[i].a), fingerprint(pairs[i].b)));
    EXPECT_EQ(row.shared_ngrams, shared_ngrams(pairs[i].a, pairs[i].b));
    dist.push_back(d);
    tani.push_back(row.tanimoto);
    shared.push_back(double(row.shared_ngrams));
  }
  EXPECT_EQ(report.rows.back().embed_dist, 0.0);
  EXPECT_EQ(report.rows.back().tanimoto, 1.0);
  EXPECT_NEAR(report.pearson_tanimoto, metrics::pearson(dist, tani), 1e-10);
  EXPECT_NEAR(report.pearson_shared, metrics::pearson(dist, shared), 1e-10);
}

TEST(Similarity, ConstantTanimotoGivesNaN) {
  const model::Encoder<float> enc(eval_config(AttentionVariant::kLinearRotaryModified));
  // Disjoint token sets in every pair: Tanimoto is 0 throughout.
  const std::vector<MoleculePair> pairs = {{"CCCC", "NN"}, {"CC", "OOO"}, {"C", "N"}};
  const auto report = embedding_similarity_correlation(enc, fixtures::toy_vocab(), pairs);
  EXPECT_TRUE(std::isnan(report.pearson_tanimoto));
  EXPECT_TRUE(std::isnan(report.pearson_shared));
  std::ostringstream out;
  report.write_csv(out);
  EXPECT_EQ(out.str().substr(0, 42), "pair_id,embed_dist,tanimoto,shared_ngrams\n");
  EXPECT_NE(out.str().find("\n2,"), std::string::npos);
}

}  // namespace
}  // namespace molformer::analysis
