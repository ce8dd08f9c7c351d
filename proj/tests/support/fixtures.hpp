// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "molformer/analysis.hpp"
#include "molformer/finetune.hpp"
#include "molformer/model.hpp"
#include "molformer/rng.hpp"
#include "molformer/tensor.hpp"
#include "molformer/tokenizer.hpp"

namespace fixtures {

std::filesystem::path data_dir();
std::filesystem::path toy_corpus_path();
const std::vector<std::string>& toy_corpus();
const molformer::Vocabulary& toy_vocab();
std::vector<molformer::TokenSequence> toy_sequences();

/// Toy-shaped encoder config for the toy vocabulary.
molformer::model::EncoderConfig toy_config(
    molformer::attn::AttentionVariant variant = molformer::attn::AttentionVariant::kLinearRotaryModified,
    std::uint64_t seed = 1);

/// Synthetic length-label task: `rows` unbranched chains of C and O (about 30%
/// O) with 1..max_atoms atoms, labelled with their token count. Chains keep
/// composition roughly fixed so length is the only varying property.
molformer::LabeledDataset length_task(std::size_t rows, std::uint64_t seed, std::size_t max_atoms = 60);

/// First `train`, next `valid`, last `test` rows.
molformer::Split contiguous_split(std::size_t train, std::size_t valid, std::size_t test);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

struct CliRun {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs the built CLI with `args` (shell syntax) and waits for it.
CliRun run_cli(const std::string& args);

template <typename T>
molformer::nn::Tensor<T> random_tensor(molformer::nn::Shape shape, molformer::Rng& rng, double scale = 1.0) {
  std::vector<T> values(molformer::nn::shape_size(shape));
  for (auto& v : values) v = static_cast<T>(scale * rng.normal());
  return molformer::nn::Tensor<T>(std::move(shape), std::move(values));
}

/// Heavy atoms placed by a random walk with 1.2-1.6 A steps, one per atom token
/// of the SMILES; `hydrogens` extra H atoms are interleaved at random.
molformer::analysis::MoleculeGeometry synthetic_geometry(const std::string& smiles, std::uint64_t seed,
                                                         std::size_t hydrogens = 0);

/// Serializes geometries in the extended-XYZ-like block format.
std::string format_geometries(const std::vector<molformer::analysis::MoleculeGeometry>& geometries);

}  // namespace fixtures
