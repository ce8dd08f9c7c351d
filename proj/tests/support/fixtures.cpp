// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "support/fixtures.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "molformer/dataset.hpp"
#include "support/oracles.hpp"

namespace fixtures {

namespace fs = std::filesystem;

fs::path data_dir() { return MOLFORMER_TEST_DATA_DIR; }
fs::path toy_corpus_path() { return data_dir() / "toy_corpus.smi"; }

const std::vector<std::string>& toy_corpus() {
  static const std::vector<std::string> lines = molformer::read_lines(toy_corpus_path());
  return lines;
}

const molformer::Vocabulary& toy_vocab() {
  static const molformer::Vocabulary vocab = molformer::build_vocabulary(toy_corpus()).vocab;
  return vocab;
}

std::vector<molformer::TokenSequence> toy_sequences() { return molformer::encode_corpus(toy_corpus(), toy_vocab()); }

molformer::model::EncoderConfig toy_config(molformer::attn::AttentionVariant variant, std::uint64_t seed) {
  auto c = molformer::model::EncoderConfig::toy();
  c.vocab_size = toy_vocab().size();
  c.variant = variant;
  c.seed = seed;
  return c;
}

molformer::LabeledDataset length_task(std::size_t rows, std::uint64_t seed, std::size_t max_atoms) {
  molformer::LabeledDataset d;
  d.target_names = {"length"};
  molformer::Rng rng(seed);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t n = 1 + rng.below(max_atoms);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += rng.uniform() < 0.3 ? 'O' : 'C';
    d.smiles.push_back(s);
    d.targets.push_back({double(n)});
  }
  return d;
}

molformer::Split contiguous_split(std::size_t train, std::size_t valid, std::size_t test) {
  molformer::Split s;
  for (std::size_t i = 0; i < train; ++i) s.train.push_back(i);
  for (std::size_t i = 0; i < valid; ++i) s.valid.push_back(train + i);
  for (std::size_t i = 0; i < test; ++i) s.test.push_back(train + valid + i);
  return s;
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  const auto stamp = std::to_string(::getpid()) + "_" + std::to_string(counter++);
  path_ = fs::temp_directory_path() / ("molformer_test_" + stamp);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

CliRun run_cli(const std::string& args) {
  const std::string command = std::string("\"") + MOLFORMER_CLI_PATH + "\" " + args + " 2>&1";
  CliRun run;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed");
  char buffer[4096];
  while (std::fgets(buffer, sizeof buffer, pipe) != nullptr) run.output += buffer;
  const int status = ::pclose(pipe);
  run.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return run;
}

molformer::analysis::MoleculeGeometry synthetic_geometry(const std::string& smiles, std::uint64_t seed,
                                                         std::size_t hydrogens) {
  molformer::Rng rng(seed);
  const auto tokens = molformer::tokenize(smiles);
  const auto atoms = oracle::atom_token_positions(smiles);

  molformer::analysis::MoleculeGeometry g;
  g.smiles = smiles;
  std::array<double, 3> at{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    std::string symbol;
    for (char c : tokens[atoms[i]])
      if (std::isalpha(static_cast<unsigned char>(c)) && c != 'H') symbol += c;
    if (symbol.empty()) symbol = "C";
    symbol[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(symbol[0])));
    symbol.resize(symbol.size() > 1 && std::islower(static_cast<unsigned char>(symbol[1])) ? 2 : 1);
    if (i > 0) {
      double dir[3], norm = 0.0;
      for (double& d : dir) {
        d = rng.normal();
        norm += d * d;
      }
      const double len = 1.2 + 0.4 * rng.uniform();
      for (int c = 0; c < 3; ++c) at[c] += dir[c] / std::sqrt(norm) * len;
    }
    g.symbols.push_back(symbol);
    g.coords.push_back(at);
    for (std::size_t h = 0; h < hydrogens; ++h)
      if (rng.below(atoms.size()) == 0) {
        g.symbols.emplace_back("H");
        g.coords.push_back({at[0] + 1.0, at[1], at[2]});
      }
  }
  return g;
}

std::string format_geometries(const std::vector<molformer::analysis::MoleculeGeometry>& geometries) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& g : geometries) {
    out << g.atom_count() << '\n' << g.smiles << '\n';
    for (std::size_t i = 0; i < g.atom_count(); ++i)
      out << g.symbols[i] << ' ' << g.coords[i][0] << ' ' << g.coords[i][1] << ' ' << g.coords[i][2] << '\n';
  }
  return out.str();
}

}  // namespace fixtures
