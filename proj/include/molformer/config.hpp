// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "molformer/analysis.hpp"
#include "molformer/finetune.hpp"
#include "molformer/model.hpp"
#include "molformer/train.hpp"

namespace molformer {

/// Flat key=value run configuration covering the model, training, fine-tuning
/// and analysis settings. Every key has a default; unknown keys are errors.
///
/// File syntax: one `key = value` per line, `#` starts a comment.
/// `model.preset` (toy or xl) sets the layer/head/width defaults; explicitly
/// given model.* keys still win.
class RunConfig {
 public:
  RunConfig();

  /// Reads a file; throws Config naming every unknown or malformed key.
  void load_file(const std::filesystem::path& path);
  /// Applies `key=value` overrides; throws Config naming every bad entry.
  void apply_overrides(const std::vector<std::string>& assignments);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  static std::vector<std::string> known_keys();

  /// Type-checks every key and then the assembled configs; the error lists
  /// all problems at once.
  void validate() const;

  std::uint64_t seed() const;
  model::EncoderConfig encoder(std::size_t vocab_size) const;
  TrainConfig train() const;
  FinetuneConfig finetune() const;
  analysis::CosineOptions cosine() const;
  std::size_t fingerprint_width() const;
  std::size_t ngram_max() const;

  /// Sorted `key = value` lines; load_file() reads it back.
  void write(std::ostream& out) const;
  void write_file(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace molformer
