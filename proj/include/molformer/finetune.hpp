// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "molformer/model.hpp"
#include "molformer/tokenizer.hpp"

namespace molformer {

using model::TaskType;

/// `smiles,target1[,target2,...]` with a header row.
struct LabeledDataset {
  std::vector<std::string> target_names;
  std::vector<std::string> smiles;
  std::vector<std::vector<double>> targets;  // [row][target]

  std::size_t size() const { return smiles.size(); }
  std::size_t target_count() const { return target_names.size(); }
};

LabeledDataset parse_labeled_csv(std::istream& in);
LabeledDataset read_labeled_csv(const std::filesystem::path& path);

/// Zero-based row indices per section.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

/// Sections start with `train:`, `valid:` or `test:`; indices follow on the
/// same or later lines, separated by whitespace or commas. Throws EmptySplit
/// when a section is missing or empty and OutOfRange for indices >= rows.
Split parse_split(std::istream& in, std::size_t rows);
Split read_split(const std::filesystem::path& path, std::size_t rows);

enum class FinetuneMode { kFrozen, kFinetuned };

std::string_view task_name(TaskType task);
TaskType parse_task(std::string_view name);
std::string_view mode_name(FinetuneMode mode);
FinetuneMode parse_mode(std::string_view name);

struct FinetuneConfig {
  TaskType task = TaskType::kRegression;
  FinetuneMode mode = FinetuneMode::kFrozen;
  std::size_t head_hidden = 768;
  double dropout = 0.1;
  double lr = 3e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

/// Per-target metrics and their averages. Regression fills rmse/mae,
/// classification fills auc.
struct TaskMetrics {
  TaskType task = TaskType::kRegression;
  std::vector<double> rmse, mae, auc;
  double mean_rmse = 0.0, mean_mae = 0.0, mean_auc = 0.0;
};

/// predictions[row][target]: raw values for regression, positive-class
/// scores for binary classification.
TaskMetrics evaluate_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& labels, TaskType task);

struct FinetuneResult {
  model::FinetuneHead<float> head;
  std::optional<model::Encoder<float>> encoder;  // finetuned mode only
  std::size_t best_epoch = 0;                    // 1-based
  double best_valid_loss = 0.0;
  std::vector<double> train_losses;
  std::vector<std::pair<std::size_t, double>> valid_losses;  // (epoch, loss)
  TaskMetrics test_metrics;
  std::vector<std::vector<double>> test_predictions;
  std::vector<double> target_mean, target_scale;  // regression standardization per target
};

/// Fits a head on the train split, keeps the epoch with the lowest validation
/// loss, and scores the test split. Frozen mode trains the head on fixed
/// embeddings; finetuned mode updates a copy of the encoder jointly. Regression
/// targets are standardized with train-split statistics during fitting.
/// Classification labels must be 0/1 per target.
FinetuneResult finetune(const model::Encoder<float>& encoder, const Vocabulary& vocab, const LabeledDataset& data,
                        const Split& split, const FinetuneConfig& config);

/// Mean-pooled embeddings in input order, [smiles.size()][hidden].
std::vector<std::vector<float>> embed_smiles(const model::Encoder<float>& encoder, const Vocabulary& vocab,
                                             const std::vector<std::string>& smiles, std::size_t batch_size = 64);

}  // namespace molformer
