// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/finetune.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "molformer/errors.hpp"
#include "molformer/metrics.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace molformer {
namespace {

using model::AttentionVariant;
using model::Encoder;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kConfig;
}

// Label = token count of the molecule.
LabeledDataset length_dataset(std::size_t n) {
  LabeledDataset d;
  d.target_names = {"length"};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = fixtures::toy_corpus()[i];
    d.smiles.push_back(s);
    d.targets.push_back({double(tokenize(s).size())});
  }
  return d;
}

FinetuneConfig fast_config(TaskType task) {
  FinetuneConfig c;
  c.task = task;
  c.head_hidden = 32;
  c.dropout = 0.0;
  c.lr = 1e-2;
  c.epochs = 60;
  c.batch_size = 16;
  c.seed = 2;
  return c;
}

TEST(LabeledCsv, ParsesHeaderAndTargets) {
  std::istringstream in("smiles,a,b\nCC,1.5,0\r\nCO,-2,1e-3\n\n");
  const auto d = parse_labeled_csv(in);
  EXPECT_EQ(d.target_names, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.smiles[1], "CO");
  EXPECT_EQ(d.targets[0][0], 1.5);
  EXPECT_EQ(d.targets[1][1], 1e-3);
}

TEST(LabeledCsv, Errors) {
  for (const char* text : {"", "smiles\nCC\n", "smiles,y\nCC,abc\n", "smiles,y\nCC,1,2\n", "smiles,y\n"}) {
    std::istringstream in(text);
    EXPECT_EQ(code_of([&] { parse_labeled_csv(in); }), ErrorCode::kLabelParse) << text;
  }
  fixtures::TempDir dir;
  EXPECT_EQ(code_of([&] { read_labeled_csv(dir / "none.csv"); }), ErrorCode::kIo);
}

TEST(SplitFile, SectionsAndSeparators) {
  std::istringstream in("train: 0 1, 2\n3\nvalid:\n4\ntest: 5,6\n");
  const auto s = parse_split(in, 7);
  EXPECT_EQ(s.train, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(s.valid, (std::vector<std::size_t>{4}));
  EXPECT_EQ(s.test, (std::vector<std::size_t>{5, 6}));
}

TEST(SplitFile, Errors) {
  auto code = [](const std::string& text, std::size_t rows) {
    std::istringstream in(text);
    return code_of([&] { parse_split(in, rows); });
  };
  EXPECT_EQ(code("train: 0\nvalid: 1\n", 3), ErrorCode::kEmptySplit);
  EXPECT_EQ(code("train: 0\nvalid: 1\ntest:\n", 3), ErrorCode::kEmptySplit);
  EXPECT_EQ(code("0\ntrain: 1\n", 3), ErrorCode::kEmptySplit);
  EXPECT_EQ(code("train: 0\nvalid: 1\ntest: 9\n", 3), ErrorCode::kOutOfRange);
  EXPECT_EQ(code("train: x\nvalid: 1\ntest: 2\n", 3), ErrorCode::kLabelParse);
}

TEST(EvaluateMetrics, PerTargetAndMeans) {
  const std::vector<std::vector<double>> pred = {{1, 0.8}, {2, 0.6}, {3, 0.4}, {4, 0.2}};
  const std::vector<std::vector<double>> reg = {{1, 0}, {2, 0}, {3, 0}, {8, 0}};
  const auto m = evaluate_metrics(pred, reg, TaskType::kRegression);
  ASSERT_EQ(m.rmse.size(), 2u);
  EXPECT_DOUBLE_EQ(m.mae[0], 1.0);
  EXPECT_DOUBLE_EQ(m.rmse[0], 2.0);
  EXPECT_DOUBLE_EQ(m.mae[1], 0.5);
  EXPECT_DOUBLE_EQ(m.mean_mae, 0.75);
  const std::vector<std::vector<double>> cls = {{1, 1}, {0, 0}, {1, 1}, {0, 0}};
  const auto c = evaluate_metrics(pred, cls, TaskType::kClassification);
  EXPECT_DOUBLE_EQ(c.auc[1], 0.75);
  EXPECT_DOUBLE_EQ(c.auc[0], 0.25);
  EXPECT_DOUBLE_EQ(c.mean_auc, 0.5);
  const std::vector<std::vector<double>> single = {{1, 1}, {1, 0}, {1, 1}, {1, 0}};
  EXPECT_EQ(code_of([&] { evaluate_metrics(pred, single, TaskType::kClassification); }), ErrorCode::kSingleClass);
}

TEST(EmbedSmiles, MatchesPerMoleculeEmbeddingInOrder) {
  const Encoder<float> enc(fixtures::toy_config());
  const std::vector<std::string> smiles(fixtures::toy_corpus().begin(), fixtures::toy_corpus().begin() + 11);
  const auto batched = embed_smiles(enc, fixtures::toy_vocab(), smiles, 4);
  ASSERT_EQ(batched.size(), 11u);
  for (std::size_t i = 0; i < 11; ++i) {
    const auto single = enc.embed_molecule(encode(smiles[i], fixtures::toy_vocab()));
    for (std::size_t j = 0; j < single.size(); ++j) ASSERT_NEAR(batched[i][j], single[j], 1e-5);
  }
}

TEST(Finetune, ConstantLabelsCollapseToBias) {
  const Encoder<float> enc(fixtures::toy_config());
  auto data = length_dataset(48);
  for (auto& t : data.targets) t[0] = 7.25;
  const auto r = finetune(enc, fixtures::toy_vocab(), data, fixtures::contiguous_split(32, 8, 8), fast_config(TaskType::kRegression));
  EXPECT_LT(r.test_metrics.rmse[0], 1e-2);
  for (const auto& p : r.test_predictions) EXPECT_NEAR(p[0], 7.25, 1e-2);
  EXPECT_FALSE(r.encoder.has_value());
}

TEST(Finetune, LengthIsDecodableFromFrozenEmbeddings) {
  const Encoder<float> enc(fixtures::toy_config(AttentionVariant::kLinearRotaryModified, 6));
  const auto data = fixtures::length_task(256, 5);
  for (std::size_t i = 0; i < data.size(); ++i) ASSERT_EQ(double(tokenize(data.smiles[i]).size()), data.targets[i][0]);
  const auto split = fixtures::contiguous_split(192, 32, 32);

  // The least-squares oracle first: a linear readout of the embeddings.
  const auto emb = embed_smiles(enc, fixtures::toy_vocab(), data.smiles);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (auto i : split.train) {
    xs.emplace_back(emb[i].begin(), emb[i].end());
    ys.push_back(data.targets[i][0]);
  }
  const auto w = oracle::least_squares(xs, ys, 1e-3);
  double mean = 0.0;
  for (double y : ys) mean += y / double(ys.size());
  double ls_err = 0.0, const_err = 0.0;
  for (auto i : split.test) {
    const std::vector<double> x(emb[i].begin(), emb[i].end());
    ls_err += std::pow(oracle::predict_linear(w, x) - data.targets[i][0], 2);
    const_err += std::pow(mean - data.targets[i][0], 2);
  }
  ls_err = std::sqrt(ls_err / double(split.test.size()));
  const_err = std::sqrt(const_err / double(split.test.size()));
  RecordProperty("least_squares_rmse", std::to_string(ls_err));
  RecordProperty("constant_rmse", std::to_string(const_err));
  ASSERT_LT(ls_err, const_err / 3.0);

  auto cfg = fast_config(TaskType::kRegression);
  cfg.head_hidden = 256;
  cfg.epochs = 400;
  cfg.batch_size = 32;
  const auto r = finetune(enc, fixtures::toy_vocab(), data, split, cfg);
  RecordProperty("head_rmse", std::to_string(r.test_metrics.rmse[0]));
  EXPECT_LT(r.test_metrics.rmse[0], const_err / 3.0);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_LE(r.best_epoch, cfg.epochs);
  double best = 1e300;
  for (const auto& [epoch, loss] : r.valid_losses) best = std::min(best, loss);
  EXPECT_EQ(r.best_valid_loss, best);
}

TEST(Finetune, ClassificationOnLengthThreshold) {
  const Encoder<float> enc(fixtures::toy_config(AttentionVariant::kLinearRotaryModified, 6));
  auto data = fixtures::length_task(256, 8);
  data.target_names = {"long"};
  for (auto& t : data.targets) t[0] = t[0] > 30.0 ? 1.0 : 0.0;
  auto cfg = fast_config(TaskType::kClassification);
  cfg.head_hidden = 128;
  cfg.epochs = 100;
  const auto split = fixtures::contiguous_split(192, 32, 32);
  const auto r = finetune(enc, fixtures::toy_vocab(), data, split, cfg);
  ASSERT_EQ(r.test_metrics.auc.size(), 1u);
  RecordProperty("auc", std::to_string(r.test_metrics.auc[0]));
  EXPECT_GT(r.test_metrics.auc[0], 0.9);
  for (const auto& p : r.test_predictions) {
    EXPECT_GE(p[0], 0.0);
    EXPECT_LE(p[0], 1.0);
  }
  auto bad = data;
  bad.targets[0][0] = 2.0;
  EXPECT_EQ(code_of([&] { finetune(enc, fixtures::toy_vocab(), bad, split, cfg); }), ErrorCode::kLabelParse);
}

TEST(Finetune, FrozenLeavesEncoderFinetunedCopiesIt) {
  const Encoder<float> enc(fixtures::toy_config());
  const auto before = enc.parameters()[0].tensor.clone();
  const auto data = length_dataset(24);
  auto cfg = fast_config(TaskType::kRegression);
  cfg.epochs = 2;
  cfg.mode = FinetuneMode::kFinetuned;
  cfg.lr = 1e-3;
  const auto r = finetune(enc, fixtures::toy_vocab(), data, fixtures::contiguous_split(16, 4, 4), cfg);
  ASSERT_TRUE(r.encoder.has_value());
  EXPECT_TRUE(std::equal(before.values().begin(), before.values().end(), enc.parameters()[0].tensor.values().begin()));
  const auto after = r.encoder->parameters()[0].tensor;
  EXPECT_FALSE(std::equal(before.values().begin(), before.values().end(), after.values().begin()));
  EXPECT_EQ(r.train_losses.size(), 2u);
}

TEST(Finetune, EmptySplitIsAnError) {
  const Encoder<float> enc(fixtures::toy_config());
  const auto data = length_dataset(8);
  Split s = fixtures::contiguous_split(4, 2, 2);
  s.valid.clear();
  EXPECT_EQ(code_of([&] { finetune(enc, fixtures::toy_vocab(), data, s, fast_config(TaskType::kRegression)); }),
            ErrorCode::kEmptySplit);
}

}  // namespace
}  // namespace molformer
