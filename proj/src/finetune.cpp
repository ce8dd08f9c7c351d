// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/finetune.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "molformer/dataset.hpp"
#include "molformer/errors.hpp"
#include "molformer/lamb.hpp"
#include "molformer/metrics.hpp"
#include "molformer/rng.hpp"

namespace molformer {

namespace {

constexpr std::uint64_t kShuffleStream = 0xf1;
constexpr std::uint64_t kDropoutStream = 0xf2;
constexpr std::uint64_t kHeadStream = 0xf3;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  for (std::string field; std::getline(ss, field, ',');) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using nn::Tape;
using nn::Tensor;

/// Everything the training loop needs to turn row indices into a loss.
struct Problem {
  TaskType task;
  std::size_t targets;
  const std::vector<std::vector<double>>* labels;
  std::vector<double> mean, scale;  // regression only

  std::size_t outputs() const { return task == TaskType::kRegression ? targets : 2 * targets; }

  Tensor<float> loss(Tape<float>* tape, const Tensor<float>& out, const std::vector<std::size_t>& rows) const {
    const std::size_t n = rows.size();
    if (task == TaskType::kRegression) {
      Tensor<float> target({n, targets});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < targets; ++t)
          target.raw()[i * targets + t] = static_cast<float>(((*labels)[rows[i]][t] - mean[t]) / scale[t]);
      return nn::mse_loss(tape, out, target);
    }
    const std::vector<std::uint8_t> all(n, 1);
    Tensor<float> total;
    for (std::size_t t = 0; t < targets; ++t) {
      std::vector<TokenId> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<TokenId>((*labels)[rows[i]][t]);
      Tensor<float> ce = nn::cross_entropy_masked(tape, nn::slice(tape, out, 0, n, 2 * t, 2), y, all);
      total = t == 0 ? ce : nn::add(tape, total, ce);
    }
    return targets == 1 ? total : nn::scale(tape, total, 1.0f / static_cast<float>(targets));
  }

  std::vector<double> predict_row(const Tensor<float>& out, std::size_t i) const {
    std::vector<double> p(targets);
    for (std::size_t t = 0; t < targets; ++t) {
      if (task == TaskType::kRegression) {
        p[t] = static_cast<double>(out(i, t)) * scale[t] + mean[t];
      } else {
        const double d = static_cast<double>(out(i, 2 * t + 1)) - static_cast<double>(out(i, 2 * t));
        p[t] = 1.0 / (1.0 + std::exp(-d));
      }
    }
    return p;
  }
};

std::vector<TokenSequence> encode_rows(const Vocabulary& vocab, const std::vector<std::string>& smiles) {
  std::vector<TokenSequence> out;
  out.reserve(smiles.size());
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    try {
      out.push_back(encode(smiles[i], vocab, i));
    } catch (const Error& e) {
      throw Error(e.code(), "row " + std::to_string(i) + ": " + e.detail());
    }
  }
  return out;
}

/// Produces the head input for a set of rows, with or without the encoder on the tape.
class Featurizer {
 public:
  Featurizer(const model::Encoder<float>* encoder, std::vector<TokenSequence> sequences,
             std::vector<std::vector<float>> frozen)
      : encoder_(encoder), sequences_(std::move(sequences)), frozen_(std::move(frozen)) {}

  Tensor<float> features(Tape<float>* tape, const std::vector<std::size_t>& rows, bool training,
                         std::uint64_t seed) const {
    if (encoder_ == nullptr) {
      const std::size_t h = frozen_.front().size();
      Tensor<float> x({rows.size(), h});
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(frozen_[rows[i]].begin(), frozen_[rows[i]].end(), x.raw() + i * h);
      return x;
    }
    std::vector<TokenSequence> batch;
    batch.reserve(rows.size());
    for (std::size_t r : rows) batch.push_back(sequences_[r]);
    model::ForwardOptions options;
    options.training = training;
    options.dropout_seed = seed;
    return encoder_->embed(tape, pad_sequences(batch), options);
  }

 private:
  const model::Encoder<float>* encoder_;
  std::vector<TokenSequence> sequences_;
  std::vector<std::vector<float>> frozen_;
};

double evaluate_loss(const Featurizer& f, const model::FinetuneHead<float>& head, const Problem& problem,
                     const std::vector<std::size_t>& rows, std::size_t batch_size,
                     std::vector<std::vector<double>>* predictions) {
  double total = 0.0;
  for (std::size_t b = 0; b < rows.size(); b += batch_size) {
    const std::vector<std::size_t> chunk(rows.begin() + b, rows.begin() + std::min(rows.size(), b + batch_size));
    const Tensor<float> out = head.forward(nullptr, f.features(nullptr, chunk, false, 0));
    total += problem.loss(nullptr, out, chunk).item() * static_cast<double>(chunk.size());
    if (predictions)
      for (std::size_t i = 0; i < chunk.size(); ++i) predictions->push_back(problem.predict_row(out, i));
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

LabeledDataset parse_labeled_csv(std::istream& in) {
  LabeledDataset data;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kLabelParse, "labeled dataset is empty");
  const auto header = split_csv_line(trim(line));
  if (header.size() < 2) throw Error(ErrorCode::kLabelParse, "header needs a smiles column and at least one target");
  for (std::size_t i = 1; i < header.size(); ++i) data.target_names.push_back(trim(header[i]));
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::kLabelParse, "line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                                              " fields, header has " + std::to_string(header.size()));
    std::vector<double> targets;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const std::string f = trim(fields[i]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (f.empty() || used != f.size() || !std::isfinite(v))
        throw Error(ErrorCode::kLabelParse, "line " + std::to_string(lineno) + ": target '" + f + "' is not a number");
      targets.push_back(v);
    }
    data.smiles.push_back(trim(fields[0]));
    data.targets.push_back(std::move(targets));
  }
  if (data.smiles.empty()) throw Error(ErrorCode::kLabelParse, "labeled dataset has no rows");
  return data;
}

LabeledDataset read_labeled_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_labeled_csv(in);
}

Split parse_split(std::istream& in, std::size_t rows) {
  Split split;
  std::vector<std::size_t>* current = nullptr;
  bool seen[3] = {false, false, false};
  std::string token;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (char& c : text)
    if (c == ',') c = ' ';
  std::stringstream ss(text);
  while (ss >> token) {
    auto section = [&](const std::string& name, std::vector<std::size_t>& dst, int k) {
      if (token.rfind(name + ":", 0) != 0) return false;
      current = &dst;
      seen[k] = true;
      token = token.substr(name.size() + 1);
      return true;
    };
    if (!section("train", split.train, 0) && !section("valid", split.valid, 1)) section("test", split.test, 2);
    if (token.empty()) continue;
    if (current == nullptr) throw Error(ErrorCode::kEmptySplit, "index '" + token + "' appears before any section");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || token[0] == '-')
      throw Error(ErrorCode::kLabelParse, "split index '" + token + "' is not a non-negative integer");
    if (v >= rows)
      throw Error(ErrorCode::kOutOfRange,
                  "split index " + token + " is out of range for " + std::to_string(rows) + " rows");
    current->push_back(static_cast<std::size_t>(v));
  }
  const char* names[3] = {"train", "valid", "test"};
  const std::vector<std::size_t>* parts[3] = {&split.train, &split.valid, &split.test};
  for (int k = 0; k < 3; ++k)
    if (!seen[k] || parts[k]->empty()) throw Error(ErrorCode::kEmptySplit, std::string(names[k]) + " split is empty");
  return split;
}

Split read_split(const std::filesystem::path& path, std::size_t rows) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_split(in, rows);
}

std::string_view task_name(TaskType task) {
  return task == TaskType::kRegression ? "regression" : "classification";
}

TaskType parse_task(std::string_view name) {
  if (name == "regression") return TaskType::kRegression;
  if (name == "classification") return TaskType::kClassification;
  throw Error(ErrorCode::kConfig, "unknown task '" + std::string(name) + "' (regression, classification)");
}

std::string_view mode_name(FinetuneMode mode) { return mode == FinetuneMode::kFrozen ? "frozen" : "finetuned"; }

FinetuneMode parse_mode(std::string_view name) {
  if (name == "frozen") return FinetuneMode::kFrozen;
  if (name == "finetuned") return FinetuneMode::kFinetuned;
  throw Error(ErrorCode::kConfig, "unknown mode '" + std::string(name) + "' (frozen, finetuned)");
}

TaskMetrics evaluate_metrics(const std::vector<std::vector<double>>& predictions,
                             const std::vector<std::vector<double>>& labels, TaskType task) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::kDimMismatch, std::to_string(predictions.size()) + " predictions for " +
                                             std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw Error(ErrorCode::kEmptySplit, "no rows to evaluate");
  const std::size_t targets = labels.front().size();
  TaskMetrics m;
  m.task = task;
  for (std::size_t t = 0; t < targets; ++t) {
    std::vector<double> p, y;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      p.push_back(predictions[i].at(t));
      y.push_back(labels[i].at(t));
    }
    if (task == TaskType::kRegression) {
      m.rmse.push_back(metrics::rmse(p, y));
      m.mae.push_back(metrics::mae(p, y));
    } else {
      std::vector<int> classes(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) classes[i] = static_cast<int>(y[i]);
      m.auc.push_back(metrics::roc_auc(p, classes));
    }
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  m.mean_rmse = mean(m.rmse);
  m.mean_mae = mean(m.mae);
  m.mean_auc = mean(m.auc);
  return m;
}

std::vector<std::vector<float>> embed_smiles(const model::Encoder<float>& encoder, const Vocabulary& vocab,
                                             const std::vector<std::string>& smiles, std::size_t batch_size) {
  const auto sequences = encode_rows(vocab, smiles);
  std::vector<std::vector<float>> out;
  out.reserve(sequences.size());
  const std::size_t h = encoder.config().hidden;
  for (std::size_t b = 0; b < sequences.size(); b += batch_size) {
    const std::size_t e = std::min(sequences.size(), b + batch_size);
    const auto pooled = encoder.embed(nullptr, pad_sequences(std::span(sequences).subspan(b, e - b)));
    for (std::size_t i = 0; i < e - b; ++i)
      out.emplace_back(pooled.values().begin() + i * h, pooled.values().begin() + (i + 1) * h);
  }
  return out;
}

FinetuneResult finetune(const model::Encoder<float>& encoder, const Vocabulary& vocab, const LabeledDataset& data,
                        const Split& split, const FinetuneConfig& config) {
  if (split.train.empty() || split.valid.empty() || split.test.empty())
    throw Error(ErrorCode::kEmptySplit, "train, valid and test splits must all be non-empty");
  if (config.batch_size == 0 || config.epochs == 0)
    throw Error(ErrorCode::kConfig, "fine-tuning needs positive batch_size and epochs");
  if (vocab.size() != encoder.config().vocab_size)
    throw Error(ErrorCode::kDimMismatch, "vocabulary has " + std::to_string(vocab.size()) +
                                             " tokens, checkpoint expects " +
                                             std::to_string(encoder.config().vocab_size));
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (std::size_t r : *part)
      if (r >= data.size()) throw Error(ErrorCode::kOutOfRange, "split index " + std::to_string(r) + " out of range");

  Problem problem{config.task, data.target_count(), &data.targets, {}, {}};
  if (config.task == TaskType::kRegression) {
    for (std::size_t t = 0; t < problem.targets; ++t) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t r : split.train) mean += data.targets[r][t];
      mean /= static_cast<double>(split.train.size());
      for (std::size_t r : split.train) sq += (data.targets[r][t] - mean) * (data.targets[r][t] - mean);
      const double sd = std::sqrt(sq / static_cast<double>(split.train.size()));
      problem.mean.push_back(mean);
      problem.scale.push_back(sd > 0.0 ? sd : 1.0);
    }
  } else {
    for (std::size_t r = 0; r < data.size(); ++r)
      for (double y : data.targets[r])
        if (y != 0.0 && y != 1.0)
          throw Error(ErrorCode::kLabelParse, "row " + std::to_string(r) + ": class label " + std::to_string(y) +
                                                  " is not 0 or 1");
  }

  auto sequences = encode_rows(vocab, data.smiles);
  std::optional<model::Encoder<float>> tuned;
  std::vector<std::vector<float>> frozen;
  if (config.mode == FinetuneMode::kFinetuned) {
    tuned.emplace(encoder.clone());
  } else {
    frozen = embed_smiles(encoder, vocab, data.smiles, config.batch_size);
  }
  const Featurizer featurizer(tuned ? &*tuned : nullptr, std::move(sequences), std::move(frozen));

  model::HeadConfig hc;
  hc.input_dim = encoder.config().hidden;
  hc.hidden = config.head_hidden;
  hc.outputs = problem.outputs();
  hc.dropout = config.dropout;
  hc.seed = derive_seed(config.seed, {kHeadStream});
  FinetuneResult result{model::FinetuneHead<float>(hc), std::nullopt, 0, 0.0, {}, {}, {}, {}, problem.mean,
                        problem.scale};
  model::FinetuneHead<float> head(hc);

  auto params = head.parameters();
  if (tuned) {
    tuned->set_requires_grad(true);
    for (auto& p : tuned->parameters()) params.push_back(p);
  }
  Lamb<float> optimizer(LambConfig{config.lr, config.beta1, config.beta2, config.eps, config.weight_decay, 10.0},
                        params);

  result.best_valid_loss = std::numeric_limits<double>::infinity();
  const std::size_t eval_every = std::max<std::size_t>(1, config.eval_every);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng rng(derive_seed(config.seed, {kShuffleStream, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::vector<std::size_t> rows(order.begin() + b,
                                          order.begin() + std::min(order.size(), b + config.batch_size));
      for (auto& p : params) p.tensor.zero_grad();
      nn::Tape<float> tape;
      const std::uint64_t seed = derive_seed(config.seed, {kDropoutStream, epoch, b});
      const auto x = featurizer.features(&tape, rows, true, seed);
      const auto out = head.forward(&tape, x, true, derive_seed(seed, {1}));
      const auto loss = problem.loss(&tape, out, rows);
      if (!std::isfinite(loss.item()))
        throw Error(ErrorCode::kNonFinite, "fine-tuning loss is not finite in epoch " + std::to_string(epoch + 1));
      epoch_loss += loss.item() * static_cast<double>(rows.size());
      tape.backward(loss);
      optimizer.step();
    }
    result.train_losses.push_back(epoch_loss / static_cast<double>(order.size()));

    if ((epoch + 1) % eval_every != 0 && epoch + 1 != config.epochs) continue;
    const double valid = evaluate_loss(featurizer, head, problem, split.valid, config.batch_size, nullptr);
    result.valid_losses.emplace_back(epoch + 1, valid);
    if (valid < result.best_valid_loss) {
      result.best_valid_loss = valid;
      result.best_epoch = epoch + 1;
      result.head = head.clone();
      if (tuned) result.encoder.emplace(tuned->clone());
    }
  }

  // Score the selected snapshot; frozen mode reuses the fixed embeddings.
  std::optional<Featurizer> tuned_features;
  if (result.encoder) tuned_features.emplace(&*result.encoder, encode_rows(vocab, data.smiles),
                                             std::vector<std::vector<float>>{});
  evaluate_loss(tuned_features ? *tuned_features : featurizer, result.head, problem, split.test, config.batch_size,
                &result.test_predictions);
  std::vector<std::vector<double>> test_labels;
  for (std::size_t r : split.test) test_labels.push_back(data.targets[r]);
  result.test_metrics = evaluate_metrics(result.test_predictions, test_labels, config.task);
  return result;
}

}  // namespace molformer
