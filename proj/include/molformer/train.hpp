// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "molformer/checkpoint.hpp"
#include "molformer/dataset.hpp"
#include "molformer/lamb.hpp"
#include "molformer/model.hpp"

namespace molformer {

struct TrainConfig {
  double lr = 1.6e-4;
  double finetune_lr = 3e-5;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-6;
  double weight_decay = 0.0;
  double trust_clamp = 10.0;
  std::size_t max_steps = 0;         // 0: run all epochs
  std::size_t checkpoint_every = 0;  // optimizer steps between step_N files; 0: final only
  std::size_t eval_every = 0;        // fine-tuning: epochs between validation passes (0 means every epoch)
  CorruptionRates corruption;
  BucketSpec buckets = BucketSpec::defaults();

  void validate() const;
  LambConfig lamb(double learning_rate) const;

  std::map<std::string, std::string> to_pairs() const;
  static TrainConfig from_pairs(const std::map<std::string, std::string>& pairs);
};

/// Where the data stream stands: the next minibatch of an epoch, the number of
/// optimizer steps taken, and the rows waiting in each carry queue (by source
/// line). Shuffles and corruption draws are keyed by (seed, epoch) and
/// (seed, step, bucket), so this is all resuming needs.
struct StreamCursor {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::size_t step = 0;
  std::vector<std::vector<std::size_t>> carry_lines;

  void store(Checkpoint& checkpoint) const;
  static StreamCursor load(const Checkpoint& checkpoint);
};

struct PreparedBucket {
  std::size_t bucket = 0;
  std::size_t rows = 0;
  MaskedBatch batch;
};

/// Everything one optimizer step consumes, plus the cursor after it.
struct PreparedStep {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<PreparedBucket> buckets;  // only buckets with selected positions
  std::size_t real_tokens = 0;
  StreamCursor after;
};

/// Deterministic producer of PreparedSteps: shuffle, bucketize with carry,
/// flush at epoch end, corrupt.
class BatchStream {
 public:
  BatchStream(const std::vector<TokenSequence>& corpus, const TrainConfig& config, std::size_t vocab_size,
              StreamCursor start = {});

  /// Empty once all epochs (or max_steps) are consumed.
  std::optional<PreparedStep> next();
  const StreamCursor& cursor() const { return cursor_; }

  /// The corpus order for one epoch.
  static std::vector<std::size_t> epoch_order(std::size_t corpus_size, std::uint64_t seed, std::size_t epoch);

 private:
  std::size_t batches_per_epoch() const;
  StreamCursor snapshot() const;

  const std::vector<TokenSequence>& corpus_;
  TrainConfig config_;
  std::size_t vocab_size_;
  StreamCursor cursor_;
  CarryQueues carry_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = SIZE_MAX;
};

/// Zeroes the encoder's gradients, then back-propagates every bucket's masked
/// loss with weight rows_k / rows_total. Dropout (when `training`) is keyed by
/// (seed, step, bucket). Returns (bucket, loss) pairs in bucket order.
template <typename T>
std::vector<std::pair<std::size_t, double>> accumulate_gradients(const model::Encoder<T>& encoder,
                                                                 const PreparedStep& prepared, std::uint64_t seed,
                                                                 bool training = true);

struct StepRecord {
  std::size_t step = 0;  // 1-based count of optimizer steps taken
  std::size_t epoch = 0;
  std::vector<std::pair<std::size_t, double>> bucket_losses;  // zero-based bucket, loss
  double loss = 0.0;                                          // accumulation-weighted
  std::size_t tokens = 0;
  double tokens_per_sec = 0.0;
};

void write_metrics_header(std::ostream& out);
/// One row per bucket, then an aggregate row with bucket "all". Buckets are
/// printed 1-based.
void write_metrics(std::ostream& out, const StepRecord& record);

/// Masked-LM pretraining: per step, every bucket's masked loss is
/// back-propagated with weight rows_k / rows_total, then one optimizer step.
class Pretrainer {
 public:
  using StepCallback = std::function<void(const StepRecord&)>;

  Pretrainer(model::Encoder<float> encoder, TrainConfig config, std::vector<TokenSequence> corpus,
             std::size_t threads = 1);

  /// Continues from a checkpoint written by checkpoint(). `config` overrides
  /// the stored training config when given.
  static Pretrainer resume(const Checkpoint& checkpoint, std::vector<TokenSequence> corpus, std::size_t threads = 1,
                           std::optional<TrainConfig> config = std::nullopt);

  /// Runs until the stream is exhausted or `max_new_steps` steps are taken.
  /// Writes step_N.mlfc on the checkpoint cadence and final.mlfc at the end
  /// of training when an output directory is set.
  std::size_t run(std::size_t max_new_steps = SIZE_MAX, const StepCallback& on_step = {});

  bool finished() const;
  Checkpoint checkpoint() const;
  void set_output_dir(std::filesystem::path dir) { output_dir_ = std::move(dir); }
  /// Extra header entries recorded in every checkpoint (e.g. the vocabulary
  /// path). Keys must start with "meta." so resume() can carry them over.
  void set_header(const std::string& key, const std::string& value) { extra_header_[key] = value; }

  const model::Encoder<float>& encoder() const { return encoder_; }
  const TrainConfig& config() const { return config_; }
  const StreamCursor& cursor() const { return cursor_; }
  const std::vector<StepRecord>& history() const { return history_; }

 private:
  StepRecord apply(const PreparedStep& prepared);
  void save(const std::filesystem::path& path) const;

  model::Encoder<float> encoder_;
  TrainConfig config_;
  std::unique_ptr<std::vector<TokenSequence>> corpus_;  // stable address for the stream
  std::size_t threads_;
  std::unique_ptr<Lamb<float>> optimizer_;
  StreamCursor cursor_;
  std::unique_ptr<BatchStream> stream_;
  std::vector<StepRecord> history_;
  std::optional<std::filesystem::path> output_dir_;
  std::map<std::string, std::string> extra_header_;
};

}  // namespace molformer
