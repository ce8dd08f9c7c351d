// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "molformer/errors.hpp"
#include "molformer/kv.hpp"
#include "molformer/rng.hpp"

namespace molformer {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f;
constexpr std::uint64_t kCorruptStream = 0xc0;
constexpr std::uint64_t kDropoutStream = 0xd0;
constexpr std::size_t kPrefetchDepth = 4;

std::string join_lines(const std::vector<std::size_t>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? "," : "") + std::to_string(lines[i]);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!std::isfinite(lr) || lr < 0.0) problems.push_back("train.lr must be finite and non-negative");
  if (!std::isfinite(finetune_lr) || finetune_lr < 0.0)
    problems.push_back("train.finetune_lr must be finite and non-negative");
  if (batch_size == 0) problems.push_back("train.batch_size must be positive");
  if (epochs == 0) problems.push_back("train.epochs must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0) problems.push_back("train.beta1 must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) problems.push_back("train.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) problems.push_back("train.eps must be positive");
  if (weight_decay < 0.0) problems.push_back("train.weight_decay must be non-negative");
  if (trust_clamp < 0.0) problems.push_back("train.trust_clamp must be non-negative");
  if (corruption.select < 0.0 || corruption.select > 1.0) problems.push_back("train.mask_select must be in [0, 1]");
  if (corruption.mask < 0.0 || corruption.random < 0.0 || corruption.mask + corruption.random > 1.0)
    problems.push_back("train.mask_token and train.mask_random must be non-negative and sum to at most 1");
  try {
    buckets.validate();
  } catch (const Error& e) {
    problems.push_back("buckets: " + e.detail());
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
    throw Error(ErrorCode::kConfig, msg);
  }
}

LambConfig TrainConfig::lamb(double learning_rate) const {
  return LambConfig{learning_rate, beta1, beta2, eps, weight_decay, trust_clamp};
}

std::map<std::string, std::string> TrainConfig::to_pairs() const {
  return {
      {"train.lr", kv::format(lr)},
      {"train.finetune_lr", kv::format(finetune_lr)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.epochs", std::to_string(epochs)},
      {"train.seed", std::to_string(seed)},
      {"train.beta1", kv::format(beta1)},
      {"train.beta2", kv::format(beta2)},
      {"train.eps", kv::format(eps)},
      {"train.weight_decay", kv::format(weight_decay)},
      {"train.trust_clamp", kv::format(trust_clamp)},
      {"train.max_steps", std::to_string(max_steps)},
      {"train.checkpoint_every", std::to_string(checkpoint_every)},
      {"train.eval_every", std::to_string(eval_every)},
      {"train.mask_select", kv::format(corruption.select)},
      {"train.mask_token", kv::format(corruption.mask)},
      {"train.mask_random", kv::format(corruption.random)},
      {"train.bucket_boundaries", buckets.boundaries_string()},
      {"train.bucket_min_emit", buckets.min_emit_string()},
  };
}

TrainConfig TrainConfig::from_pairs(const std::map<std::string, std::string>& pairs) {
  TrainConfig c;
  c.lr = kv::get_double(pairs, "train.lr", c.lr);
  c.finetune_lr = kv::get_double(pairs, "train.finetune_lr", c.finetune_lr);
  c.batch_size = kv::get_u64(pairs, "train.batch_size", c.batch_size);
  c.epochs = kv::get_u64(pairs, "train.epochs", c.epochs);
  c.seed = kv::get_u64(pairs, "train.seed", c.seed);
  c.beta1 = kv::get_double(pairs, "train.beta1", c.beta1);
  c.beta2 = kv::get_double(pairs, "train.beta2", c.beta2);
  c.eps = kv::get_double(pairs, "train.eps", c.eps);
  c.weight_decay = kv::get_double(pairs, "train.weight_decay", c.weight_decay);
  c.trust_clamp = kv::get_double(pairs, "train.trust_clamp", c.trust_clamp);
  c.max_steps = kv::get_u64(pairs, "train.max_steps", c.max_steps);
  c.checkpoint_every = kv::get_u64(pairs, "train.checkpoint_every", c.checkpoint_every);
  c.eval_every = kv::get_u64(pairs, "train.eval_every", c.eval_every);
  c.corruption.select = kv::get_double(pairs, "train.mask_select", c.corruption.select);
  c.corruption.mask = kv::get_double(pairs, "train.mask_token", c.corruption.mask);
  c.corruption.random = kv::get_double(pairs, "train.mask_random", c.corruption.random);
  const auto b = pairs.find("train.bucket_boundaries");
  const auto m = pairs.find("train.bucket_min_emit");
  if (b != pairs.end() || m != pairs.end())
    c.buckets = BucketSpec::parse(b != pairs.end() ? b->second : c.buckets.boundaries_string(),
                                  m != pairs.end() ? m->second : c.buckets.min_emit_string());
  return c;
}

void StreamCursor::store(Checkpoint& checkpoint) const {
  checkpoint.header["cursor.epoch"] = std::to_string(epoch);
  checkpoint.header["cursor.batch"] = std::to_string(batch);
  checkpoint.header["cursor.step"] = std::to_string(step);
  std::string carry;
  for (std::size_t b = 0; b < carry_lines.size(); ++b) carry += (b ? ";" : "") + join_lines(carry_lines[b]);
  checkpoint.header["cursor.carry"] = carry;
  checkpoint.header["cursor.carry_buckets"] = std::to_string(carry_lines.size());
}

StreamCursor StreamCursor::load(const Checkpoint& checkpoint) {
  StreamCursor c;
  c.epoch = kv::parse_u64("cursor.epoch", checkpoint.value("cursor.epoch"));
  c.batch = kv::parse_u64("cursor.batch", checkpoint.value("cursor.batch"));
  c.step = kv::parse_u64("cursor.step", checkpoint.value("cursor.step"));
  const std::size_t buckets = kv::parse_u64("cursor.carry_buckets", checkpoint.value("cursor.carry_buckets"));
  c.carry_lines.assign(buckets, {});
  std::stringstream all(checkpoint.value("cursor.carry"));
  std::string part;
  for (std::size_t b = 0; b < buckets && std::getline(all, part, ';'); ++b) {
    std::stringstream items(part);
    for (std::string item; std::getline(items, item, ',');)
      c.carry_lines[b].push_back(kv::parse_u64("cursor.carry", item));
  }
  return c;
}

BatchStream::BatchStream(const std::vector<TokenSequence>& corpus, const TrainConfig& config, std::size_t vocab_size,
                         StreamCursor start)
    : corpus_(corpus), config_(config), vocab_size_(vocab_size), cursor_(std::move(start)) {
  carry_.assign(config_.buckets.count(), {});
  bool any_carry = false;
  for (const auto& lines : cursor_.carry_lines) any_carry = any_carry || !lines.empty();
  if (!any_carry) return;
  if (cursor_.carry_lines.size() != carry_.size())
    throw Error(ErrorCode::kCheckpointFormat, "carry state has " + std::to_string(cursor_.carry_lines.size()) +
                                                  " buckets, config has " + std::to_string(carry_.size()));
  std::unordered_map<std::size_t, std::size_t> by_line;
  for (std::size_t i = 0; i < corpus_.size(); ++i) by_line.emplace(corpus_[i].source_line, i);
  for (std::size_t b = 0; b < carry_.size(); ++b) {
    for (std::size_t line : cursor_.carry_lines[b]) {
      auto it = by_line.find(line);
      if (it == by_line.end())
        throw Error(ErrorCode::kCheckpointFormat, "carried corpus line " + std::to_string(line) + " is not in the corpus");
      carry_[b].push_back(corpus_[it->second]);
    }
  }
}

std::vector<std::size_t> BatchStream::epoch_order(std::size_t corpus_size, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {kShuffleStream, epoch}));
  for (std::size_t i = corpus_size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::size_t BatchStream::batches_per_epoch() const {
  return (corpus_.size() + config_.batch_size - 1) / config_.batch_size;
}

StreamCursor BatchStream::snapshot() const {
  StreamCursor c = cursor_;
  c.carry_lines.assign(carry_.size(), {});
  for (std::size_t b = 0; b < carry_.size(); ++b)
    for (const auto& s : carry_[b]) c.carry_lines[b].push_back(s.source_line);
  return c;
}

std::optional<PreparedStep> BatchStream::next() {
  while (true) {
    if (cursor_.epoch >= config_.epochs) return std::nullopt;
    if (config_.max_steps != 0 && cursor_.step >= config_.max_steps) return std::nullopt;
    const std::size_t epoch = cursor_.epoch;
    BucketedBatch bucketed;
    if (cursor_.batch < batches_per_epoch()) {
      if (order_epoch_ != epoch) {
        order_ = epoch_order(corpus_.size(), config_.seed, epoch);
        order_epoch_ = epoch;
      }
      const std::size_t begin = cursor_.batch * config_.batch_size;
      const std::size_t end = std::min(begin + config_.batch_size, corpus_.size());
      std::vector<TokenSequence> minibatch;
      minibatch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) minibatch.push_back(corpus_[order_[i]]);
      ++cursor_.batch;
      bucketed = bucketize(minibatch, config_.buckets, carry_);
    } else {
      bucketed = flush_carry(config_.buckets, carry_);
      ++cursor_.epoch;
      cursor_.batch = 0;
    }
    if (bucketed.empty()) continue;

    PreparedStep prepared;
    prepared.step = cursor_.step;
    prepared.epoch = epoch;
    for (const auto& emission : bucketed.buckets) {
      prepared.real_tokens += emission.matrix.real_tokens();
      MaskedBatch masked =
          apply_mlm_corruption(emission.matrix, vocab_size_,
                               derive_seed(config_.seed, {kCorruptStream, cursor_.step, emission.bucket}),
                               config_.corruption);
      if (masked.selected() == 0) continue;
      prepared.buckets.push_back(PreparedBucket{emission.bucket, emission.matrix.rows, std::move(masked)});
    }
    ++cursor_.step;
    prepared.after = snapshot();
    return prepared;
  }
}

void write_metrics_header(std::ostream& out) { out << "step,bucket,loss,tokens_per_sec\n"; }

void write_metrics(std::ostream& out, const StepRecord& record) {
  char buf[128];
  for (const auto& [bucket, loss] : record.bucket_losses) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.9g,%.1f\n", record.step, bucket + 1, loss, record.tokens_per_sec);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "%zu,all,%.9g,%.1f\n", record.step, record.loss, record.tokens_per_sec);
  out << buf;
}

Pretrainer::Pretrainer(model::Encoder<float> encoder, TrainConfig config, std::vector<TokenSequence> corpus,
                       std::size_t threads)
    : encoder_(std::move(encoder)),
      config_(std::move(config)),
      corpus_(std::make_unique<std::vector<TokenSequence>>(std::move(corpus))),
      threads_(std::max<std::size_t>(1, threads)) {
  config_.validate();
  if (corpus_->empty()) throw Error(ErrorCode::kNoValidLines, "pretraining corpus is empty");
  optimizer_ = std::make_unique<Lamb<float>>(config_.lamb(config_.lr), encoder_.parameters());
  stream_ = std::make_unique<BatchStream>(*corpus_, config_, encoder_.config().vocab_size, cursor_);
}

Pretrainer Pretrainer::resume(const Checkpoint& checkpoint, std::vector<TokenSequence> corpus, std::size_t threads,
                              std::optional<TrainConfig> config) {
  TrainConfig tc = config ? *config : TrainConfig::from_pairs(checkpoint.header);
  Pretrainer p(load_encoder<float>(checkpoint), tc, std::move(corpus), threads);
  p.optimizer_->load(checkpoint);
  p.cursor_ = StreamCursor::load(checkpoint);
  p.stream_ = std::make_unique<BatchStream>(*p.corpus_, p.config_, p.encoder_.config().vocab_size, p.cursor_);
  for (const auto& [k, v] : checkpoint.header)
    if (k.rfind("meta.", 0) == 0) p.extra_header_[k] = v;
  return p;
}

bool Pretrainer::finished() const {
  return cursor_.epoch >= config_.epochs || (config_.max_steps != 0 && cursor_.step >= config_.max_steps);
}

template <typename T>
std::vector<std::pair<std::size_t, double>> accumulate_gradients(const model::Encoder<T>& encoder,
                                                                 const PreparedStep& prepared, std::uint64_t seed,
                                                                 bool training) {
  for (auto& p : encoder.parameters()) p.tensor.zero_grad();
  std::size_t total_rows = 0;
  for (const auto& b : prepared.buckets) total_rows += b.rows;
  std::vector<std::pair<std::size_t, double>> losses;
  for (const auto& b : prepared.buckets) {
    const double weight = static_cast<double>(b.rows) / static_cast<double>(total_rows);
    nn::Tape<T> tape;
    model::ForwardOptions options;
    options.training = training;
    options.dropout_seed = derive_seed(seed, {kDropoutStream, prepared.step, b.bucket});
    const auto loss = encoder.mlm_loss(&tape, b.batch, options);
    const double value = static_cast<double>(loss.item());
    losses.emplace_back(b.bucket, value);
    // A non-finite loss is reported by the caller; skip its backward pass.
    if (std::isfinite(value)) tape.backward(loss, static_cast<T>(weight));
  }
  return losses;
}

template std::vector<std::pair<std::size_t, double>> accumulate_gradients(const model::Encoder<float>&,
                                                                          const PreparedStep&, std::uint64_t, bool);
template std::vector<std::pair<std::size_t, double>> accumulate_gradients(const model::Encoder<double>&,
                                                                          const PreparedStep&, std::uint64_t, bool);

StepRecord Pretrainer::apply(const PreparedStep& prepared) {
  const auto started = std::chrono::steady_clock::now();
  StepRecord record;
  record.step = prepared.step + 1;
  record.epoch = prepared.epoch;
  record.tokens = prepared.real_tokens;
  record.bucket_losses = accumulate_gradients(encoder_, prepared, config_.seed);
  std::size_t total_rows = 0;
  for (const auto& b : prepared.buckets) total_rows += b.rows;
  for (std::size_t i = 0; i < prepared.buckets.size(); ++i) {
    const double value = record.bucket_losses[i].second;
    if (!std::isfinite(value))
      throw Error(ErrorCode::kNonFinite, "loss is not finite at step " + std::to_string(record.step) + ", bucket " +
                                             std::to_string(prepared.buckets[i].bucket + 1));
    record.loss += static_cast<double>(prepared.buckets[i].rows) / static_cast<double>(total_rows) * value;
  }
  if (prepared.buckets.empty()) {
    record.loss = std::nan("");
  } else {
    optimizer_->step();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  record.tokens_per_sec = seconds > 0.0 ? static_cast<double>(record.tokens) / seconds : 0.0;
  cursor_ = prepared.after;
  history_.push_back(record);
  return record;
}

std::size_t Pretrainer::run(std::size_t max_new_steps, const StepCallback& on_step) {
  std::size_t taken = 0;
  auto consume = [&](const PreparedStep& prepared) {
    const StepRecord record = apply(prepared);
    ++taken;
    if (on_step) on_step(record);
    if (output_dir_ && config_.checkpoint_every != 0 && cursor_.step % config_.checkpoint_every == 0)
      save(*output_dir_ / ("step_" + std::to_string(cursor_.step) + ".mlfc"));
  };

  if (threads_ <= 1) {
    while (taken < max_new_steps) {
      auto prepared = stream_->next();
      if (!prepared) {
        // Trailing empty flushes still advance the epoch.
        cursor_ = stream_->cursor();
        break;
      }
      consume(*prepared);
    }
  } else {
    // Data preparation runs ahead on a worker; the stream is deterministic, so
    // the consumed sequence is the same as the single-threaded one.
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::optional<PreparedStep>> queue;
    bool stop = false;
    std::exception_ptr producer_error;
    std::thread producer([&] {
      try {
        while (true) {
          auto prepared = stream_->next();
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return stop || queue.size() < kPrefetchDepth; });
          if (stop) return;
          const bool done = !prepared;
          queue.push_back(std::move(prepared));
          cv.notify_all();
          if (done) return;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        producer_error = std::current_exception();
        queue.push_back(std::nullopt);
        cv.notify_all();
      }
    });
    std::exception_ptr consumer_error;
    bool exhausted = false;
    try {
      while (taken < max_new_steps) {
        std::optional<PreparedStep> prepared;
        {
          std::unique_lock lock(mu);
          cv.wait(lock, [&] { return !queue.empty(); });
          prepared = std::move(queue.front());
          queue.pop_front();
          cv.notify_all();
        }
        if (!prepared) {
          exhausted = true;
          break;
        }
        consume(*prepared);
      }
    } catch (...) {
      consumer_error = std::current_exception();
    }
    {
      std::lock_guard lock(mu);
      stop = true;
      cv.notify_all();
    }
    producer.join();
    if (exhausted) cursor_ = stream_->cursor();
    // Prefetched but unconsumed steps are dropped; rewind to what was applied.
    stream_ = std::make_unique<BatchStream>(*corpus_, config_, encoder_.config().vocab_size, cursor_);
    if (consumer_error) std::rethrow_exception(consumer_error);
    if (producer_error) std::rethrow_exception(producer_error);
  }

  if (output_dir_ && finished()) save(*output_dir_ / "final.mlfc");
  return taken;
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint ck;
  store_encoder(ck, encoder_);
  for (const auto& [k, v] : config_.to_pairs()) ck.header[k] = v;
  optimizer_->store(ck);
  cursor_.store(ck);
  for (const auto& [k, v] : extra_header_) ck.header[k] = v;
  return ck;
}

void Pretrainer::save(const std::filesystem::path& path) const { write_checkpoint(path, checkpoint()); }

}  // namespace molformer
