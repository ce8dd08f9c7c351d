// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: vocab, stats, pretrain, finetune, embed,
// analyze-attention, similarity.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "molformer/analysis.hpp"
#include "molformer/checkpoint.hpp"
#include "molformer/config.hpp"
#include "molformer/dataset.hpp"
#include "molformer/errors.hpp"
#include "molformer/finetune.hpp"
#include "molformer/tokenizer.hpp"
#include "molformer/train.hpp"

namespace fs = std::filesystem;
using namespace molformer;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration file (key = value lines)");
  cmd->add_option("--seed", o.seed, "Root seed for every random draw");
  cmd->add_option("--threads", o.threads, "Worker threads (1 keeps runs bit-reproducible)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", o.overrides, "Override a config key: --set key=value (repeatable)");
}

RunConfig build_config(const CommonOptions& o, const Checkpoint* checkpoint = nullptr) {
  RunConfig rc;
  if (checkpoint) {
    // Resumed runs start from the stored training settings.
    for (const auto& [k, v] : checkpoint->header)
      if (k.rfind("train.", 0) == 0 && k != "train.seed") rc.set(k, v);
    if (checkpoint->has("train.seed")) rc.set("seed", checkpoint->value("train.seed"));
  }
  if (!o.config.empty()) rc.load_file(o.config);
  rc.apply_overrides(o.overrides);
  if (o.seed) rc.set("seed", std::to_string(*o.seed));
  rc.validate();
  return rc;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

Vocabulary load_vocab(const std::string& path) { return Vocabulary::load(path); }

std::string resolve_vocab(const std::string& given, const Checkpoint& ck) {
  if (!given.empty()) return given;
  if (ck.has("meta.vocab_path")) return ck.value("meta.vocab_path");
  throw Error(ErrorCode::kConfig, "no --vocab given and the checkpoint records no vocabulary path");
}

template <typename T>
model::Encoder<T> load_model(const std::string& checkpoint_path, const Checkpoint& ck, const Vocabulary& vocab,
                             const std::string& vocab_path) {
  model::Encoder<T> encoder = load_encoder<T>(ck);
  if (encoder.config().vocab_size != vocab.size())
    throw Error(ErrorCode::kDimMismatch, "checkpoint " + checkpoint_path + " expects " +
                                             std::to_string(encoder.config().vocab_size) +
                                             " tokens but vocabulary " + vocab_path + " has " +
                                             std::to_string(vocab.size()));
  return encoder;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

int cmd_vocab(const std::string& corpus, const std::string& out_path) {
  const VocabularyBuild built = build_vocabulary(read_lines(corpus));
  built.vocab.save(out_path);
  std::cerr << "vocabulary: " << built.vocab.size() << " tokens from " << built.accepted_lines << " lines ("
            << built.skipped_lines << " skipped)\n";
  return 0;
}

int cmd_stats(const std::string& corpus, const std::string& out_path) {
  const auto lines = read_lines(corpus);
  const CorpusStats stats = corpus_stats(lines);
  if (out_path.empty()) {
    stats.write_csv(std::cout);
  } else {
    auto out = open_out(out_path);
    stats.write_csv(out);
  }
  return 0;
}

int cmd_pretrain(const CommonOptions& common, const std::string& corpus, const std::string& vocab_path,
                 const std::string& out_dir, const std::string& resume, std::optional<double> lr) {
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto lines = read_lines(corpus);
  std::size_t skipped = 0;
  auto sequences = encode_corpus(lines, vocab, &skipped);
  if (skipped) std::cerr << "skipped " << skipped << " corpus lines that do not encode\n";

  std::optional<Checkpoint> ck;
  if (!resume.empty()) ck = read_checkpoint(resume);
  CommonOptions effective = common;
  if (lr) effective.overrides.push_back("train.lr=" + fmt(*lr));
  const RunConfig rc = build_config(effective, ck ? &*ck : nullptr);

  ensure_dir(out_dir);
  rc.write_file(fs::path(out_dir) / "config.txt");

  std::optional<Pretrainer> trainer;
  if (ck) {
    trainer.emplace(Pretrainer::resume(*ck, std::move(sequences), common.threads, rc.train()));
  } else {
    trainer.emplace(model::Encoder<float>(rc.encoder(vocab.size())), rc.train(), std::move(sequences),
                    common.threads);
  }
  trainer->set_output_dir(out_dir);
  trainer->set_header("meta.vocab_path", fs::absolute(vocab_path).string());
  trainer->set_header("meta.corpus_path", fs::absolute(corpus).string());

  const fs::path metrics_path = fs::path(out_dir) / "metrics.csv";
  const bool append = ck && fs::exists(metrics_path);
  auto metrics = open_out(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!append) write_metrics_header(metrics);
  write_metrics_header(std::cout);
  trainer->run(SIZE_MAX, [&](const StepRecord& record) {
    write_metrics(metrics, record);
    write_metrics(std::cout, record);
    metrics.flush();
  });
  std::cerr << "finished at step " << trainer->cursor().step << "; checkpoints in " << out_dir << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint_path, const std::string& vocab_arg, const std::string& corpus,
              const std::string& out_path) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const std::string vocab_path = resolve_vocab(vocab_arg, ck);
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto encoder = load_model<float>(checkpoint_path, ck, vocab, vocab_path);
  std::vector<std::string> smiles;
  for (auto& line : read_lines(corpus))
    if (!line.empty()) smiles.push_back(line);
  const auto embeddings = embed_smiles(encoder, vocab, smiles);
  auto out = open_out(out_path);
  out << "smiles";
  for (std::size_t k = 0; k < encoder.config().hidden; ++k) out << ",e" << k;
  out << '\n';
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    out << smiles[i];
    for (float v : embeddings[i]) out << ',' << fmt(v);
    out << '\n';
  }
  return 0;
}

int cmd_finetune(const CommonOptions& common, const std::string& checkpoint_path, const std::string& vocab_arg,
                 const std::string& data_path, const std::string& split_path, const std::string& out_dir) {
  const RunConfig rc = build_config(common);
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const std::string vocab_path = resolve_vocab(vocab_arg, ck);
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto encoder = load_model<float>(checkpoint_path, ck, vocab, vocab_path);
  const LabeledDataset data = read_labeled_csv(data_path);
  const Split split = read_split(split_path, data.size());
  const FinetuneConfig config = rc.finetune();
  const FinetuneResult result = finetune(encoder, vocab, data, split, config);

  ensure_dir(out_dir);
  rc.write_file(fs::path(out_dir) / "config.txt");
  {
    auto out = open_out(fs::path(out_dir) / "results.csv");
    out << "metric,target,value\n";
    const auto& m = result.test_metrics;
    for (std::size_t t = 0; t < data.target_count(); ++t) {
      if (config.task == TaskType::kRegression) {
        out << "rmse," << data.target_names[t] << ',' << fmt(m.rmse[t]) << '\n';
        out << "mae," << data.target_names[t] << ',' << fmt(m.mae[t]) << '\n';
      } else {
        out << "auc," << data.target_names[t] << ',' << fmt(m.auc[t]) << '\n';
      }
    }
    if (config.task == TaskType::kRegression) {
      out << "rmse,mean," << fmt(m.mean_rmse) << '\n' << "mae,mean," << fmt(m.mean_mae) << '\n';
    } else {
      out << "auc,mean," << fmt(m.mean_auc) << '\n';
    }
    out << "best_epoch,," << result.best_epoch << '\n' << "best_valid_loss,," << fmt(result.best_valid_loss) << '\n';
  }
  {
    auto out = open_out(fs::path(out_dir) / "predictions.csv");
    out << "row";
    for (const auto& name : data.target_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      out << split.test[i];
      for (double p : result.test_predictions[i]) out << ',' << fmt(p);
      out << '\n';
    }
  }
  {
    auto out = open_out(fs::path(out_dir) / "summary.txt");
    out << "task: " << task_name(config.task) << "\nmode: " << mode_name(config.mode) << "\ntrain/valid/test rows: "
        << split.train.size() << "/" << split.valid.size() << "/" << split.test.size()
        << "\nbest epoch: " << result.best_epoch << " (validation loss " << fmt(result.best_valid_loss) << ")\n";
    if (config.task == TaskType::kRegression)
      out << "test RMSE: " << fmt(result.test_metrics.mean_rmse) << "\ntest MAE: " << fmt(result.test_metrics.mean_mae)
          << '\n';
    else
      out << "test AUC-ROC: " << fmt(result.test_metrics.mean_auc) << '\n';
  }
  std::cerr << "wrote fine-tuning results to " << out_dir << "\n";
  return 0;
}

int cmd_analyze(const CommonOptions& common, const std::string& checkpoint_path, const std::string& vocab_arg,
                const std::string& geometry_path, const std::string& out_dir, const std::string& maps_dir) {
  const RunConfig rc = build_config(common);
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const std::string vocab_path = resolve_vocab(vocab_arg, ck);
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto encoder = load_model<double>(checkpoint_path, ck, vocab, vocab_path);
  const auto geometries = analysis::read_geometries(geometry_path);
  const auto options = rc.cosine();
  const auto report = analysis::attention_distance_cosine(encoder, vocab, geometries, options);

  ensure_dir(out_dir);
  rc.write_file(fs::path(out_dir) / "config.txt");
  {
    auto out = open_out(fs::path(out_dir) / "attention_cosine.csv");
    report.write_csv(out);
  }
  {
    auto out = open_out(fs::path(out_dir) / "summary.txt");
    out << "molecules aligned: " << report.aligned << "\nmolecules skipped: " << report.skipped
        << "\naffinity: " << analysis::transform_name(options.transform) << " (length scale "
        << fmt(options.length_scale) << " A)\n";
    for (std::size_t l = 0; l < report.mean_cosine.size(); ++l) {
      out << "layer " << l + 1 << ":";
      for (std::size_t c = 0; c < analysis::kCategoryCount; ++c)
        out << ' ' << analysis::category_name(static_cast<analysis::DistanceCategory>(c)) << '='
            << fmt(report.mean_cosine[l][c]);
      out << '\n';
    }
  }
  if (!maps_dir.empty()) {
    ensure_dir(maps_dir);
    for (std::size_t m = 0; m < geometries.size(); ++m) {
      std::optional<TokenSequence> seq;
      try {
        seq = encode(geometries[m].smiles, vocab);
      } catch (const Error&) {
        continue;
      }
      if (seq->length() > options.max_length) continue;
      const auto maps = encoder.attention_maps(*seq, options.max_length);
      for (std::size_t l = 0; l < maps.size(); ++l) {
        auto out = open_out(fs::path(maps_dir) /
                            ("molecule_" + std::to_string(m) + "_layer_" + std::to_string(l + 1) + ".csv"));
        analysis::write_attention_map(out, maps[l]);
      }
    }
  }
  std::cerr << report.aligned << " molecules analysed, " << report.skipped << " skipped\n";
  return 0;
}

int cmd_similarity(const CommonOptions& common, const std::string& checkpoint_path, const std::string& vocab_arg,
                   const std::string& pairs_path, const std::string& out_dir) {
  const RunConfig rc = build_config(common);
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const std::string vocab_path = resolve_vocab(vocab_arg, ck);
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto encoder = load_model<float>(checkpoint_path, ck, vocab, vocab_path);
  const auto pairs = analysis::read_pairs(pairs_path);
  const auto report =
      analysis::embedding_similarity_correlation(encoder, vocab, pairs, rc.fingerprint_width(), rc.ngram_max());

  ensure_dir(out_dir);
  rc.write_file(fs::path(out_dir) / "config.txt");
  {
    auto out = open_out(fs::path(out_dir) / "similarity.csv");
    report.write_csv(out);
  }
  {
    auto out = open_out(fs::path(out_dir) / "summary.txt");
    out << "pairs: " << report.rows.size() << "\npearson(embed_dist, tanimoto): " << fmt(report.pearson_tanimoto)
        << "\npearson(embed_dist, shared_ngrams): " << fmt(report.pearson_shared) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chemical language model pipeline: tokenize, pretrain, fine-tune, embed and analyse SMILES"};
  app.require_subcommand(1);

  std::string corpus, vocab, out, checkpoint, resume, data, split, geometries, pairs, maps_dir;
  std::optional<double> lr;
  CommonOptions common;

  auto* vocab_cmd = app.add_subcommand("vocab", "Build a vocabulary from a SMILES corpus");
  vocab_cmd->add_option("corpus", corpus, "One SMILES per line")->required();
  vocab_cmd->add_option("out", out, "Vocabulary file to write")->required();

  auto* stats_cmd = app.add_subcommand("stats", "Corpus length statistics as CSV");
  stats_cmd->add_option("corpus", corpus, "One SMILES per line")->required();
  stats_cmd->add_option("--out", out, "CSV file (default: standard output)");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-language-model pretraining");
  pretrain_cmd->add_option("--corpus", corpus, "One SMILES per line")->required();
  pretrain_cmd->add_option("--vocab", vocab, "Vocabulary file")->required();
  pretrain_cmd->add_option("--out", out, "Output directory")->required();
  pretrain_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  pretrain_cmd->add_option("--lr", lr, "Learning rate (same as --set train.lr=...)");
  add_common(pretrain_cmd, common);

  auto* finetune_cmd = app.add_subcommand("finetune", "Fit a prediction head on labeled molecules");
  finetune_cmd->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  finetune_cmd->add_option("--vocab", vocab, "Vocabulary file (default: path recorded in the checkpoint)");
  finetune_cmd->add_option("--data", data, "CSV smiles,target1[,target2...] with header")->required();
  finetune_cmd->add_option("--split", split, "Split file with train:/valid:/test: sections")->required();
  finetune_cmd->add_option("--out", out, "Output directory")->required();
  add_common(finetune_cmd, common);

  auto* embed_cmd = app.add_subcommand("embed", "Export mean-pooled embeddings");
  embed_cmd->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  embed_cmd->add_option("--vocab", vocab, "Vocabulary file (default: path recorded in the checkpoint)");
  embed_cmd->add_option("--corpus", corpus, "One SMILES per line")->required();
  embed_cmd->add_option("--out", out, "CSV file to write")->required();

  auto* analyze_cmd = app.add_subcommand("analyze-attention", "Attention versus 3D distance by category");
  analyze_cmd->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  analyze_cmd->add_option("--vocab", vocab, "Vocabulary file (default: path recorded in the checkpoint)");
  analyze_cmd->add_option("--geometries", geometries, "Geometry file")->required();
  analyze_cmd->add_option("--out", out, "Output directory")->required();
  analyze_cmd->add_option("--export-maps", maps_dir, "Also write per-molecule attention maps here");
  add_common(analyze_cmd, common);

  auto* similarity_cmd = app.add_subcommand("similarity", "Embedding distance versus n-gram similarity");
  similarity_cmd->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  similarity_cmd->add_option("--vocab", vocab, "Vocabulary file (default: path recorded in the checkpoint)");
  similarity_cmd->add_option("--pairs", pairs, "CSV smiles_a,smiles_b with header")->required();
  similarity_cmd->add_option("--out", out, "Output directory")->required();
  add_common(similarity_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*vocab_cmd) return cmd_vocab(corpus, out);
    if (*stats_cmd) return cmd_stats(corpus, out);
    if (*pretrain_cmd) return cmd_pretrain(common, corpus, vocab, out, resume, lr);
    if (*finetune_cmd) return cmd_finetune(common, checkpoint, vocab, data, split, out);
    if (*embed_cmd) return cmd_embed(checkpoint, vocab, corpus, out);
    if (*analyze_cmd) return cmd_analyze(common, checkpoint, vocab, geometries, out, maps_dir);
    if (*similarity_cmd) return cmd_similarity(common, checkpoint, vocab, pairs, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
