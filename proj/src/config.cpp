// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/config.hpp"

#include <fstream>

#include "molformer/errors.hpp"
#include "molformer/kv.hpp"

namespace molformer {

namespace {

enum class Kind { kU64, kDouble, kBool, kText, kChoice };

struct KeySpec {
  const char* name;
  const char* fallback;
  Kind kind;
  std::vector<std::string> choices = {};
};

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"seed", "0", Kind::kU64},
      {"model.preset", "toy", Kind::kChoice, {"toy", "xl"}},
      {"model.layers", "2", Kind::kU64},
      {"model.heads", "2", Kind::kU64},
      {"model.hidden", "64", Kind::kU64},
      {"model.feedforward", "256", Kind::kU64},
      {"model.variant",
       "linear_rotary_modified",
       Kind::kChoice,
       {"full_absolute", "full_rotary", "linear_rotary_original", "linear_rotary_modified"}},
      {"model.dropout", "0.1", Kind::kDouble},
      {"model.max_positions", "202", Kind::kU64},
      {"model.feature_dim", "32", Kind::kU64},
      {"model.scale_scores", "true", Kind::kBool},
      {"model.feature_kernel", "relu", Kind::kChoice, {"relu", "elu_plus_one"}},
      {"model.rotary_base", "10000", Kind::kDouble},
      {"model.layer_norm_eps", "1e-05", Kind::kDouble},
      {"train.lr", "0.00016", Kind::kDouble},
      {"train.finetune_lr", "3e-05", Kind::kDouble},
      {"train.batch_size", "64", Kind::kU64},
      {"train.epochs", "1", Kind::kU64},
      {"train.beta1", "0.9", Kind::kDouble},
      {"train.beta2", "0.99", Kind::kDouble},
      {"train.eps", "1e-06", Kind::kDouble},
      {"train.weight_decay", "0", Kind::kDouble},
      {"train.trust_clamp", "10", Kind::kDouble},
      {"train.max_steps", "0", Kind::kU64},
      {"train.checkpoint_every", "0", Kind::kU64},
      {"train.eval_every", "1", Kind::kU64},
      {"train.mask_select", "0.15", Kind::kDouble},
      {"train.mask_token", "0.8", Kind::kDouble},
      {"train.mask_random", "0.1", Kind::kDouble},
      {"train.bucket_boundaries", "1-42,43-66,67-122,123-202", Kind::kText},
      {"train.bucket_min_emit", "1,1,1,50", Kind::kText},
      {"finetune.task", "regression", Kind::kChoice, {"regression", "classification"}},
      {"finetune.mode", "frozen", Kind::kChoice, {"frozen", "finetuned"}},
      {"finetune.head_hidden", "768", Kind::kU64},
      {"finetune.dropout", "0.1", Kind::kDouble},
      {"finetune.epochs", "10", Kind::kU64},
      {"finetune.batch_size", "64", Kind::kU64},
      {"analysis.transform", "exp", Kind::kChoice, {"exp", "inverse", "indicator"}},
      {"analysis.length_scale", "2", Kind::kDouble},
      {"analysis.max_length", "256", Kind::kU64},
      {"analysis.fingerprint_width", "2048", Kind::kU64},
      {"analysis.ngram_max", "3", Kind::kU64},
  };
  return specs;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : key_specs())
    if (key == s.name) return &s;
  return nullptr;
}

std::string check_value(const KeySpec& spec, const std::string& value) {
  try {
    switch (spec.kind) {
      case Kind::kU64:
        kv::parse_u64(spec.name, value);
        break;
      case Kind::kDouble:
        kv::parse_double(spec.name, value);
        break;
      case Kind::kBool:
        kv::parse_bool(spec.name, value);
        break;
      case Kind::kText:
        break;
      case Kind::kChoice: {
        bool ok = false;
        std::string listed;
        for (const auto& c : spec.choices) {
          ok = ok || c == value;
          listed += (listed.empty() ? "" : ", ") + c;
        }
        if (!ok) return std::string(spec.name) + " must be one of " + listed + ", got '" + value + "'";
        break;
      }
    }
  } catch (const Error& e) {
    return e.detail();
  }
  return "";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void fail(const std::vector<std::string>& problems) {
  std::string msg;
  for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
  throw Error(ErrorCode::kConfig, msg);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& s : key_specs()) values_[s.name] = s.fallback;
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> out;
  for (const auto& s : key_specs()) out.emplace_back(s.name);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (find_spec(key) == nullptr) throw Error(ErrorCode::kConfig, "unknown key '" + key + "'");
  values_[key] = value;
  explicit_.insert(key);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  std::vector<std::string> problems;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(path.filename().string() + ":" + std::to_string(lineno) + " is not key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    if (find_spec(key) == nullptr) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    set(key, trim(line.substr(eq + 1)));
  }
  if (!problems.empty()) fail(problems);
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
  std::vector<std::string> problems;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      problems.push_back("override '" + a + "' is not key=value");
      continue;
    }
    const std::string key = trim(a.substr(0, eq));
    if (find_spec(key) == nullptr) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    set(key, trim(a.substr(eq + 1)));
  }
  if (!problems.empty()) fail(problems);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::kConfig, "unknown key '" + key + "'");
  return it->second;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  for (const auto& s : key_specs()) {
    const std::string msg = check_value(s, get(s.name));
    if (!msg.empty()) problems.push_back(msg);
  }
  if (!problems.empty()) fail(problems);
  auto collect = [&](auto&& build) {
    try {
      build();
    } catch (const Error& e) {
      problems.push_back(e.detail());
    }
  };
  // vocab_size is only known once a vocabulary is loaded; validate the rest
  // against a placeholder that satisfies the size check.
  collect([&] { encoder(special::kCount + 1).validate(); });
  collect([&] { train().validate(); });
  collect([&] {
    const auto f = finetune();
    if (f.epochs == 0 || f.batch_size == 0) throw Error(ErrorCode::kConfig, "finetune.epochs and batch_size must be positive");
    if (f.dropout < 0.0 || f.dropout >= 1.0) throw Error(ErrorCode::kConfig, "finetune.dropout must be in [0, 1)");
  });
  collect([&] {
    if (!(cosine().length_scale > 0.0)) throw Error(ErrorCode::kConfig, "analysis.length_scale must be positive");
    if (fingerprint_width() == 0 || ngram_max() == 0)
      throw Error(ErrorCode::kConfig, "analysis.fingerprint_width and ngram_max must be positive");
  });
  if (!problems.empty()) fail(problems);
}

std::uint64_t RunConfig::seed() const { return kv::parse_u64("seed", get("seed")); }

model::EncoderConfig RunConfig::encoder(std::size_t vocab_size) const {
  model::EncoderConfig c = get("model.preset") == "xl" ? model::EncoderConfig::xl() : model::EncoderConfig::toy();
  std::map<std::string, std::string> pairs;
  for (const auto& [k, v] : values_) {
    if (k.rfind("model.", 0) != 0 || k == "model.preset") continue;
    const bool shape_key = k == "model.layers" || k == "model.heads" || k == "model.hidden" || k == "model.feedforward";
    if (shape_key && !explicit_.count(k)) continue;
    pairs[k] = v;
  }
  pairs["model.layers"] = pairs.count("model.layers") ? pairs["model.layers"] : std::to_string(c.layers);
  pairs["model.heads"] = pairs.count("model.heads") ? pairs["model.heads"] : std::to_string(c.heads);
  pairs["model.hidden"] = pairs.count("model.hidden") ? pairs["model.hidden"] : std::to_string(c.hidden);
  pairs["model.feedforward"] =
      pairs.count("model.feedforward") ? pairs["model.feedforward"] : std::to_string(c.feedforward);
  pairs["model.vocab_size"] = std::to_string(vocab_size);
  pairs["model.seed"] = std::to_string(seed());
  return model::EncoderConfig::from_pairs(pairs);
}

TrainConfig RunConfig::train() const {
  std::map<std::string, std::string> pairs;
  for (const auto& [k, v] : values_)
    if (k.rfind("train.", 0) == 0) pairs[k] = v;
  pairs["train.seed"] = std::to_string(seed());
  return TrainConfig::from_pairs(pairs);
}

FinetuneConfig RunConfig::finetune() const {
  const TrainConfig t = train();
  FinetuneConfig f;
  f.task = parse_task(get("finetune.task"));
  f.mode = parse_mode(get("finetune.mode"));
  f.head_hidden = kv::parse_u64("finetune.head_hidden", get("finetune.head_hidden"));
  f.dropout = kv::parse_double("finetune.dropout", get("finetune.dropout"));
  f.epochs = kv::parse_u64("finetune.epochs", get("finetune.epochs"));
  f.batch_size = kv::parse_u64("finetune.batch_size", get("finetune.batch_size"));
  f.lr = t.finetune_lr;
  f.eval_every = t.eval_every;
  f.seed = seed();
  f.beta1 = t.beta1;
  f.beta2 = t.beta2;
  f.eps = t.eps;
  f.weight_decay = t.weight_decay;
  return f;
}

analysis::CosineOptions RunConfig::cosine() const {
  analysis::CosineOptions o;
  o.transform = analysis::parse_transform(get("analysis.transform"));
  o.length_scale = kv::parse_double("analysis.length_scale", get("analysis.length_scale"));
  o.max_length = kv::parse_u64("analysis.max_length", get("analysis.max_length"));
  return o;
}

std::size_t RunConfig::fingerprint_width() const {
  return kv::parse_u64("analysis.fingerprint_width", get("analysis.fingerprint_width"));
}

std::size_t RunConfig::ngram_max() const { return kv::parse_u64("analysis.ngram_max", get("analysis.ngram_max")); }

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

void RunConfig::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write(out);
}

}  // namespace molformer
