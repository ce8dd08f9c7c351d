// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Typed reads from key=value maps (config files, checkpoint headers).

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "molformer/errors.hpp"

namespace molformer::kv {

using Pairs = std::map<std::string, std::string>;

inline std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size() && !text.empty() && text[0] != '-') return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, key + " must be a non-negative integer, got '" + text + "'");
}

inline double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, key + " must be a number, got '" + text + "'");
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorCode::kConfig, key + " must be true or false, got '" + text + "'");
}

inline std::uint64_t get_u64(const Pairs& pairs, const std::string& key, std::uint64_t fallback) {
  auto it = pairs.find(key);
  return it == pairs.end() ? fallback : parse_u64(key, it->second);
}

inline double get_double(const Pairs& pairs, const std::string& key, double fallback) {
  auto it = pairs.find(key);
  return it == pairs.end() ? fallback : parse_double(key, it->second);
}

inline bool get_bool(const Pairs& pairs, const std::string& key, bool fallback) {
  auto it = pairs.find(key);
  return it == pairs.end() ? fallback : parse_bool(key, it->second);
}

/// Round-trippable text for a double.
inline std::string format(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace molformer::kv
