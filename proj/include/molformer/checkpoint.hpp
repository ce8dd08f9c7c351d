// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "molformer/model.hpp"
#include "molformer/tensor.hpp"

namespace molformer {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  nn::Shape shape;
  std::vector<double> values;  // widened; narrowed again on write for float32
};

/// A self-describing bundle: text header of key=value pairs plus named tensors.
///
/// On disk:
///   "MLFC1\n"
///   u64 header length, header text ("key=value\n" lines, sorted by key)
///   u64 tensor count, then per tensor:
///     u32 name length, name, u8 dtype, u32 rank, u64 dims[rank], payload
/// All integers and payloads are little-endian.
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  const std::string& value(const std::string& key) const;  // throws CheckpointFormat
  bool has(const std::string& key) const { return header.count(key) != 0; }

  template <typename T>
  void put(const std::string& name, const nn::Tensor<T>& tensor);
  /// Converts to T; throws CheckpointFormat if absent.
  template <typename T>
  std::vector<T> get(const std::string& name) const;
};

/// Writes through a temporary sibling file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Stores the encoder's config (as model.* keys), parameters and buffers.
template <typename T>
void store_encoder(Checkpoint& checkpoint, const model::Encoder<T>& encoder);

/// Rebuilds an encoder from store_encoder() output.
template <typename T>
model::Encoder<T> load_encoder(const Checkpoint& checkpoint);

}  // namespace molformer
