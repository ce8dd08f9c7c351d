// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "molformer/errors.hpp"

namespace molformer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "MLFC1\n";
constexpr std::size_t kMagicLength = sizeof(kMagic) - 1;
constexpr std::uint64_t kMaxRank = 8;

template <typename U>
void write_pod(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in, const std::string& what) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) throw Error(ErrorCode::kCheckpointFormat, "truncated checkpoint while reading " + what);
  return value;
}

std::string read_bytes(std::istream& in, std::uint64_t n, const std::string& what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorCode::kCheckpointFormat, "truncated checkpoint while reading " + what);
  return s;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const std::string& Checkpoint::value(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) throw Error(ErrorCode::kCheckpointFormat, "checkpoint header lacks " + key);
  return it->second;
}

template <typename T>
void Checkpoint::put(const std::string& name, const nn::Tensor<T>& tensor) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
  rec.shape = tensor.shape();
  rec.values.assign(tensor.values().begin(), tensor.values().end());
  for (auto& t : tensors) {
    if (t.name == name) {
      t = std::move(rec);
      return;
    }
  }
  tensors.push_back(std::move(rec));
}

template <typename T>
std::vector<T> Checkpoint::get(const std::string& name) const {
  const TensorRecord* rec = find(name);
  if (!rec) throw Error(ErrorCode::kCheckpointFormat, "checkpoint lacks tensor " + name);
  std::vector<T> out(rec->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rec->values[i]);
  return out;
}

template void Checkpoint::put<float>(const std::string&, const nn::Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const nn::Tensor<double>&);
template std::vector<float> Checkpoint::get<float>(const std::string&) const;
template std::vector<double> Checkpoint::get<double>(const std::string&) const;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ostringstream header;
  for (const auto& [k, v] : checkpoint.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw Error(ErrorCode::kCheckpointFormat, "header entry '" + k + "' cannot be encoded");
    header << k << '=' << v << '\n';
  }
  const std::string header_text = header.str();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(kMagic, kMagicLength);
    write_pod<std::uint64_t>(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    write_pod<std::uint64_t>(out, checkpoint.tensors.size());
    for (const auto& t : checkpoint.tensors) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t d : t.shape) write_pod<std::uint64_t>(out, d);
      if (nn::shape_size(t.shape) != t.values.size())
        throw Error(ErrorCode::kCheckpointFormat, "tensor " + t.name + " shape does not match its values");
      if (t.dtype == DType::kFloat32) {
        for (double v : t.values) write_pod<float>(out, static_cast<float>(v));
      } else {
        for (double v : t.values) write_pod<double>(out, v);
      }
    }
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  if (read_bytes(in, kMagicLength, "magic") != std::string(kMagic, kMagicLength))
    throw Error(ErrorCode::kCheckpointFormat, path.string() + " is not a checkpoint");

  Checkpoint ck;
  const auto header_len = read_pod<std::uint64_t>(in, "header length");
  std::istringstream header(read_bytes(in, header_len, "header"));
  for (std::string line; std::getline(header, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kCheckpointFormat, "malformed header line: " + line);
    ck.header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const auto count = read_pod<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = read_pod<std::uint32_t>(in, "name length");
    t.name = read_bytes(in, name_len, "tensor name");
    const auto dtype = read_pod<std::uint8_t>(in, t.name + " dtype");
    if (dtype > 1) throw Error(ErrorCode::kCheckpointFormat, "unknown dtype for " + t.name);
    t.dtype = static_cast<DType>(dtype);
    const auto rank = read_pod<std::uint32_t>(in, t.name + " rank");
    if (rank > kMaxRank) throw Error(ErrorCode::kCheckpointFormat, "implausible rank for " + t.name);
    for (std::uint32_t d = 0; d < rank; ++d)
      t.shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(in, t.name + " shape")));
    const std::size_t n = nn::shape_size(t.shape);
    t.values.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      t.values[j] = t.dtype == DType::kFloat32 ? static_cast<double>(read_pod<float>(in, t.name))
                                               : read_pod<double>(in, t.name);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <typename T>
void store_encoder(Checkpoint& checkpoint, const model::Encoder<T>& encoder) {
  for (const auto& [k, v] : encoder.config().to_pairs()) checkpoint.header[k] = v;
  for (const auto& p : encoder.parameters()) checkpoint.put(p.name, p.tensor);
  for (const auto& b : encoder.buffers()) checkpoint.put(b.name, b.tensor);
}

template <typename T>
model::Encoder<T> load_encoder(const Checkpoint& checkpoint) {
  std::map<std::string, std::string> model_keys;
  for (const auto& [k, v] : checkpoint.header)
    if (k.rfind("model.", 0) == 0) model_keys[k] = v;
  if (model_keys.empty()) throw Error(ErrorCode::kCheckpointFormat, "checkpoint holds no model configuration");
  model::Encoder<T> encoder(model::EncoderConfig::from_pairs(model_keys));
  auto load = [&](const model::NamedTensor<T>& nt) {
    const TensorRecord* rec = checkpoint.find(nt.name);
    if (!rec) throw Error(ErrorCode::kCheckpointFormat, "checkpoint lacks tensor " + nt.name);
    if (rec->shape != nt.tensor.shape())
      throw Error(ErrorCode::kCheckpointFormat, "tensor " + nt.name + " has shape " + nn::shape_string(rec->shape) +
                                                    ", expected " + nn::shape_string(nt.tensor.shape()));
    const auto values = checkpoint.get<T>(nt.name);
    encoder.assign(nt.name, values);
  };
  for (const auto& p : encoder.parameters()) load(p);
  for (const auto& b : encoder.buffers()) load(b);
  return encoder;
}

template void store_encoder<float>(Checkpoint&, const model::Encoder<float>&);
template void store_encoder<double>(Checkpoint&, const model::Encoder<double>&);
template model::Encoder<float> load_encoder<float>(const Checkpoint&);
template model::Encoder<double> load_encoder<double>(const Checkpoint&);

}  // namespace molformer
