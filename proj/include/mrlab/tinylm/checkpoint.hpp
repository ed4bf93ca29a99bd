// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/common/tensor.hpp"
#include "mrlab/tinylm/model.hpp"

namespace mrlab::tinylm {

// Container layout (all integers little-endian):
//   "MRLABCKP"                     8-byte magic
//   u32 version                    currently 1
//   u64 metadata_len, bytes        UTF-8 "key=value\n" lines, sorted by key
//   u32 tensor_count
//   tensor_count x header:         u32 name_len, name bytes, u8 dtype (1 = f64),
//                                  u32 ndim, u64 dims[ndim]
//   payloads in header order:      row-major little-endian IEEE-754 binary64
inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'L', 'A', 'B', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  ParameterSet tensors;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ArgumentError("checkpoint metadata may not contain '=' in keys or newlines: " + k);
    meta += k + "=" + v + "\n";
  }
  detail::put_le<std::uint64_t>(out, meta.size());
  out += meta;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kDtypeF64));
    detail::put_le<std::uint32_t>(out, 2);
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  }
  for (const auto& [_, m] : ckpt.tensors)
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  if (r.take(8) != std::string_view(kCheckpointMagic, 8)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.get_le<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto meta_len = r.get_le<std::uint64_t>();
  std::istringstream meta{std::string(r.take(meta_len))};
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad metadata line: " + line);
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.get_le<std::uint32_t>();
  std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint32_t>();
    std::string name(r.take(name_len));
    if (r.get_le<std::uint8_t>() != kDtypeF64) throw FormatError("unsupported dtype for " + name);
    const auto ndim = r.get_le<std::uint32_t>();
    std::uint64_t rows = 1, cols = 1;
    if (ndim == 1) {
      cols = r.get_le<std::uint64_t>();
    } else if (ndim == 2) {
      rows = r.get_le<std::uint64_t>();
      cols = r.get_le<std::uint64_t>();
    } else {
      throw FormatError("unsupported rank for " + name);
    }
    headers.emplace_back(std::move(name), std::pair{rows, cols});
  }
  for (const auto& [name, shape] : headers) {
    Matrix m(static_cast<Eigen::Index>(shape.first), static_cast<Eigen::Index>(shape.second));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.get_le<std::uint64_t>());
    if (!ckpt.tensors.emplace(name, std::move(m)).second) throw FormatError("duplicate tensor " + name);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

inline Checkpoint model_checkpoint(const PolicyModel& model, std::map<std::string, std::string> extra = {}) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(extra);
  const auto& cfg = model.config();
  ckpt.metadata["kind"] = "policy";
  ckpt.metadata["model.vocab"] = std::to_string(cfg.vocab);
  ckpt.metadata["model.width"] = std::to_string(cfg.width);
  ckpt.metadata["model.layers"] = std::to_string(cfg.layers);
  ckpt.metadata["model.heads"] = std::to_string(cfg.heads);
  ckpt.metadata["model.context"] = std::to_string(cfg.context);
  ckpt.tensors = model.parameters();
  return ckpt;
}

inline PolicyModel model_from_checkpoint(const Checkpoint& ckpt) {
  auto get = [&](const std::string& key) {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw FormatError("checkpoint metadata missing " + key);
    return std::stoi(it->second);
  };
  if (auto it = ckpt.metadata.find("kind"); it == ckpt.metadata.end() || it->second != "policy")
    throw FormatError("checkpoint is not a policy model");
  ModelConfig cfg{get("model.vocab"), get("model.width"), get("model.layers"), get("model.heads"), get("model.context")};
  PolicyModel model(cfg);
  for (auto& [name, w] : model.parameters()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint missing tensor " + name);
    if (it->second.rows() != w.rows() || it->second.cols() != w.cols()) throw FormatError("shape mismatch for " + name);
    w = it->second;
  }
  if (ckpt.tensors.size() != model.parameters().size()) throw FormatError("checkpoint has unexpected tensors");
  if (!model.finite()) throw FormatError("checkpoint contains non-finite parameters");
  return model;
}

}  // namespace mrlab::tinylm
