// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mgae Authors.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mgae/config.hpp"
#include "mgae/optim.hpp"
#include "mgae/tensor.hpp"

namespace mgae {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

struct Checkpoint {
  TrainConfig config;
  std::uint64_t step = 0;
  ParameterSet theta;
  ParameterSet xi;
  AdamState adam;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'A', 'G', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& buf) : buf_(buf) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw ValidationError("checkpoint: truncated file");
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

inline void write_section(ByteWriter& w, const ParameterSet& ps) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
  for (const auto& [name, m] : ps) {
    w.put_string(name);
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(m.rows());
    w.put<std::uint64_t>(m.cols());
    w.put_bytes(reinterpret_cast<const char*>(m.data().data()), m.size() * sizeof(double));
  }
}

inline ParameterSet read_section(ByteReader& r) {
  ParameterSet ps;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto ndims = r.get<std::uint32_t>();
    if (ndims != 2) throw ValidationError("checkpoint: tensor '" + name + "' has " + std::to_string(ndims) + " dims");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw ValidationError("checkpoint: implausible shape");
    Matrix m(rows, cols);
    r.get_doubles(m.data());
    ps.add(name, std::move(m));
  }
  return ps;
}

}  // namespace detail

/**
 * Little-endian layout: magic "MAGE", u32 version, u64 config hash, config
 * text (u32 length + bytes), u64 step, then four parameter sections (theta,
 * xi, Adam m, Adam v). Each section is a u32 count of records
 * {u32 name length, name, u32 ndims, u64 dims[ndims], f64 data}.
 */
inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(config_hash(ck.config));
  w.put_string(config_to_text(ck.config));
  w.put<std::uint64_t>(ck.step);
  detail::write_section(w, ck.theta);
  detail::write_section(w, ck.xi);
  detail::write_section(w, ck.adam.m);
  detail::write_section(w, ck.adam.v);
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ValidationError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: unsupported format version " + std::to_string(version));
  const auto hash = r.get<std::uint64_t>();
  Checkpoint ck;
  ck.config = parse_config(r.get_string());
  if (config_hash(ck.config) != hash) throw ValidationError("checkpoint: config hash mismatch");
  ck.step = r.get<std::uint64_t>();
  ck.theta = detail::read_section(r);
  ck.xi = detail::read_section(r);
  ck.adam.m = detail::read_section(r);
  ck.adam.v = detail::read_section(r);
  ck.adam.step = ck.step;
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  if (!ck.adam.m.compatible_with(ck.theta) || !ck.adam.v.compatible_with(ck.theta))
    throw ValidationError("checkpoint: optimizer moments do not match parameters");
  return ck;
}

inline constexpr char kTensorMagic[4] = {'M', 'A', 'G', 'T'};

/// Standalone tensors (e.g. embeddings): magic "MAGT", u32 version, then one
/// parameter section in the checkpoint record format.
inline std::vector<char> serialize_tensors(const ParameterSet& tensors) {
  detail::ByteWriter w;
  w.put_bytes(kTensorMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  detail::write_section(w, tensors);
  return std::move(w.bytes());
}

inline ParameterSet deserialize_tensors(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw ValidationError("tensor file: bad magic");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw ValidationError("tensor file: unsupported format version");
  ParameterSet ps = detail::read_section(r);
  if (!r.done()) throw ValidationError("tensor file: trailing bytes");
  return ps;
}

inline void write_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ValidationError("write to '" + path + "' failed");
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_bytes(path)); }

}  // namespace mgae
