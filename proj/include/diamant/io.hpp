#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "diamant/common.hpp"
#include "diamant/param_store.hpp"
#include "diamant/tensor.hpp"

// Binary formats, both little-endian:
//   DTNS — one tensor per file: magic "DTNS", version u8, dtype u8
//          {0:f32, 1:f64, 2:u8, 3:i64}, rank u8, rank x u64 shape, row-major
//          payload. Round-trips are bit-exact.
//   DMCK — checkpoint: magic "DMCK", version u8, then EOF-delimited records of
//          (name_len u32, name bytes, dtype u8, rank u8, shape, raw data).
// Parse failures raise FormatError naming the byte offset.

static_assert(std::endian::native == std::endian::little,
              "serialization code assumes a little-endian host");

namespace diamant {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw IoError("short read: " + path);
  return buf;
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
      throw FormatError(origin_ + ": truncated while reading " + what + " at offset " +
                        std::to_string(pos_));
  }
  template <typename U>
  U scalar(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  void expect_magic(const char magic[4]) {
    need(4, "magic");
    if (std::memcmp(buf_.data() + pos_, magic, 4) != 0)
      throw FormatError(origin_ + ": bad magic at offset 0");
    pos_ += 4;
  }
  void expect_version(std::uint8_t want) {
    const std::size_t at = pos_;
    const auto v = scalar<std::uint8_t>("version");
    if (v != want)
      throw FormatError(origin_ + ": unsupported version " + std::to_string(v) + " at offset " +
                        std::to_string(at));
  }
  [[noreturn]] void fail(const std::string& what) {
    throw FormatError(origin_ + ": " + what + " at offset " + std::to_string(pos_));
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }
  template <typename U>
  void scalar(U v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void raw(const void* src, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n));
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

inline Shape read_shape(ByteReader& r, std::uint8_t rank) {
  if (rank < 1) r.fail("rank must be >= 1");
  Shape shape(rank);
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d = r.scalar<std::uint64_t>("shape");
    if (d < 1 || d > (1ull << 48)) r.fail("invalid dimension " + std::to_string(d));
    shape[i] = static_cast<std::int64_t>(d);
  }
  return shape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DTNS single-tensor files
// ---------------------------------------------------------------------------

template <typename T>
void write_tensor(const std::string& path, const Tensor<T>& t) {
  detail::ByteWriter w(path);
  w.raw("DTNS", 4);
  w.scalar<std::uint8_t>(1);
  w.scalar<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>::value));
  w.scalar<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) w.scalar<std::uint64_t>(static_cast<std::uint64_t>(t.dim(i)));
  w.raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T));
  w.close();
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  r.expect_magic("DTNS");
  r.expect_version(1);
  const std::size_t dtype_at = r.offset();
  const auto dtype = r.scalar<std::uint8_t>("dtype");
  if (dtype != static_cast<std::uint8_t>(dtype_of<T>::value))
    throw FormatError(path + ": dtype code " + std::to_string(dtype) +
                      " does not match the requested element type, at offset " +
                      std::to_string(dtype_at));
  const auto rank = r.scalar<std::uint8_t>("rank");
  const Shape shape = detail::read_shape(r, rank);
  auto t = Tensor<T>::zeros(shape);
  r.raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(T), "payload");
  if (!r.at_end()) r.fail("trailing bytes");
  return t;
}

// ---------------------------------------------------------------------------
// DMCK checkpoints
// ---------------------------------------------------------------------------

struct RawRecord {
  std::string name;
  DType dtype;
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

inline void write_dmck(const std::string& path, const std::vector<RawRecord>& recs) {
  detail::ByteWriter w(path);
  w.raw("DMCK", 4);
  w.scalar<std::uint8_t>(1);
  for (const auto& rec : recs) {
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(rec.name.size()));
    w.raw(rec.name.data(), rec.name.size());
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(rec.dtype));
    w.scalar<std::uint8_t>(static_cast<std::uint8_t>(rec.shape.size()));
    for (auto d : rec.shape) w.scalar<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.raw(rec.bytes.data(), rec.bytes.size());
  }
  w.close();
}

inline std::vector<RawRecord> read_dmck(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  r.expect_magic("DMCK");
  r.expect_version(1);
  std::vector<RawRecord> recs;
  while (!r.at_end()) {
    RawRecord rec;
    const auto name_len = r.scalar<std::uint32_t>("name length");
    if (name_len == 0 || name_len > 4096) r.fail("implausible name length");
    rec.name.resize(name_len);
    r.raw(rec.name.data(), name_len, "name");
    const auto code = r.scalar<std::uint8_t>("dtype");
    if (code > 3) r.fail("unknown dtype code " + std::to_string(code));
    rec.dtype = static_cast<DType>(code);
    const auto rank = r.scalar<std::uint8_t>("rank");
    rec.shape = detail::read_shape(r, rank);
    rec.bytes.resize(static_cast<std::size_t>(numel_of(rec.shape)) * dtype_size(rec.dtype));
    r.raw(rec.bytes.data(), rec.bytes.size(), "record data");
    recs.push_back(std::move(rec));
  }
  return recs;
}

inline constexpr const char* kArchRecordName = "__arch__";

template <typename T>
RawRecord to_record(const std::string& name, const Tensor<T>& t) {
  RawRecord rec;
  rec.name = name;
  rec.dtype = dtype_of<T>::value;
  rec.shape = t.shape();
  rec.bytes.resize(static_cast<std::size_t>(t.numel()) * sizeof(T));
  std::memcpy(rec.bytes.data(), t.data(), rec.bytes.size());
  return rec;
}

// Saves every entry (trainable and frozen) in insertion order. A non-empty
// arch_json is stored as a leading u8 record so a loader can rebuild the
// network before filling in weights.
template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& ps,
                     const std::string& arch_json = "") {
  std::vector<RawRecord> recs;
  recs.reserve(ps.size() + 1);
  if (!arch_json.empty()) {
    RawRecord arch;
    arch.name = kArchRecordName;
    arch.dtype = DType::U8;
    arch.shape = {static_cast<std::int64_t>(arch_json.size())};
    arch.bytes.assign(arch_json.begin(), arch_json.end());
    recs.push_back(std::move(arch));
  }
  for (const auto& e : ps.entries()) recs.push_back(to_record(e.name, e.tensor));
  write_dmck(path, recs);
}

// Fills an already-built store from a checkpoint; every store entry must be
// present with matching dtype and shape. Returns the arch description when
// the file carries one.
template <typename T>
std::string load_checkpoint(const std::string& path, ParamStore<T>& ps) {
  const auto recs = read_dmck(path);
  std::string arch;
  std::size_t filled = 0;
  for (const auto& rec : recs) {
    if (rec.name == kArchRecordName) {
      arch.assign(rec.bytes.begin(), rec.bytes.end());
      continue;
    }
    if (!ps.contains(rec.name))
      throw ContractError(path + ": checkpoint parameter not in the built network: " + rec.name);
    auto& t = ps.at(rec.name);
    if (rec.dtype != dtype_of<T>::value)
      throw FormatError(path + ": dtype mismatch for " + rec.name);
    if (rec.shape != t.shape())
      throw ContractError(path + ": shape mismatch for " + rec.name + ": checkpoint " +
                          shape_str(rec.shape) + " vs network " + shape_str(t.shape()));
    std::memcpy(t.data(), rec.bytes.data(), rec.bytes.size());
    ++filled;
  }
  if (filled != ps.size())
    throw ContractError(path + ": checkpoint fills " + std::to_string(filled) + " of " +
                        std::to_string(ps.size()) + " network parameters");
  return arch;
}

// Reads only the arch record, for rebuilding a network from a checkpoint.
inline std::string read_checkpoint_arch(const std::string& path) {
  for (const auto& rec : read_dmck(path))
    if (rec.name == kArchRecordName) return std::string(rec.bytes.begin(), rec.bytes.end());
  return "";
}

}  // namespace diamant
