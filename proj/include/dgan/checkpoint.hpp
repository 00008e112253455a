#pragma once

// Named-tensor archive.
//
//   "DGZ1" | u8 version (1) | u32 count
//   count x { u16 name_len | name | u8 rank | rank x u32 dim | numel x f32 }
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgan/image_io.hpp"
#include "dgan/nn.hpp"

namespace dgan {

constexpr std::uint8_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'D', 'G', 'Z', '1'};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct Checkpoint {
  ParamList<float> entries;

  void add(std::string name, const Tensor& t) { entries.push_back({std::move(name), t.detach()}); }

  void add_all(const ParamList<float>& list, const std::string& prefix = {}) {
    for (const auto& e : list) add(prefix + e.name, e.tensor);
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    if (auto* t = find(name)) return *t;
    throw CheckpointError("checkpoint has no entry '" + name + "'", 0);
  }

  /// UTF-8 text stored one byte per element.
  void add_text(const std::string& name, const std::string& text) {
    std::vector<float> v(text.begin(), text.end());
    for (auto& x : v) x = static_cast<float>(static_cast<unsigned char>(x));
    if (v.empty()) v.push_back(0.0f);
    const Shape shape{v.size()};
    entries.push_back({name, Tensor(shape, std::move(v))});
  }

  std::string text(const std::string& name) const {
    std::string s;
    for (float x : at(name).data())
      if (x != 0.0f) s.push_back(static_cast<char>(static_cast<unsigned char>(x)));
    return s;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
  std::size_t pos() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n)
      throw CheckpointError(std::string("truncated checkpoint reading ") + what + ": need " +
                                std::to_string(pos_ + n + 4) + " bytes, file has " +
                                std::to_string(b_.size()),
                            pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | b_[pos_ + static_cast<std::size_t>(k)];
    pos_ += 4;
    return v;
  }
  const std::uint8_t* bytes(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_, pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> b(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u8(b, kCheckpointVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& e : ck.entries) {
    if (e.name.size() > 0xFFFF) throw std::invalid_argument("checkpoint entry name too long: " + e.name);
    detail::put_u16(b, static_cast<std::uint16_t>(e.name.size()));
    b.insert(b.end(), e.name.begin(), e.name.end());
    const auto& shape = e.tensor.shape();
    detail::put_u8(b, static_cast<std::uint8_t>(shape.rank()));
    for (auto d : shape.dims()) detail::put_u32(b, static_cast<std::uint32_t>(d));
    const auto data = e.tensor.data();
    const auto* raw = reinterpret_cast<const std::uint8_t*>(data.data());
    b.insert(b.end(), raw, raw + data.size() * sizeof(float));
  }
  detail::put_u32(b, detail::crc32_of(b.data(), b.size()));
  return b;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& b) {
  constexpr std::size_t kMinSize = 4 + 1 + 4 + 4;
  if (b.size() < kMinSize)
    throw CheckpointError("truncated checkpoint: need at least " + std::to_string(kMinSize) +
                              " bytes, file has " + std::to_string(b.size()),
                          b.size());
  if (std::memcmp(b.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint magic (expected DGZ1)", 0);
  if (b[4] != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(b[4]) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          4);

  const std::size_t body_end = b.size() - 4;
  detail::Reader r(b, body_end);
  r.bytes(5, "header");
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t entry_at = r.pos();
    const std::uint16_t len = r.u16("name length");
    const auto* name = r.bytes(len, "name");
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0 || rank > 4) throw CheckpointError("tensor rank " + std::to_string(rank) + " outside 1..4", entry_at);
    std::vector<std::size_t> dims;
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dimension");
      if (dim == 0) throw CheckpointError("zero tensor dimension", r.pos() - 4);
      dims.push_back(dim);
      numel *= dim;
      if (numel > b.size())
        throw CheckpointError("truncated checkpoint: tensor payload exceeds file size " + std::to_string(b.size()),
                              entry_at);
    }
    const Shape shape{std::span<const std::size_t>(dims)};
    const auto* payload = r.bytes(numel * sizeof(float), "payload");
    std::vector<float> values(numel);
    std::memcpy(values.data(), payload, numel * sizeof(float));
    ck.entries.push_back({std::string(reinterpret_cast<const char*>(name), len), Tensor(shape, std::move(values))});
  }
  if (r.pos() != body_end)
    throw CheckpointError(std::to_string(body_end - r.pos()) + " unexpected bytes after the last tensor", r.pos());
  std::uint32_t stored = 0;
  for (int k = 3; k >= 0; --k) stored = (stored << 8) | b[body_end + static_cast<std::size_t>(k)];
  const std::uint32_t actual = detail::crc32_of(b.data(), body_end);
  if (stored != actual) throw CheckpointError("checkpoint CRC mismatch", body_end);
  return ck;
}

/// Writes to a temporary sibling and renames, so an interrupted save never
/// clobbers the previous file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no checkpoint at " + path.string());
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Copies `prefix + name` entries into the given tensors in place.
template <class T>
void restore_tensors(const Checkpoint& ck, const ParamList<T>& into, const std::string& prefix = {}) {
  for (const auto& p : into) {
    const auto& src = ck.at(prefix + p.name);
    if (!(src.shape() == p.tensor.shape()))
      throw CheckpointError("entry '" + prefix + p.name + "' has shape " + src.shape().str() + ", expected " +
                                p.tensor.shape().str(),
                            0);
    auto dst = BasicTensor<T>(p.tensor).mutable_data();
    auto s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(s[i]);
  }
}

}  // namespace dgan
