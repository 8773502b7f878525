#ifndef MCGEN_CHECKPOINT_HPP
#define MCGEN_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mcgen/codebook.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen {

// Single-file container: magic "MCGM", u32 version, u32 section count, then a
// manifest of (name, kind, offset, length) entries followed by the payload
// blocks. Integers little-endian; tensor payloads are u32 rank + u64 dims +
// raw row-major scalars; codebooks use the bit-packed codebook format.
// Writes go to <path>.tmp and are renamed into place.
enum class SectionKind : std::uint32_t {
  TensorF32 = 0,
  TensorF64 = 1,
  Codebook = 2,
  Text = 3,
};

struct Section {
  std::string name;
  SectionKind kind = SectionKind::Text;
  std::vector<std::uint8_t> bytes;
};

struct Container {
  std::uint32_t version = 1;
  std::vector<Section> sections;

  const Section& find(const std::string& name) const;
  const Section* find_optional(const std::string& name) const;
  bool has(const std::string& name) const { return find_optional(name) != nullptr; }
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

// FNV-1a checksum over every section payload, in manifest order.
std::uint64_t container_checksum(const Container& c);

// --------------------------------------------------------------------------
// Payload codecs
// --------------------------------------------------------------------------

namespace ckpt_detail {

inline void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + 4 > b.size()) throw IoError("checkpoint: truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + i]) << (8 * i);
  pos += 4;
  return v;
}
inline std::uint64_t read_u64(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + 8 > b.size()) throw IoError("checkpoint: truncated u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace ckpt_detail

template <typename S>
std::vector<std::uint8_t> encode_tensor(const Tensor<S>& t) {
  std::vector<std::uint8_t> out;
  ckpt_detail::push_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) {
    ckpt_detail::push_u64(out, static_cast<std::uint64_t>(t.dim(i)));
  }
  const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), raw, raw + t.data().size_bytes());
  return out;
}

template <typename S>
Tensor<S> decode_tensor(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const std::uint32_t rank = ckpt_detail::read_u32(bytes, pos);
  if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<Index>(ckpt_detail::read_u64(bytes, pos));
    if (shape[i] < 0) throw IoError("checkpoint: negative dimension");
  }
  const std::size_t count = static_cast<std::size_t>(numel(shape));
  if (bytes.size() - pos != count * sizeof(S)) {
    throw IoError("checkpoint: tensor payload size mismatch");
  }
  std::vector<S> data(count);
  std::memcpy(data.data(), bytes.data() + pos, count * sizeof(S));
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

template <typename S>
constexpr SectionKind tensor_kind() {
  if constexpr (sizeof(S) == 4) {
    return SectionKind::TensorF32;
  } else {
    return SectionKind::TensorF64;
  }
}

inline Section text_section(std::string name, const std::string& text) {
  Section s;
  s.name = std::move(name);
  s.kind = SectionKind::Text;
  s.bytes.assign(text.begin(), text.end());
  return s;
}

inline std::string section_text(const Section& s) {
  return std::string(s.bytes.begin(), s.bytes.end());
}

// key=value text payloads, one pair per line.
std::map<std::string, std::string> parse_kv(const std::string& text);
std::string format_kv(const std::map<std::string, std::string>& kv);

}  // namespace mcgen

#endif  // MCGEN_CHECKPOINT_HPP
