#include "mcgen/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace mcgen {

namespace {
constexpr char kMagic[4] = {'M', 'C', 'G', 'M'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

const Section& Container::find(const std::string& name) const {
  if (const Section* s = find_optional(name)) return *s;
  throw IoError("checkpoint: missing section '" + name + "'");
}

const Section* Container::find_optional(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void write_container(const std::string& path, const Container& c) {
  {
    std::unordered_set<std::string> names;
    for (const auto& s : c.sections) {
      if (!names.insert(s.name).second) {
        throw ValueError("checkpoint: duplicate section '" + s.name + "'");
      }
    }
  }
  // Header + manifest size, then payload offsets.
  std::size_t header = 4 + 4 + 4;
  for (const auto& s : c.sections) header += 4 + s.name.size() + 4 + 8 + 8;
  std::vector<std::uint8_t> out;
  out.reserve(header);
  out.insert(out.end(), kMagic, kMagic + 4);
  ckpt_detail::push_u32(out, c.version);
  ckpt_detail::push_u32(out, static_cast<std::uint32_t>(c.sections.size()));
  std::uint64_t offset = header;
  for (const auto& s : c.sections) {
    ckpt_detail::push_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    ckpt_detail::push_u32(out, static_cast<std::uint32_t>(s.kind));
    ckpt_detail::push_u64(out, offset);
    ckpt_detail::push_u64(out, s.bytes.size());
    offset += s.bytes.size();
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open " + tmp);
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
    for (const auto& s : c.sections) {
      f.write(reinterpret_cast<const char*>(s.bytes.data()),
              static_cast<std::streamsize>(s.bytes.size()));
    }
    if (!f) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("checkpoint: rename to " + path + " failed: " + ec.message());
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  std::span<const std::uint8_t> b(bytes);
  if (b.size() < 12 || std::memcmp(b.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  std::size_t pos = 4;
  Container c;
  c.version = ckpt_detail::read_u32(b, pos);
  if (c.version != kVersion) {
    throw IoError("checkpoint: unsupported version " +
                  std::to_string(c.version) + " in " + path);
  }
  const std::uint32_t count = ckpt_detail::read_u32(b, pos);
  struct Entry {
    std::string name;
    std::uint32_t kind;
    std::uint64_t offset, length;
  };
  std::vector<Entry> entries;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = ckpt_detail::read_u32(b, pos);
    if (pos + name_len > b.size()) {
      throw IoError("checkpoint: manifest overflow in " + path);
    }
    std::string name(reinterpret_cast<const char*>(b.data() + pos), name_len);
    pos += name_len;
    const std::uint32_t kind = ckpt_detail::read_u32(b, pos);
    const std::uint64_t off = ckpt_detail::read_u64(b, pos);
    const std::uint64_t len = ckpt_detail::read_u64(b, pos);
    if (kind > static_cast<std::uint32_t>(SectionKind::Text)) {
      throw IoError("checkpoint: unknown section kind in " + path);
    }
    if (!names.insert(name).second) {
      throw IoError("checkpoint: duplicate section '" + name + "' in " + path);
    }
    entries.push_back({std::move(name), kind, off, len});
  }
  // Manifest must be followed directly by non-overlapping in-bounds payloads.
  std::uint64_t cursor = pos;
  for (const auto& e : entries) {
    if (e.offset < cursor || e.offset + e.length > b.size()) {
      throw IoError("checkpoint: section '" + e.name +
                    "' offset/length out of bounds in " + path);
    }
    cursor = e.offset + e.length;
  }
  for (auto& e : entries) {
    Section s;
    s.name = std::move(e.name);
    s.kind = static_cast<SectionKind>(e.kind);
    s.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(e.offset),
                   b.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length));
    c.sections.push_back(std::move(s));
  }
  return c;
}

std::uint64_t container_checksum(const Container& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::span<const std::uint8_t> bytes) {
    for (std::uint8_t v : bytes) {
      h ^= v;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& s : c.sections) {
    mix(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(s.name.data()), s.name.size()));
    mix(s.bytes);
  }
  return h;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValueError("config: malformed line '" + line + "' (expected key=value)");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  return out.str();
}

}  // namespace mcgen
