#include "mcgen/codebook.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

namespace mcgen {

namespace {

constexpr int kRetryCap = 1'000'000;

std::string pack_key(const Codeword& row) {
  return std::string(row.begin(), row.end());
}

Codeword draw_row(int width, RngStream& stream) {
  Codeword row(static_cast<std::size_t>(width));
  for (auto& b : row) b = stream.bernoulli(0.5) ? 1 : 0;
  return row;
}

bool all_zero(const Codeword& row) {
  return std::all_of(row.begin(), row.end(), [](std::uint8_t b) { return b == 0; });
}

void check_capacity(int num_modes, int width) {
  if (num_modes < 1) throw ValueError("codebook: need at least one mode");
  if (width < 1) throw ValueError("codebook: width must be positive");
  if (width < 63) {
    const std::uint64_t cap = (std::uint64_t(1) << width) - 1;  // non-zero words
    if (static_cast<std::uint64_t>(num_modes) > cap) {
      throw ValueError("codebook: " + std::to_string(num_modes) +
                       " modes exceed the 2^" + std::to_string(width) +
                       "-1 unique non-zero codewords of width " +
                       std::to_string(width));
    }
  }
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) {
      throw IoError("codebook: truncated block (" + std::to_string(bytes.size()) +
                    " bytes, need " + std::to_string(pos + n) + ")");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

Codebook::Codebook(std::vector<Codeword> rows, std::string layer_id,
                   std::uint64_t seed)
    : rows_(std::move(rows)), layer_id_(std::move(layer_id)), seed_(seed) {
  if (rows_.empty()) throw ValueError("codebook: no rows");
  const std::size_t d = rows_[0].size();
  std::unordered_set<std::string> seen;
  for (const auto& r : rows_) {
    if (r.size() != d) throw ValueError("codebook: ragged rows");
    if (all_zero(r)) throw ValueError("codebook: all-zero row");
    for (auto b : r) {
      if (b > 1) throw ValueError("codebook: non-binary entry");
    }
    if (!seen.insert(pack_key(r)).second) {
      throw ValueError("codebook: duplicate rows");
    }
  }
  check_capacity(static_cast<int>(rows_.size()), static_cast<int>(d));
}

Codebook Codebook::all_ones(int num_modes, int width, std::string layer_id) {
  if (num_modes < 1 || width < 1) {
    throw ValueError("codebook: invalid all-ones dimensions");
  }
  std::vector<Codeword> rows(static_cast<std::size_t>(num_modes),
                             Codeword(static_cast<std::size_t>(width), 1));
  return Codebook(Unchecked{}, std::move(rows), std::move(layer_id));
}

Codebook Codebook::replace_row(const Codebook& base, int row_idx, Codeword row) {
  if (row.size() != static_cast<std::size_t>(base.width())) {
    throw ShapeError("codebook: replacement row width mismatch");
  }
  if (row_idx < 0 || row_idx >= base.num_modes()) {
    throw ValueError("codebook: row index out of range");
  }
  std::vector<Codeword> rows = base.rows_;
  rows[static_cast<std::size_t>(row_idx)] = std::move(row);
  Codebook out(Unchecked{}, std::move(rows), base.layer_id_);
  out.seed_ = base.seed_;
  return out;
}

const Codeword& Codebook::row(int c) const {
  if (c < 0 || c >= num_modes()) {
    throw ValueError("codebook: mode index " + std::to_string(c) +
                     " out of range [0, " + std::to_string(num_modes()) + ")");
  }
  return rows_[static_cast<std::size_t>(c)];
}

double Codebook::row_density(int c) const {
  const auto& r = row(c);
  double ones = 0;
  for (auto b : r) ones += b;
  return ones / static_cast<double>(r.size());
}

ModalitySelector::ModalitySelector(std::vector<Index> labels, int num_modes)
    : labels_(std::move(labels)), num_modes_(num_modes) {
  if (num_modes_ < 1) throw ValueError("modality selector: no modes");
  for (Index l : labels_) {
    if (l < 0 || l >= num_modes_) {
      throw ValueError("modality selector: label " + std::to_string(l) +
                       " out of range [0, " + std::to_string(num_modes_) + ")");
    }
  }
}

ModalitySelector ModalitySelector::from_matrix(
    const std::vector<std::uint8_t>& h, Index n, int num_modes) {
  if (static_cast<Index>(h.size()) != n * num_modes) {
    throw ShapeError("modality selector: matrix size mismatch");
  }
  std::vector<Index> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int ones = 0;
    Index at = -1;
    for (int c = 0; c < num_modes; ++c) {
      const std::uint8_t v = h[static_cast<std::size_t>(i * num_modes + c)];
      if (v > 1) throw ValueError("modality selector: non-binary entry");
      if (v == 1) {
        ++ones;
        at = c;
      }
    }
    if (ones != 1) {
      throw ValueError("modality selector: row " + std::to_string(i) +
                       " is not one-hot (" + std::to_string(ones) + " ones)");
    }
    labels[static_cast<std::size_t>(i)] = at;
  }
  return ModalitySelector(std::move(labels), num_modes);
}

std::vector<std::uint8_t> ModalitySelector::one_hot() const {
  std::vector<std::uint8_t> h(labels_.size() * static_cast<std::size_t>(num_modes_), 0);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    h[i * static_cast<std::size_t>(num_modes_) +
      static_cast<std::size_t>(labels_[i])] = 1;
  }
  return h;
}

Codebook sample_codebook(int num_modes, int width, RngStream& stream,
                         std::string layer_id, std::uint64_t seed) {
  check_capacity(num_modes, width);
  std::vector<Codeword> rows;
  rows.reserve(static_cast<std::size_t>(num_modes));
  std::unordered_set<std::string> seen;
  int attempts = 0;
  while (static_cast<int>(rows.size()) < num_modes) {
    if (++attempts > kRetryCap) {
      throw Error("codebook: retry cap exceeded while sampling unique rows");
    }
    Codeword row = draw_row(width, stream);
    if (all_zero(row)) continue;
    if (!seen.insert(pack_key(row)).second) continue;
    rows.push_back(std::move(row));
  }
  return Codebook(std::move(rows), std::move(layer_id), seed);
}

std::vector<std::uint8_t> select_masks(const Codebook& book,
                                       const ModalitySelector& h) {
  if (h.num_modes() != book.num_modes()) {
    throw ShapeError("select_masks: selector has " +
                     std::to_string(h.num_modes()) + " modes, book has " +
                     std::to_string(book.num_modes()));
  }
  const Index n = h.batch_size();
  const int c = book.num_modes();
  const int d = book.width();
  const auto one_hot = h.one_hot();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n) *
                                static_cast<std::size_t>(d));
  // Integer matrix product (h x e); rows are one-hot so each output row is a
  // 0/1 combination of book rows.
  for (Index i = 0; i < n; ++i) {
    std::uint8_t* dst = &out[static_cast<std::size_t>(i) * d];
    for (int j = 0; j < c; ++j) {
      const std::uint8_t hv = one_hot[static_cast<std::size_t>(i) * c + j];
      if (!hv) continue;
      const Codeword& row = book.row(j);
      for (int k = 0; k < d; ++k) dst[k] = static_cast<std::uint8_t>(dst[k] + hv * row[k]);
    }
  }
  return out;
}

Codeword crossover(const Codeword& source, const Codeword& target,
                   RngStream& stream) {
  std::vector<std::uint8_t> take(source.size());
  for (auto& b : take) b = stream.bernoulli(0.5) ? 1 : 0;
  return crossover_with_mask(source, target, take);
}

Codeword crossover_with_mask(const Codeword& source, const Codeword& target,
                             const std::vector<std::uint8_t>& take_source) {
  if (source.size() != target.size() || take_source.size() != source.size()) {
    throw ShapeError("crossover: codeword lengths differ");
  }
  Codeword out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    out[i] = take_source[i] ? source[i] : target[i];
  }
  return out;
}

Codebook resample_codebook(const Codebook& book, RngStream& stream) {
  return sample_codebook(book.num_modes(), book.width(), stream,
                         book.layer_id(), book.seed());
}

std::vector<std::uint8_t> serialize_codebook(const Codebook& book) {
  std::vector<std::uint8_t> out;
  const int c = book.num_modes();
  const int d = book.width();
  push_u32(out, static_cast<std::uint32_t>(c));
  push_u32(out, static_cast<std::uint32_t>(d));
  push_u64(out, book.seed());
  push_u32(out, static_cast<std::uint32_t>(book.layer_id().size()));
  out.insert(out.end(), book.layer_id().begin(), book.layer_id().end());
  const int row_bytes = (d + 7) / 8;
  for (int i = 0; i < c; ++i) {
    const Codeword& row = book.row(i);
    for (int by = 0; by < row_bytes; ++by) {
      std::uint8_t v = 0;
      for (int bit = 0; bit < 8; ++bit) {
        const int k = by * 8 + bit;
        if (k < d && row[static_cast<std::size_t>(k)]) {
          v |= static_cast<std::uint8_t>(1u << (7 - bit));  // MSB-first
        }
      }
      out.push_back(v);
    }
  }
  return out;
}

Codebook deserialize_codebook(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  const std::uint32_t c = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint64_t seed = r.u64();
  const std::uint32_t id_len = r.u32();
  if (c == 0 || d == 0 || c > (1u << 24) || d > (1u << 24)) {
    throw IoError("codebook: corrupt length fields (C=" + std::to_string(c) +
                  ", D=" + std::to_string(d) + ")");
  }
  std::string layer_id = r.str(id_len);
  const std::uint32_t row_bytes = (d + 7) / 8;
  std::vector<Codeword> rows;
  rows.reserve(c);
  for (std::uint32_t i = 0; i < c; ++i) {
    r.need(row_bytes);
    Codeword row(d);
    for (std::uint32_t k = 0; k < d; ++k) {
      const std::uint8_t byte = bytes[r.pos + k / 8];
      row[k] = (byte >> (7 - (k % 8))) & 1u;
    }
    r.pos += row_bytes;
    rows.push_back(std::move(row));
  }
  // Constructor re-validates uniqueness / non-zero rows.
  return Codebook(std::move(rows), std::move(layer_id), seed);
}

}  // namespace mcgen
