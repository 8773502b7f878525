#ifndef MCGEN_CODEBOOK_HPP
#define MCGEN_CODEBOOK_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcgen/rng.hpp"
#include "mcgen/tensor.hpp"

namespace mcgen {

using Codeword = std::vector<std::uint8_t>;  // entries 0/1

// Per-layer modality codebook: C unique non-zero binary rows of width D,
// uniformly sampled. Rows stay fixed for the lifetime of a model; creation
// swaps whole books, never edits rows in place.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::vector<Codeword> rows, std::string layer_id, std::uint64_t seed);

  // Diagnostic book: every mode selects the all-ones mask, so an MC model
  // exposes its unconditional backbone with the mask ops still in the graph.
  // Bypasses the row-uniqueness rule on purpose; never produced by sampling.
  static Codebook all_ones(int num_modes, int width, std::string layer_id = {});

  // Creation helper: book with one row substituted. Crossover interpolation
  // may legitimately coincide with another trained row, so uniqueness is not
  // enforced here.
  static Codebook replace_row(const Codebook& base, int row_idx, Codeword row);

  int num_modes() const { return static_cast<int>(rows_.size()); }
  int width() const { return rows_.empty() ? 0 : static_cast<int>(rows_[0].size()); }
  const Codeword& row(int c) const;
  const std::vector<Codeword>& rows() const { return rows_; }
  const std::string& layer_id() const { return layer_id_; }
  std::uint64_t seed() const { return seed_; }

  // Fraction of ones in row c.
  double row_density(int c) const;

 private:
  struct Unchecked {};
  Codebook(Unchecked, std::vector<Codeword> rows, std::string layer_id)
      : rows_(std::move(rows)), layer_id_(std::move(layer_id)) {}

  std::vector<Codeword> rows_;
  std::string layer_id_;
  std::uint64_t seed_ = 0;
};

// One-hot modality assignment for a batch; each row selects exactly one mode.
class ModalitySelector {
 public:
  ModalitySelector(std::vector<Index> labels, int num_modes);
  // Validates an explicit binary matrix: every row one-hot.
  static ModalitySelector from_matrix(const std::vector<std::uint8_t>& h,
                                      Index n, int num_modes);

  Index batch_size() const { return static_cast<Index>(labels_.size()); }
  int num_modes() const { return num_modes_; }
  const std::vector<Index>& labels() const { return labels_; }
  // Dense one-hot matrix, row-major (N x C).
  std::vector<std::uint8_t> one_hot() const;

 private:
  std::vector<Index> labels_;
  int num_modes_ = 0;
};

// Uniformly draws C unique non-zero codewords of width D; rejection resampling
// on collisions with a hard retry cap. `seed` records the seed the caller
// derived `stream` from, for provenance only.
Codebook sample_codebook(int num_modes, int width, RngStream& stream,
                         std::string layer_id = {}, std::uint64_t seed = 0);

// N x D selection as the integer matrix product (one-hot h) x e.
std::vector<std::uint8_t> select_masks(const Codebook& book,
                                       const ModalitySelector& h);

// Bitwise genetic crossover: each output bit copied from source or target
// with probability 1/2 (bits where the parents agree are preserved).
Codeword crossover(const Codeword& source, const Codeword& target,
                   RngStream& stream);
// Deterministic variant: take_source[i] != 0 picks the source bit.
Codeword crossover_with_mask(const Codeword& source, const Codeword& target,
                             const std::vector<std::uint8_t>& take_source);

// Fresh uniform book of the same shape; layer id preserved, rows independent
// of the old ones.
Codebook resample_codebook(const Codebook& book, RngStream& stream);

// Bit-packed wire format (shared with the checkpoint container):
//   u32 C, u32 D, u64 seed, u32 id_len, id bytes, C rows of ceil(D/8) bytes,
//   each row packed MSB-first. All integers little-endian.
std::vector<std::uint8_t> serialize_codebook(const Codebook& book);
Codebook deserialize_codebook(std::span<const std::uint8_t> bytes);

// Selected masks as a dense (N, D) tensor, a constant in the autodiff graph.
template <typename S>
Tensor<S> mask_tensor(const Codebook& book, const ModalitySelector& h) {
  auto m = select_masks(book, h);
  std::vector<S> vals(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) vals[i] = static_cast<S>(m[i]);
  return Tensor<S>::from_data({h.batch_size(), book.width()}, std::move(vals));
}

}  // namespace mcgen

#endif  // MCGEN_CODEBOOK_HPP
