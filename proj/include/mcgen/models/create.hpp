#ifndef MCGEN_MODELS_CREATE_HPP
#define MCGEN_MODELS_CREATE_HPP

#include "mcgen/models/common.hpp"

namespace mcgen {

// Creation never touches learned parameters: the returned models share every
// tensor with the source (handles are shallow-copied) and only the codebooks
// are replaced.

// Fresh uniform books for every controller.
template <typename M>
M resample_model(const M& model, RngStream& stream) {
  M copy = model;
  for (auto& [name, book] : copy.books()) {
    *book = resample_codebook(*book, stream);
  }
  return copy;
}

// One novel modality: per-layer uniform crossover between the source and
// target rows, substituted at the source row index (generate with
// mode=source). Each layer draws its own selection mask. source == target is
// degenerate but allowed and reproduces the source.
template <typename M>
M crossover_model(const M& model, int source, int target, RngStream& stream) {
  M copy = model;
  for (auto& [name, book] : copy.books()) {
    Codeword novel = crossover(book->row(source), book->row(target), stream);
    *book = Codebook::replace_row(*book, source, std::move(novel));
  }
  return copy;
}

// Interpolating transition: `steps`+1 models whose source-row codewords move
// monotonically from the source row (step 0, exact) to the target row (step
// `steps`, exact). Step k flips the first round(k*H/steps) differing bits in
// a per-layer random order, so midpoints are unbiased crossovers.
template <typename M>
std::vector<M> crossover_path(const M& model, int source, int target, int steps,
                              RngStream& stream) {
  if (steps < 1) throw ValueError("crossover: steps must be >= 1");
  M probe = model;  // row accessors only
  auto probe_books = probe.books();
  // Per-layer permutation of differing positions.
  std::vector<std::vector<std::size_t>> orders;
  for (auto& [name, book] : probe_books) {
    const Codeword& es = book->row(source);
    const Codeword& et = book->row(target);
    std::vector<std::size_t> diff;
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (es[i] != et[i]) diff.push_back(i);
    }
    auto perm = stream.permutation(static_cast<Index>(diff.size()));
    std::vector<std::size_t> order(diff.size());
    for (std::size_t i = 0; i < diff.size(); ++i) {
      order[i] = diff[static_cast<std::size_t>(perm[i])];
    }
    orders.push_back(std::move(order));
  }
  std::vector<M> path;
  path.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    M step_model = model;
    auto bs = step_model.books();
    for (std::size_t li = 0; li < bs.size(); ++li) {
      Codebook* book = bs[li].second;
      Codeword row = book->row(source);
      const Codeword& et = book->row(target);
      const std::size_t flips = static_cast<std::size_t>(
          std::llround(static_cast<double>(k) *
                       static_cast<double>(orders[li].size()) / steps));
      for (std::size_t i = 0; i < flips; ++i) {
        row[orders[li][i]] = et[orders[li][i]];
      }
      *book = Codebook::replace_row(*book, source, std::move(row));
    }
    path.push_back(std::move(step_model));
  }
  return path;
}

}  // namespace mcgen

#endif  // MCGEN_MODELS_CREATE_HPP
