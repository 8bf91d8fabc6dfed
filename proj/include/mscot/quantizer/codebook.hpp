#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mscot/ndiff/tensor.hpp"

namespace mscot::quantizer {

// V x d embedding table shared by every scale.
class Codebook {
 public:
  Codebook() = default;
  Codebook(ndiff::Tensor entries, bool normalized);

  std::size_t size() const { return entries_.empty() ? 0 : entries_.rows(); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.cols(); }
  bool normalized() const { return normalized_; }
  const ndiff::Tensor& entries() const { return entries_; }
  std::span<const double> entry(std::size_t v) const { return entries_.row(v); }

  // Throws ConfigError on V < 2, near-duplicate rows, or (when normalized)
  // rows off the unit sphere.
  void validate() const;

 private:
  ndiff::Tensor entries_;
  bool normalized_ = false;
};

// Rescales each row to unit l2 norm; zero rows are left alone.
void normalize_rows(ndiff::Tensor& entries);

// Index of the closest entry in Euclidean distance, lowest index on ties.
std::size_t nearest_code(std::span<const double> query, const Codebook& codebook);

// nearest_code for every row of an N x d matrix.
std::vector<std::size_t> nearest_codes(const ndiff::Tensor& queries, const Codebook& codebook);

}  // namespace mscot::quantizer
