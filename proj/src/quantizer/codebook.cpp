#include "mscot/quantizer/codebook.hpp"

#include <cmath>
#include <string>

#include "mscot/common/error.hpp"

namespace mscot::quantizer {

Codebook::Codebook(ndiff::Tensor entries, bool normalized)
    : entries_(std::move(entries)), normalized_(normalized) {
  if (!entries_.empty()) ndiff::require_matrix(entries_, "codebook");
}

void Codebook::validate() const {
  if (size() < 2) throw ConfigError("codebook needs at least 2 entries, has " + std::to_string(size()));
  for (std::size_t a = 0; a < size(); ++a) {
    if (normalized_) {
      double n2 = 0.0;
      for (double v : entry(a)) n2 += v * v;
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-9)
        throw ConfigError("normalized codebook row " + std::to_string(a) + " is not unit length");
    }
    for (std::size_t b = a + 1; b < size(); ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim(); ++j) d2 += (entry(a)[j] - entry(b)[j]) * (entry(a)[j] - entry(b)[j]);
      if (std::sqrt(d2) <= 1e-12)
        throw ConfigError("codebook rows " + std::to_string(a) + " and " + std::to_string(b) +
                          " coincide");
    }
  }
}

void normalize_rows(ndiff::Tensor& entries) {
  for (std::size_t r = 0; r < entries.rows(); ++r) {
    auto row = entries.row(r);
    double n2 = 0.0;
    for (double v : row) n2 += v * v;
    if (n2 == 0.0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : row) v *= inv;
  }
}

std::size_t nearest_code(std::span<const double> query, const Codebook& codebook) {
  if (codebook.size() == 0) throw ConfigError("nearest_code on an empty codebook");
  if (query.size() != codebook.dim())
    throw ShapeError("query has dimension " + std::to_string(query.size()) + ", codebook has " +
                     std::to_string(codebook.dim()));
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t v = 0; v < codebook.size(); ++v) {
    const auto e = codebook.entry(v);
    double d = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) d += (query[j] - e[j]) * (query[j] - e[j]);
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return best;
}

std::vector<std::size_t> nearest_codes(const ndiff::Tensor& queries, const Codebook& codebook) {
  ndiff::require_matrix(queries, "queries");
  std::vector<std::size_t> out(queries.rows());
  for (std::size_t r = 0; r < queries.rows(); ++r) out[r] = nearest_code(queries.row(r), codebook);
  return out;
}

}  // namespace mscot::quantizer
