#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mscot/ndiff/tape.hpp"

namespace mscot::ndiff {

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);

// a: m x n, bias: n or 1 x n, broadcast over rows.
Var add_rowvec(const Var& a, const Var& bias);

Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);

// a: m x k, b: k x n.
Var matmul(const Var& a, const Var& b);
// a: m x k, b: n x k; returns a * b^T.
Var matmul_nt(const Var& a, const Var& b);

// Same-padding (zero fill) temporal convolution.
// input: L x c_in, kernel: k x c_in x c_out with k odd, bias: c_out.
// Output length is ceil(L / stride).
Var conv1d(const Var& input, const Var& kernel, const std::optional<Var>& bias = std::nullopt,
           std::size_t stride = 1);

// Endpoint-aligned linear interpolation along the rows of an L x d input.
// target_len == L returns the input Var itself.
Var interp_resize(const Var& input, std::size_t target_len);

Var gather_rows(const Var& table, std::span<const std::size_t> indices);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// Row-boolean mask; entry (i, j) permits row i to attend to column j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t n, std::vector<unsigned char> allowed);

  static AttentionMask full(std::size_t n);
  // Block i may see blocks 0..i (and every position inside its own block).
  static AttentionMask block_causal(std::span<const std::size_t> block_lengths);

  std::size_t size() const { return n_; }
  bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool value) { allowed_[i * n_ + j] = value; }

 private:
  std::size_t n_ = 0;
  std::vector<unsigned char> allowed_;
};

// Softmax over permitted entries only; forbidden entries receive probability 0.
// Throws DegenerateMaskError if a row permits nothing.
Var masked_softmax_rows(const Var& scores, const AttentionMask& mask);

// x: m x n, gamma/beta: n.
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Sum over rows of -log softmax(logits)[row, target[row]].
Var cross_entropy_sum(const Var& logits, std::span<const std::size_t> targets);

// Constant copy; blocks gradient flow.
Var stop_gradient(const Var& a);

// Scalar node whose value and gradient w.r.t. `input` are supplied externally
// (e.g. analytic goal terms).
Var external_scalar(const Var& input, double value, Tensor gradient);

// Plain (untaped) kernels shared by the ops above.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor interp_resize(const Tensor& input, std::size_t target_len);
Tensor softmax_rows(const Tensor& logits);
}  // namespace kernels

}  // namespace mscot::ndiff
