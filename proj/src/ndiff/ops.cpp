#include "mscot/ndiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mscot/common/error.hpp"

namespace mscot::ndiff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t, std::size_t r, std::size_t c) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap as_mat(const Tensor& t, std::size_t r, std::size_t c) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(r),
                     static_cast<Eigen::Index>(c));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

const Tensor& require_matrix_var(const Var& v, const char* op) {
  const Tensor& t = v.value();
  require_matrix(t, op);
  return t;
}

struct InterpTap {
  std::size_t lo;
  std::size_t hi;
  double w;
};

std::vector<InterpTap> interp_taps(std::size_t len, std::size_t target) {
  std::vector<InterpTap> taps(target);
  for (std::size_t i = 0; i < target; ++i) {
    double src = 0.0;
    if (len > 1) {
      src = target == 1 ? 0.5 * static_cast<double>(len - 1)
                        : static_cast<double>(i) * static_cast<double>(len - 1) /
                              static_cast<double>(target - 1);
    }
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, len - 1);
    const std::size_t hi = std::min(lo + 1, len - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

// Row j of the im2col matrix holds input rows j*stride + t - pad, t in [0, k).
Tensor im2col(const Tensor& x, std::size_t k, std::size_t stride, std::size_t out_len) {
  const std::size_t len = x.rows(), c = x.cols();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  Tensor col({out_len, k * c});
  for (std::size_t i = 0; i < out_len; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i * stride + t) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
      std::copy_n(x.row(static_cast<std::size_t>(src)).begin(), c,
                  col.data().begin() + static_cast<std::ptrdiff_t>(i * k * c + t * c));
    }
  }
  return col;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value() + b.value();
  return a.tape()->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.input_grad(0) += ctx.grad();
    if (ctx.needs(1)) ctx.input_grad(1) += ctx.grad();
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value() - b.value();
  return a.tape()->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.input_grad(0) += ctx.grad();
    if (ctx.needs(1)) ctx.input_grad(1) -= ctx.grad();
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (ctx.needs(0)) {
      Tensor& ga = ctx.input_grad(0);
      const Tensor& bv = ctx.input(1);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.input_grad(1);
      const Tensor& av = ctx.input(0);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value() * s;
  return a.tape()->record(std::move(out), {a}, [s](BackwardContext& ctx) {
    Tensor& ga = ctx.input_grad(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    ctx.input_grad(0) += ctx.grad();
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= v;
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    Tensor& ga = ctx.input_grad(0);
    const Tensor& x = ctx.input(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * x[i] * g[i];
  });
}

Var silu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    Tensor& ga = ctx.input_grad(0);
    const Tensor& x = ctx.input(0);
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x[i]));
      ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    Tensor& ga = ctx.input_grad(0);
    const Tensor& y = ctx.value();
    const Tensor& g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var add_rowvec(const Var& a, const Var& bias) {
  const Tensor& av = require_matrix_var(a, "add_rowvec");
  const Tensor& bv = bias.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw ShapeError("add_rowvec: bias has " + std::to_string(bv.size()) +
                     " entries, matrix has " + std::to_string(n) + " columns");
  }
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  return a.tape()->record(std::move(out), {a, bias}, [m, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (ctx.needs(0)) ctx.input_grad(0) += g;
    if (ctx.needs(1)) {
      Tensor& gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(ndiff::sum(a.value()));
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    const double g = ctx.grad()[0];
    for (double& v : ctx.input_grad(0).data()) v += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

// ---------------------------------------------------------------------------
// Linear maps

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_mat(out, a.rows(), b.cols()).noalias() =
      as_mat(a, a.rows(), a.cols()) * as_mat(b, b.rows(), b.cols());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                     " * " + shape_string(b.shape()) + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  as_mat(out, a.rows(), b.rows()).noalias() =
      as_mat(a, a.rows(), a.cols()) * as_mat(b, b.rows(), b.cols()).transpose();
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: inner dimensions differ " + shape_string(a.shape()) +
                     "^T * " + shape_string(b.shape()));
  }
  Tensor out({a.cols(), b.cols()});
  as_mat(out, a.cols(), b.cols()).noalias() =
      as_mat(a, a.rows(), a.cols()).transpose() * as_mat(b, b.rows(), b.cols());
  return out;
}

Tensor interp_resize(const Tensor& input, std::size_t target_len) {
  require_matrix(input, "interp_resize");
  if (target_len == 0) throw LengthError("interp_resize: target length must be positive");
  if (input.rows() == 0) throw LengthError("interp_resize: empty input");
  if (target_len == input.rows()) return input;
  const std::size_t d = input.cols();
  Tensor out({target_len, d});
  const auto taps = interp_taps(input.rows(), target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    const auto [lo, hi, w] = taps[i];
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = (1.0 - w) * input.at(lo, j) + w * input.at(hi, j);
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  require_matrix(logits, "softmax_rows");
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) z += (v = std::exp(v - mx));
    for (double& v : r) v /= z;
  }
  return out;
}

}  // namespace kernels

Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return a.tape()->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    if (ctx.needs(0)) {
      Tensor& ga = ctx.input_grad(0);
      as_mat(ga, av.rows(), av.cols()).noalias() +=
          as_mat(g, g.rows(), g.cols()) * as_mat(bv, bv.rows(), bv.cols()).transpose();
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.input_grad(1);
      as_mat(gb, bv.rows(), bv.cols()).noalias() +=
          as_mat(av, av.rows(), av.cols()).transpose() * as_mat(g, g.rows(), g.cols());
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor out = kernels::matmul_nt(a.value(), b.value());
  return a.tape()->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    if (ctx.needs(0)) {
      Tensor& ga = ctx.input_grad(0);
      as_mat(ga, av.rows(), av.cols()).noalias() +=
          as_mat(g, g.rows(), g.cols()) * as_mat(bv, bv.rows(), bv.cols());
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.input_grad(1);
      as_mat(gb, bv.rows(), bv.cols()).noalias() +=
          as_mat(g, g.rows(), g.cols()).transpose() * as_mat(av, av.rows(), av.cols());
    }
  });
}

Var conv1d(const Var& input, const Var& kernel, const std::optional<Var>& bias,
           std::size_t stride) {
  const Tensor& x = require_matrix_var(input, "conv1d");
  const Tensor& w = kernel.value();
  if (w.rank() != 3) {
    throw ShapeError("conv1d: kernel must be k x c_in x c_out, got " + shape_string(w.shape()));
  }
  const std::size_t k = w.dim(0), c_in = w.dim(1), c_out = w.dim(2);
  if (k % 2 == 0) throw ShapeError("conv1d: kernel width must be odd, got " + std::to_string(k));
  if (x.cols() != c_in) {
    throw ShapeError("conv1d: input has " + std::to_string(x.cols()) +
                     " channels, kernel expects " + std::to_string(c_in));
  }
  if (x.rows() == 0) throw LengthError("conv1d: empty input");
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  if (bias && bias->value().size() != c_out) {
    throw ShapeError("conv1d: bias has " + std::to_string(bias->value().size()) +
                     " entries, expected " + std::to_string(c_out));
  }
  const std::size_t len = x.rows();
  const std::size_t out_len = (len + stride - 1) / stride;
  const Tensor col = im2col(x, k, stride, out_len);
  Tensor out({out_len, c_out});
  as_mat(out, out_len, c_out).noalias() =
      as_mat(col, out_len, k * c_in) * as_mat(w, k * c_in, c_out);
  if (bias) {
    const Tensor& b = bias->value();
    for (std::size_t i = 0; i < out_len; ++i)
      for (std::size_t o = 0; o < c_out; ++o) out.at(i, o) += b[o];
  }
  std::vector<Var> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return input.tape()->record(std::move(out), inputs, [=](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& xv = ctx.input(0);
    const Tensor& wv = ctx.input(1);
    if (ctx.needs(1)) {
      const Tensor c = im2col(xv, k, stride, out_len);
      Tensor& gw = ctx.input_grad(1);
      as_mat(gw, k * c_in, c_out).noalias() +=
          as_mat(c, out_len, k * c_in).transpose() * as_mat(g, out_len, c_out);
    }
    if (ctx.needs(0)) {
      Tensor dcol({out_len, k * c_in});
      as_mat(dcol, out_len, k * c_in).noalias() =
          as_mat(g, out_len, c_out) * as_mat(wv, k * c_in, c_out).transpose();
      Tensor& gx = ctx.input_grad(0);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
      for (std::size_t i = 0; i < out_len; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i * stride + t) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const double* from = dcol.data().data() + i * k * c_in + t * c_in;
          double* to = gx.data().data() + static_cast<std::size_t>(src) * c_in;
          for (std::size_t c = 0; c < c_in; ++c) to[c] += from[c];
        }
      }
    }
    if (has_bias && ctx.needs(2)) {
      Tensor& gb = ctx.input_grad(2);
      for (std::size_t i = 0; i < out_len; ++i)
        for (std::size_t o = 0; o < c_out; ++o) gb[o] += g.at(i, o);
    }
  });
}

Var interp_resize(const Var& input, std::size_t target_len) {
  const Tensor& x = require_matrix_var(input, "interp_resize");
  if (target_len == 0) throw LengthError("interp_resize: target length must be positive");
  if (x.rows() == 0) throw LengthError("interp_resize: empty input");
  if (target_len == x.rows()) return input;
  const std::size_t d = x.cols();
  auto taps = interp_taps(x.rows(), target_len);
  Tensor out = kernels::interp_resize(x, target_len);
  return input.tape()->record(std::move(out), {input},
                              [taps = std::move(taps), d](BackwardContext& ctx) {
                                const Tensor& g = ctx.grad();
                                Tensor& gx = ctx.input_grad(0);
                                for (std::size_t i = 0; i < taps.size(); ++i) {
                                  const auto [lo, hi, w] = taps[i];
                                  for (std::size_t j = 0; j < d; ++j) {
                                    gx.at(lo, j) += (1.0 - w) * g.at(i, j);
                                    gx.at(hi, j) += w * g.at(i, j);
                                  }
                                }
                              });
}

// ---------------------------------------------------------------------------
// Indexing

Var gather_rows(const Var& table, std::span<const std::size_t> indices) {
  const Tensor& t = require_matrix_var(table, "gather_rows");
  const std::size_t d = t.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= t.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " >= " +
                       std::to_string(t.rows()));
    }
    std::copy_n(t.row(idx[i]).begin(), d, out.row(i).begin());
  }
  return table.tape()->record(std::move(out), {table},
                              [idx = std::move(idx), d](BackwardContext& ctx) {
                                const Tensor& g = ctx.grad();
                                Tensor& gt = ctx.input_grad(0);
                                for (std::size_t i = 0; i < idx.size(); ++i)
                                  for (std::size_t j = 0; j < d; ++j)
                                    gt.at(idx[i], j) += g.at(i, j);
                              });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = require_matrix_var(parts[0], "concat_rows").cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    const Tensor& t = require_matrix_var(p, "concat_rows");
    if (t.cols() != d) throw ShapeError("concat_rows: column count mismatch");
    offsets.push_back(total);
    total += t.rows();
  }
  Tensor out({total, d});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    std::copy(t.data().begin(), t.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(offsets[p] * d));
  }
  return parts[0].tape()->record(
      std::move(out), parts, [offsets = std::move(offsets), d](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        for (std::size_t p = 0; p < offsets.size(); ++p) {
          if (!ctx.needs(p)) continue;
          Tensor& gp = ctx.input_grad(p);
          const double* from = g.data().data() + offsets[p] * d;
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += from[i];
        }
      });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& t = require_matrix_var(a, "slice_rows");
  if (begin + count > t.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t d = t.cols();
  Tensor out({count, d});
  std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(begin * d), count * d,
              out.data().begin());
  return a.tape()->record(std::move(out), {a}, [begin, d](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor& ga = ctx.input_grad(0);
    double* to = ga.data().data() + begin * d;
    for (std::size_t i = 0; i < g.size(); ++i) to[i] += g[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = require_matrix_var(parts[0], "concat_cols").rows();
  std::vector<std::size_t> offsets, widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& t = require_matrix_var(p, "concat_cols");
    if (t.rows() != m) throw ShapeError("concat_cols: row count mismatch");
    offsets.push_back(total);
    widths.push_back(t.cols());
    total += t.cols();
  }
  Tensor out({m, total});
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out.at(i, offsets[p] + j) = t.at(i, j);
  }
  return parts[0].tape()->record(
      std::move(out), parts,
      [offsets = std::move(offsets), widths = std::move(widths), m](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        for (std::size_t p = 0; p < offsets.size(); ++p) {
          if (!ctx.needs(p)) continue;
          Tensor& gp = ctx.input_grad(p);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[p]; ++j) gp.at(i, j) += g.at(i, offsets[p] + j);
        }
      });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& t = require_matrix_var(a, "slice_cols");
  if (begin + count > t.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t m = t.rows();
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = t.at(i, begin + j);
  return a.tape()->record(std::move(out), {a}, [begin, count, m](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    Tensor& ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga.at(i, begin + j) += g.at(i, j);
  });
}

// ---------------------------------------------------------------------------
// Normalisation

namespace {

void softmax_backward(const Tensor& y, const Tensor& g, Tensor& gx) {
  const std::size_t m = y.rows(), n = y.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * y.at(i, j);
    for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - s);
  }
}

}  // namespace

Var softmax_rows(const Var& a) {
  require_matrix_var(a, "softmax_rows");
  Tensor out = kernels::softmax_rows(a.value());
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    softmax_backward(ctx.value(), ctx.grad(), ctx.input_grad(0));
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& x = require_matrix_var(a, "log_softmax_rows");
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : r) v -= lse;
  }
  return a.tape()->record(std::move(out), {a}, [](BackwardContext& ctx) {
    const Tensor& y = ctx.value();
    const Tensor& g = ctx.grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += g.at(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        gx.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * s;
    }
  });
}

AttentionMask::AttentionMask(std::size_t n, std::vector<unsigned char> allowed)
    : n_(n), allowed_(std::move(allowed)) {
  if (allowed_.size() != n * n) throw ShapeError("AttentionMask: expected n*n entries");
}

AttentionMask AttentionMask::full(std::size_t n) {
  return AttentionMask(n, std::vector<unsigned char>(n * n, 1));
}

AttentionMask AttentionMask::block_causal(std::span<const std::size_t> block_lengths) {
  std::size_t n = 0;
  for (std::size_t l : block_lengths) n += l;
  AttentionMask mask(n, std::vector<unsigned char>(n * n, 0));
  std::size_t begin = 0;
  for (std::size_t l : block_lengths) {
    const std::size_t end = begin + l;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < end; ++j) mask.set(i, j, true);
    begin = end;
  }
  return mask;
}

Var masked_softmax_rows(const Var& scores, const AttentionMask& mask) {
  const Tensor& s = require_matrix_var(scores, "masked_softmax_rows");
  const std::size_t n = s.rows();
  if (s.cols() != n || mask.size() != n) {
    throw ShapeError("masked_softmax_rows: scores " + shape_string(s.shape()) +
                     " vs mask of size " + std::to_string(mask.size()));
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask.allowed(i, j)) mx = std::max(mx, s.at(i, j));
    if (!std::isfinite(mx)) {
      throw DegenerateMaskError("attention mask row " + std::to_string(i) +
                                " permits no entries");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask.allowed(i, j)) z += (out.at(i, j) = std::exp(s.at(i, j) - mx));
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z;
  }
  return scores.tape()->record(std::move(out), {scores}, [](BackwardContext& ctx) {
    softmax_backward(ctx.value(), ctx.grad(), ctx.input_grad(0));
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = require_matrix_var(x, "layer_norm_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm_rows: gamma/beta must have " + std::to_string(n) + " entries");
  }
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - mu) * inv_std[i];
      out.at(i, j) = xhat.at(i, j) * gv[j] + bv[j];
    }
  }
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        const Tensor& gv = ctx.input(1);
        if (ctx.needs(0)) {
          Tensor& gx = ctx.input_grad(0);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = g.at(i, j) * gv[j];
              s1 += dxh;
              s2 += dxh * xhat.at(i, j);
            }
            const double nn = static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = g.at(i, j) * gv[j];
              gx.at(i, j) += inv_std[i] * (dxh - s1 / nn - xhat.at(i, j) * s2 / nn);
            }
          }
        }
        if (ctx.needs(1)) {
          Tensor& gg = ctx.input_grad(1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
        }
        if (ctx.needs(2)) {
          Tensor& gb = ctx.input_grad(2);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
        }
      });
}

Var cross_entropy_sum(const Var& logits, std::span<const std::size_t> targets) {
  const Tensor& z = require_matrix_var(logits, "cross_entropy_sum");
  const std::size_t m = z.rows(), n = z.cols();
  if (targets.size() != m) {
    throw ShapeError("cross_entropy_sum: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(m) + " rows");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Tensor probs = kernels::softmax_rows(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] >= n) {
      throw ShapeError("cross_entropy_sum: target " + std::to_string(tgt[i]) +
                       " out of range for " + std::to_string(n) + " classes");
    }
    auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    loss += mx + std::log(s) - z.at(i, tgt[i]);
  }
  return logits.tape()->record(
      Tensor::scalar(loss), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), m, n](BackwardContext& ctx) {
        const double g = ctx.grad()[0];
        Tensor& gz = ctx.input_grad(0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gz.at(i, j) += g * probs.at(i, j);
          gz.at(i, tgt[i]) -= g;
        }
      });
}

Var stop_gradient(const Var& a) { return a.tape()->constant(a.value()); }

Var external_scalar(const Var& input, double value, Tensor gradient) {
  if (gradient.shape() != input.shape()) {
    throw ShapeError("external_scalar: gradient shape " + shape_string(gradient.shape()) +
                     " differs from input " + shape_string(input.shape()));
  }
  return input.tape()->record(Tensor::scalar(value), {input},
                              [gradient = std::move(gradient)](BackwardContext& ctx) {
                                const double g = ctx.grad()[0];
                                Tensor& gi = ctx.input_grad(0);
                                for (std::size_t i = 0; i < gi.size(); ++i)
                                  gi[i] += g * gradient[i];
                              });
}

}  // namespace mscot::ndiff
