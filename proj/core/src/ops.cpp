#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "side/errors.hpp"
#include "side/tensor.hpp"

namespace side {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(x.shape()));
  }
}

void accumulate(std::vector<double>* buf, std::size_t i, double v) {
  if (buf) (*buf)[i] += v;
}

// Shared skeleton for unary pointwise ops. fwd maps x -> y, dfdx gives the
// local derivative from (x, y).
template <typename Fwd, typename Dfdx>
Tensor pointwise_unary(const char* name, const Tensor& x, Fwd fwd, Dfdx dfdx) {
  const std::vector<double>& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  std::vector<double> saved_out;
  if (x.requires_grad()) saved_out = out;
  return OpBuilder::make(
      name, x.shape(), std::move(out), {x},
      [x, saved_out = std::move(saved_out), dfdx](
          const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        const std::vector<double>& xv = x.data();
        for (std::size_t i = 0; i < xv.size(); ++i) {
          (*p[0])[i] += g[i] * dfdx(xv[i], saved_out[i]);
        }
      });
}

}  // namespace

// ---- matrix ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeError("matmul: inner extents disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const std::vector<double>& av = a.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = bv.data() + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return OpBuilder::make(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [a, b, m, k, n](const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& p) {
        const std::vector<double>& av = a.data();
        const std::vector<double>& bv = b.data();
        if (p[0]) {  // a_grad += g · bᵀ
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[kk * n + j];
              (*p[0])[i * k + kk] += acc;
            }
        }
        if (p[1]) {  // b_grad += aᵀ · g
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += av[i * k + kk] * g[i * n + j];
              (*p[1])[kk * n + j] += acc;
            }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t m = x.extent(0), n = x.extent(1);
  const std::vector<double>& xv = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return OpBuilder::make(
      "transpose", Shape{n, m}, std::move(out), {x},
      [m, n](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*p[0])[i * n + j] += g[j * m + i];
      });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank("softmax_rows", x, 2);
  const std::size_t m = x.extent(0), n = x.extent(1);
  const std::vector<double>& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (std::isnan(xv[i])) {
      throw DomainError("softmax_rows: NaN input at index " + std::to_string(i));
    }
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* orow = out.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= denom;
  }
  std::vector<double> saved;
  if (x.requires_grad()) saved = out;
  return OpBuilder::make(
      "softmax_rows", x.shape(), std::move(out), {x},
      [m, n, saved = std::move(saved)](const std::vector<double>& g,
                                       const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        // Jacobian-vector product per row: s ⊙ (g − (g·s)).
        for (std::size_t i = 0; i < m; ++i) {
          const double* s = saved.data() + i * n;
          const double* gr = g.data() + i * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * s[j];
          for (std::size_t j = 0; j < n; ++j) (*p[0])[i * n + j] += s[j] * (gr[j] - dot);
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1) throw ShapeError("linear: input must have rank >= 1");
  require_rank("linear", w, 2);
  require_rank("linear", b, 1);
  const std::size_t cin = x.extent(x.rank() - 1);
  if (w.extent(0) != cin) {
    throw ShapeError("linear: input trailing extent " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t cout = w.extent(1);
  if (b.extent(0) != cout) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.size() / cin;
  const std::vector<double>& xv = x.data();
  const std::vector<double>& wv = w.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(rows * cout);
  for (std::size_t r = 0; r < rows; ++r) {
    double* orow = out.data() + r * cout;
    for (std::size_t j = 0; j < cout; ++j) orow[j] = bv[j];
    const double* xrow = xv.data() + r * cin;
    for (std::size_t i = 0; i < cin; ++i) {
      const double xi = xrow[i];
      const double* wrow = wv.data() + i * cout;
      for (std::size_t j = 0; j < cout; ++j) orow[j] += xi * wrow[j];
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  return OpBuilder::make(
      "linear", std::move(out_shape), std::move(out), {x, w, b},
      [x, w, rows, cin, cout](const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& p) {
        const std::vector<double>& xv = x.data();
        const std::vector<double>& wv = w.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * cout;
          const double* xrow = xv.data() + r * cin;
          if (p[0]) {
            for (std::size_t i = 0; i < cin; ++i) {
              double acc = 0.0;
              const double* wrow = wv.data() + i * cout;
              for (std::size_t j = 0; j < cout; ++j) acc += grow[j] * wrow[j];
              (*p[0])[r * cin + i] += acc;
            }
          }
          if (p[1]) {
            for (std::size_t i = 0; i < cin; ++i) {
              const double xi = xrow[i];
              for (std::size_t j = 0; j < cout; ++j) (*p[1])[i * cout + j] += xi * grow[j];
            }
          }
          if (p[2]) {
            for (std::size_t j = 0; j < cout; ++j) (*p[2])[j] += grow[j];
          }
        }
      });
}

namespace {

struct LerpAxis {
  std::size_t i0, i1;
  double frac;
};

// Half-pixel-center source coordinate, clamped to the borders.
std::vector<LerpAxis> upsample_axis(std::size_t src_n, std::size_t factor) {
  std::vector<LerpAxis> taps(src_n * factor);
  for (std::size_t d = 0; d < src_n * factor; ++d) {
    double s = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    LerpAxis t;
    if (s <= 0.0) {
      t = {0, 0, 0.0};
    } else if (s >= static_cast<double>(src_n - 1)) {
      t = {src_n - 1, src_n - 1, 0.0};
    } else {
      std::size_t i0 = static_cast<std::size_t>(s);
      t = {i0, i0 + 1, s - static_cast<double>(i0)};
    }
    taps[d] = t;
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  require_rank("bilinear_upsample", x, 3);
  if (factor == 0) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t oh = h * factor, ow = w * factor;
  const auto ytap = upsample_axis(h, factor);
  const auto xtap = upsample_axis(w, factor);
  const std::vector<double>& xv = x.data();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = xv.data() + ch * h * w;
    double* oplane = out.data() + ch * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const LerpAxis& ty = ytap[oy];
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const LerpAxis& tx = xtap[ox];
        const double v00 = plane[ty.i0 * w + tx.i0];
        const double v01 = plane[ty.i0 * w + tx.i1];
        const double v10 = plane[ty.i1 * w + tx.i0];
        const double v11 = plane[ty.i1 * w + tx.i1];
        // Incremental form keeps constant fields bit-exact.
        const double top = v00 + tx.frac * (v01 - v00);
        const double bot = v10 + tx.frac * (v11 - v10);
        oplane[oy * ow + ox] = top + ty.frac * (bot - top);
      }
    }
  }
  return OpBuilder::make(
      "bilinear_upsample", Shape{c, oh, ow}, std::move(out), {x},
      [c, h, w, oh, ow, ytap, xtap](const std::vector<double>& g,
                                    const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* gplane = p[0]->data() + ch * h * w;
          const double* oplane = g.data() + ch * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const LerpAxis& ty = ytap[oy];
            const double wy1 = ty.frac, wy0 = 1.0 - ty.frac;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const LerpAxis& tx = xtap[ox];
              const double go = oplane[oy * ow + ox];
              const double wx1 = tx.frac, wx0 = 1.0 - tx.frac;
              gplane[ty.i0 * w + tx.i0] += go * wy0 * wx0;
              gplane[ty.i0 * w + tx.i1] += go * wy0 * wx1;
              gplane[ty.i1 * w + tx.i0] += go * wy1 * wx0;
              gplane[ty.i1 * w + tx.i1] += go * wy1 * wx1;
            }
          }
        }
      });
}

// ---- elementwise suite -----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const std::vector<double>& av = a.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return OpBuilder::make(
      "add", a.shape(), std::move(out), {a, b},
      [](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          accumulate(p[0], i, g[i]);
          accumulate(p[1], i, g[i]);
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const std::vector<double>& av = a.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return OpBuilder::make(
      "sub", a.shape(), std::move(out), {a, b},
      [](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          accumulate(p[0], i, g[i]);
          accumulate(p[1], i, -g[i]);
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const std::vector<double>& av = a.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return OpBuilder::make(
      "mul", a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        const std::vector<double>& av = a.data();
        const std::vector<double>& bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          accumulate(p[0], i, g[i] * bv[i]);
          accumulate(p[1], i, g[i] * av[i]);
        }
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const std::vector<double>& av = a.data();
  const std::vector<double>& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (bv[i] == 0.0) {
      throw DomainError("div: zero denominator at index " + std::to_string(i));
    }
    out[i] = av[i] / bv[i];
  }
  return OpBuilder::make(
      "div", a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        const std::vector<double>& av = a.data();
        const std::vector<double>& bv = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          accumulate(p[0], i, g[i] / bv[i]);
          accumulate(p[1], i, -g[i] * av[i] / (bv[i] * bv[i]));
        }
      });
}

Tensor exp(const Tensor& x) {
  return pointwise_unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const std::vector<double>& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw DomainError("log: non-positive input at index " + std::to_string(i) +
                        " (value " + std::to_string(xv[i]) + ")");
    }
  }
  return pointwise_unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  const std::vector<double>& xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] < 0.0) {
      throw DomainError("sqrt: negative input at index " + std::to_string(i) +
                        " (value " + std::to_string(xv[i]) + ")");
    }
  }
  return pointwise_unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise_unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return pointwise_unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double phi_cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return phi_cdf + v * phi_pdf;
      });
}

Tensor relu(const Tensor& x) {
  return pointwise_unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor negate(const Tensor& x) {
  return pointwise_unary(
      "negate", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return pointwise_unary(
      "add_scalar", x, [s](double v) { return v + s; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return pointwise_unary(
      "mul_scalar", x, [s](double v) { return v * s; },
      [s](double, double) { return s; });
}

// ---- reductions ------------------------------------------------------------

namespace {

// Maps every input linear index to its output linear index once the reduced
// axes are dropped.
std::vector<std::size_t> reduction_index_map(const Shape& in_shape,
                                             const std::vector<std::size_t>& axes) {
  std::vector<bool> reduced(in_shape.size(), false);
  for (std::size_t a : axes) reduced[a] = true;
  Shape out_shape;
  for (std::size_t d = 0; d < in_shape.size(); ++d) {
    if (!reduced[d]) out_shape.push_back(in_shape[d]);
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> coord(in_shape.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oi = 0;
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
      if (!reduced[d]) oi = oi * in_shape[d] + coord[d];
    }
    map[i] = oi;
    for (std::size_t d = in_shape.size(); d-- > 0;) {
      if (++coord[d] < in_shape[d]) break;
      coord[d] = 0;
    }
  }
  return map;
}

Tensor reduce_impl(const char* name, const Tensor& x,
                   const std::vector<std::size_t>& axes_in, bool take_mean) {
  std::vector<std::size_t> axes = axes_in;
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.size() != axes_in.size()) {
    throw ShapeError(std::string(name) + ": duplicate axes");
  }
  for (std::size_t a : axes) {
    if (a >= x.rank()) {
      throw ShapeError(std::string(name) + ": axis " + std::to_string(a) +
                       " out of range for " + shape_str(x.shape()));
    }
  }
  Shape out_shape;
  std::size_t count = 1;
  {
    std::vector<bool> reduced(x.rank(), false);
    for (std::size_t a : axes) reduced[a] = true;
    for (std::size_t d = 0; d < x.rank(); ++d) {
      if (reduced[d]) count *= x.extent(d);
      else out_shape.push_back(x.extent(d));
    }
  }
  auto map = reduction_index_map(x.shape(), axes);
  const std::vector<double>& xv = x.data();
  std::vector<double> out(shape_numel(out_shape), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[map[i]] += xv[i];
  const double scale = take_mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (take_mean) {
    for (double& v : out) v *= scale;
  }
  return OpBuilder::make(
      name, std::move(out_shape), std::move(out), {x},
      [map = std::move(map), scale](const std::vector<double>& g,
                                    const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t i = 0; i < map.size(); ++i) (*p[0])[i] += g[map[i]] * scale;
      });
}

std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_impl("sum", x, all_axes(x), false); }

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes) {
  return reduce_impl("sum", x, axes, false);
}

Tensor mean(const Tensor& x) { return reduce_impl("mean", x, all_axes(x), true); }

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes) {
  return reduce_impl("mean", x, axes, true);
}

Tensor masked_sum(const Tensor& x, const Tensor& mask) {
  require_same_shape("masked_sum", x, mask);
  if (mask.requires_grad()) {
    throw DomainError("masked_sum: mask must not require gradients");
  }
  const std::vector<double>& xv = x.data();
  const std::vector<double>& mv = mask.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < mv.size(); ++i) {
    if (mv[i] != 0.0 && mv[i] != 1.0) {
      throw DomainError("masked_sum: mask must be 0/1, got " +
                        std::to_string(mv[i]) + " at index " + std::to_string(i));
    }
    if (mv[i] == 1.0) acc += xv[i];
  }
  return OpBuilder::make(
      "masked_sum", Shape{}, std::vector<double>{acc}, {x, mask},
      [mask](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        const std::vector<double>& mv = mask.data();
        for (std::size_t i = 0; i < mv.size(); ++i) (*p[0])[i] += g[0] * mv[i];
      });
}

// ---- structural ops --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  return OpBuilder::make(
      "reshape", std::move(new_shape), x.data(), {x},
      [](const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*p[0])[i] += g[i];
      });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index_map, Shape out_shape) {
  if (index_map.size() != shape_numel(out_shape)) {
    throw ShapeError("gather: index map size " + std::to_string(index_map.size()) +
                     " does not match output " + shape_str(out_shape));
  }
  const std::vector<double>& xv = x.data();
  std::vector<double> out(index_map.size());
  for (std::size_t i = 0; i < index_map.size(); ++i) {
    if (index_map[i] >= xv.size()) {
      throw ShapeError("gather: index " + std::to_string(index_map[i]) +
                       " out of range for " + shape_str(x.shape()));
    }
    out[i] = xv[index_map[i]];
  }
  return OpBuilder::make(
      "gather", std::move(out_shape), std::move(out), {x},
      [map = std::move(index_map)](const std::vector<double>& g,
                                   const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t i = 0; i < map.size(); ++i) (*p[0])[map[i]] += g[i];
      });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_cols", x, 2);
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  if (count == 0 || start + count > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " +
                     shape_str(x.shape()));
  }
  const std::vector<double>& xv = x.data();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * cols + start + j];
  return OpBuilder::make(
      "slice_cols", Shape{rows, count}, std::move(out), {x},
      [rows, cols, start, count](const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& p) {
        if (!p[0]) return;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < count; ++j)
            (*p[0])[r * cols + start + j] += g[r * count + j];
      });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = xs[0].extent(0);
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    require_rank("concat_cols", t, 2);
    if (t.extent(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(t.shape()) + " vs " +
                       shape_str(xs[0].shape()));
    }
    total += t.extent(1);
  }
  std::vector<double> out(rows * total);
  std::size_t col0 = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  for (const Tensor& t : xs) {
    const std::size_t c = t.extent(1);
    const std::vector<double>& tv = t.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * total + col0 + j] = tv[r * c + j];
    offsets.push_back(col0);
    widths.push_back(c);
    col0 += c;
  }
  return OpBuilder::make(
      "concat_cols", Shape{rows, total}, std::move(out), xs,
      [rows, total, offsets = std::move(offsets), widths = std::move(widths)](
          const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        for (std::size_t k = 0; k < p.size(); ++k) {
          if (!p[k]) continue;
          const std::size_t c = widths[k], off = offsets[k];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j)
              (*p[k])[r * c + j] += g[r * total + off + j];
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  require_rank("layer_norm", gamma, 1);
  require_rank("layer_norm", beta, 1);
  const std::size_t c = x.extent(x.rank() - 1);
  if (gamma.extent(0) != c || beta.extent(0) != c) {
    throw ShapeError("layer_norm: gamma/beta extent must match trailing axis " +
                     std::to_string(c));
  }
  const std::size_t rows = x.size() / c;
  const std::vector<double>& xv = x.data();
  const std::vector<double>& gv = gamma.data();
  const std::vector<double>& bv = beta.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mu) * istd;
      xhat[r * c + j] = xh;
      out[r * c + j] = gv[j] * xh + bv[j];
    }
  }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  if (!rg) {
    xhat.clear();
    inv_std.clear();
  }
  return OpBuilder::make(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const std::vector<double>& g, const std::vector<std::vector<double>*>& p) {
        const std::vector<double>& gv = gamma.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * c;
          const double* xh = xhat.data() + r * c;
          if (p[0]) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = grow[j] * gv[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xh[j];
            }
            const double istd = inv_std[r];
            const double invc = 1.0 / static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = grow[j] * gv[j];
              (*p[0])[r * c + j] +=
                  istd * (dxh - invc * sum_dxhat - xh[j] * invc * sum_dxhat_xhat);
            }
          }
          if (p[1]) {
            for (std::size_t j = 0; j < c; ++j) (*p[1])[j] += grow[j] * xh[j];
          }
          if (p[2]) {
            for (std::size_t j = 0; j < c; ++j) (*p[2])[j] += grow[j];
          }
        }
      });
}

Tensor chw_to_tokens(const Tensor& x) {
  require_rank("chw_to_tokens", x, 3);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::vector<std::size_t> map(c * h * w);
  for (std::size_t pos = 0; pos < h * w; ++pos)
    for (std::size_t ch = 0; ch < c; ++ch) map[pos * c + ch] = ch * h * w + pos;
  return gather(x, std::move(map), Shape{h * w, c});
}

Tensor tokens_to_chw(const Tensor& x, std::size_t channels, std::size_t h,
                     std::size_t w) {
  require_rank("tokens_to_chw", x, 2);
  if (x.extent(0) != h * w || x.extent(1) != channels) {
    throw ShapeError("tokens_to_chw: " + shape_str(x.shape()) +
                     " does not match " + std::to_string(channels) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<std::size_t> map(channels * h * w);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t pos = 0; pos < h * w; ++pos)
      map[ch * h * w + pos] = pos * channels + ch;
  return gather(x, std::move(map), Shape{channels, h, w});
}

}  // namespace side
