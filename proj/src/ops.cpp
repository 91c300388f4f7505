#include "trace/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "trace/errors.hpp"

namespace trace::ops {

using detail::ImplPtr;

namespace {

// [rows x cols] row-major to [cols x rows], so inner loops become axpy form.
std::vector<double> transposed(const double* x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data, bool track) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = track;
  return Tensor(std::move(impl));
}

void record(const char* kind, const Tensor& out, Tape::BackwardFn fn) {
  active_tape()->record(kind, out.impl(), std::move(fn));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

// Number of rows when all but the last dimension are flattened.
std::size_t leading_rows(const Shape& s) {
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return rows;
}

bool is_suffix(const Shape& full, const Shape& part) {
  if (part.size() > full.size()) return false;
  return std::equal(part.rbegin(), part.rend(), full.rbegin());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.empty() || bs.size() != 2 || as.back() != bs[0]) shape_error("matmul", as, bs);
  const std::size_t m = leading_rows(as), k = bs[0], n = bs[1];

  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Shape os = as;
  os.back() = n;
  const bool track = tracking({&a, &b});
  Tensor result = make_result(std::move(os), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = result.impl();
    record("matmul", result, [pa, pb, po, m, k, n] {
      const double* G = po->grad.data();
      if (pa->requires_grad) {
        double* dA = pa->grad_buffer().data();
        const std::vector<double> Bt = transposed(pb->data.data(), k, n);
        for (std::size_t i = 0; i < m; ++i) {
          double* drow = dA + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = G[i * n + j];
            const double* btrow = Bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += gv * btrow[p];
          }
        }
      }
      if (pb->requires_grad) {
        double* dB = pb->grad_buffer().data();
        const double* A = pa->data.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            double* drow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[1]) shape_error("linear", xs, ws);
  const std::size_t m = leading_rows(xs), k = ws[1], n = ws[0];

  std::vector<double> out(m * n, 0.0);
  const double* X = x.data().data();
  const std::vector<double> Wt = transposed(weight.data().data(), n, k);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = X[i * k + p];
      const double* wtrow = Wt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wtrow[j];
    }
  }
  Shape os = xs;
  os.back() = n;
  const bool track = tracking({&x, &weight});
  Tensor result = make_result(std::move(os), std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), pw = weight.impl(), po = result.impl();
    record("linear", result, [px, pw, po, m, k, n] {
      const double* G = po->grad.data();
      const double* X = px->data.data();
      const double* W = pw->data.data();
      double* dX = px->requires_grad ? px->grad_buffer().data() : nullptr;
      double* dW = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (dX) {
            double* drow = dX + i * k;
            const double* wrow = W + j * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += g * wrow[p];
          }
          if (dW) {
            double* drow = dW + j * k;
            const double* xrow = X + i * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += g * xrow[p];
          }
        }
      }
    });
  }
  return result;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
    shape_error("bmm", as, bs);
  }
  const std::size_t g = as[0], m = as[1], k = as[2], n = bs[2];
  std::vector<double> out(g * m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t q = 0; q < g; ++q) {
    const double* Aq = A + q * m * k;
    const double* Bq = B + q * k * n;
    double* Oq = out.data() + q * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = Aq[i * k + p];
        const double* brow = Bq + p * n;
        double* orow = Oq + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  const bool track = tracking({&a, &b});
  Tensor result = make_result({g, m, n}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = result.impl();
    record("bmm", result, [pa, pb, po, g, m, k, n] {
      const double* G = po->grad.data();
      const double* A = pa->data.data();
      const double* B = pb->data.data();
      double* dA = pa->requires_grad ? pa->grad_buffer().data() : nullptr;
      double* dB = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
      for (std::size_t q = 0; q < g; ++q) {
        const double* Gq = G + q * m * n;
        if (dA) {
          const std::vector<double> Bt = transposed(B + q * k * n, k, n);
          for (std::size_t i = 0; i < m; ++i) {
            double* drow = dA + q * m * k + i * k;
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = Gq[i * n + j];
              const double* btrow = Bt.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) drow[p] += gv * btrow[p];
            }
          }
        }
        if (dB) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = Gq + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = A[q * m * k + i * k + p];
              double* drow = dB + q * k * n + p * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[2]) {
    shape_error("bmm_nt", as, bs);
  }
  const std::size_t g = as[0], m = as[1], k = as[2], n = bs[1];
  std::vector<double> out(g * m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t q = 0; q < g; ++q) {
    const std::vector<double> Bt = transposed(B + q * n * k, n, k);
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = out.data() + q * m * n + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[q * m * k + i * k + p];
        const double* btrow = Bt.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * btrow[j];
      }
    }
  }
  const bool track = tracking({&a, &b});
  Tensor result = make_result({g, m, n}, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = result.impl();
    record("bmm_nt", result, [pa, pb, po, g, m, k, n] {
      const double* G = po->grad.data();
      const double* A = pa->data.data();
      const double* B = pb->data.data();
      double* dA = pa->requires_grad ? pa->grad_buffer().data() : nullptr;
      double* dB = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
      for (std::size_t q = 0; q < g; ++q) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = G[q * m * n + i * n + j];
            if (gv == 0.0) continue;
            if (dA) {
              double* drow = dA + q * m * k + i * k;
              const double* brow = B + q * n * k + j * k;
              for (std::size_t p = 0; p < k; ++p) drow[p] += gv * brow[p];
            }
            if (dB) {
              double* drow = dB + q * n * k + j * k;
              const double* arow = A + q * m * k + i * k;
              for (std::size_t p = 0; p < k; ++p) drow[p] += gv * arow[p];
            }
          }
        }
      }
    });
  }
  return result;
}

namespace {

enum class Binary { add, sub, mul };

Tensor binary(Binary kind, const char* name, const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (!is_suffix(as, bs)) shape_error(name, as, bs);
  const std::size_t n = a.numel();
  const std::size_t inner = b.numel();
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = B[i % inner];
    switch (kind) {
      case Binary::add: out[i] = A[i] + bv; break;
      case Binary::sub: out[i] = A[i] - bv; break;
      case Binary::mul: out[i] = A[i] * bv; break;
    }
  }
  const bool track = tracking({&a, &b});
  Tensor result = make_result(as, std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), pb = b.impl(), po = result.impl();
    record(name, result, [kind, pa, pb, po, n, inner] {
      const double* G = po->grad.data();
      if (pa->requires_grad) {
        double* dA = pa->grad_buffer().data();
        if (kind == Binary::mul) {
          const double* B = pb->data.data();
          for (std::size_t i = 0; i < n; ++i) dA[i] += G[i] * B[i % inner];
        } else {
          for (std::size_t i = 0; i < n; ++i) dA[i] += G[i];
        }
      }
      if (pb->requires_grad) {
        double* dB = pb->grad_buffer().data();
        const double* A = pa->data.data();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Binary::add: dB[i % inner] += G[i]; break;
            case Binary::sub: dB[i % inner] -= G[i]; break;
            case Binary::mul: dB[i % inner] += G[i] * A[i]; break;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, "mul", a, b); }

namespace {

Tensor affine(const char* name, const Tensor& a, double factor, double offset) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = factor * v + offset;
  const bool track = tracking({&a});
  Tensor result = make_result(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr pa = a.impl(), po = result.impl();
    record(name, result, [pa, po, factor] {
      auto& dA = pa->grad_buffer();
      for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += factor * po->grad[i];
    });
  }
  return result;
}

}  // namespace

Tensor scale(const Tensor& a, double factor) { return affine("scale", a, factor, 0.0); }
Tensor add_scalar(const Tensor& a, double offset) { return affine("add_scalar", a, 1.0, offset); }

Tensor unary(Unary kind, const Tensor& a) {
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    switch (kind) {
      case Unary::tanh: out[i] = std::tanh(x); break;
      case Unary::sin: out[i] = std::sin(x); break;
      case Unary::cos: out[i] = std::cos(x); break;
      case Unary::square: out[i] = x * x; break;
      case Unary::sigmoid:
        // Branches keep exp() from overflowing for large |x|.
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        break;
      case Unary::gelu: out[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); break;
    }
  }
  const bool track = tracking({&a});
  Tensor result = make_result(a.shape(), std::move(out), track);
  if (track) {
    static constexpr const char* kNames[] = {"tanh", "sin", "cos", "square", "sigmoid", "gelu"};
    ImplPtr pa = a.impl(), po = result.impl();
    record(kNames[static_cast<int>(kind)], result, [kind, pa, po] {
      auto& dA = pa->grad_buffer();
      const auto& X = pa->data;
      const auto& Y = po->data;
      const auto& G = po->grad;
      for (std::size_t i = 0; i < dA.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case Unary::tanh: d = 1.0 - Y[i] * Y[i]; break;
          case Unary::sin: d = std::cos(X[i]); break;
          case Unary::cos: d = -std::sin(X[i]); break;
          case Unary::square: d = 2.0 * X[i]; break;
          case Unary::sigmoid: d = Y[i] * (1.0 - Y[i]); break;
          case Unary::gelu: {
            const double cdf = 0.5 * (1.0 + std::erf(X[i] * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * X[i] * X[i]) * std::numbers::inv_sqrtpi /
                               std::numbers::sqrt2;
            d = cdf + X[i] * pdf;
            break;
          }
        }
        dA[i] += d * G[i];
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  const bool track = tracking({&a});
  Tensor result = make_result({}, {total}, track);
  if (track) {
    ImplPtr pa = a.impl(), po = result.impl();
    record("sum", result, [pa, po] {
      const double g = po->grad[0];
      for (double& d : pa->grad_buffer()) d += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor frobenius_norm(const Tensor& a) {
  double ss = 0.0;
  for (double v : a.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  const bool track = tracking({&a});
  Tensor result = make_result({}, {norm}, track);
  if (track) {
    ImplPtr pa = a.impl(), po = result.impl();
    record("frobenius_norm", result, [pa, po, norm] {
      if (norm == 0.0) return;
      const double g = po->grad[0] / norm;
      auto& dA = pa->grad_buffer();
      for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += g * pa->data[i];
    });
  }
  return result;
}

namespace {

void softmax_backward_rows(const double* Y, const double* G, double* dX, std::size_t rows,
                           std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* y = Y + r * n;
    const double* g = G + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
    double* dx = dX + r * n;
    for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw DimensionError("softmax_rows: need a non-empty last axis");
  const std::size_t n = s.back();
  const std::size_t rows = x.numel() / n;
  const double* X = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X + r * n;
    double* yr = out.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  const bool track = tracking({&x});
  Tensor result = make_result(s, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    record("softmax_rows", result, [px, po, rows, n] {
      softmax_backward_rows(po->data.data(), po->grad.data(), px->grad_buffer().data(), rows, n);
    });
  }
  return result;
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> key_mask,
                           std::size_t heads) {
  const Shape& s = x.shape();
  if (s.size() != 3 || heads == 0 || s[0] % heads != 0) {
    throw DimensionError("masked_softmax_rows: expected [batch*heads x q x k], got " +
                         shape_string(s));
  }
  const std::size_t groups = s[0], q = s[1], k = s[2];
  const std::size_t batch = groups / heads;
  if (key_mask.size() != batch * k) {
    throw DimensionError("masked_softmax_rows: key mask holds " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(batch * k));
  }
  const double* X = x.data().data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* mask = key_mask.data() + (g / heads) * k;
    for (std::size_t i = 0; i < q; ++i) {
      const double* xr = X + (g * q + i) * k;
      double* yr = out.data() + (g * q + i) * k;
      double mx = 0.0;
      bool any = false;
      for (std::size_t j = 0; j < k; ++j) {
        if (!mask[j]) continue;
        mx = any ? std::max(mx, xr[j]) : xr[j];
        any = true;
      }
      if (!any) throw ContractError("masked_softmax_rows: row with every key masked");
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (!mask[j]) continue;
        yr[j] = std::exp(xr[j] - mx);
        z += yr[j];
      }
      for (std::size_t j = 0; j < k; ++j) yr[j] /= z;
    }
  }
  const bool track = tracking({&x});
  Tensor result = make_result(s, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    record("masked_softmax_rows", result, [px, po, groups, q, k] {
      // Masked entries have y = 0, so the plain softmax rule gives them zero gradient.
      softmax_backward_rows(po->data.data(), po->grad.data(), px->grad_buffer().data(),
                            groups * q, k);
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw DimensionError("layer_norm: need a non-empty last axis");
  const std::size_t d = s.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    shape_error("layer_norm", s, gain.shape() != Shape{d} ? gain.shape() : bias.shape());
  }
  const std::size_t rows = x.numel() / d;
  const double* X = x.data().data();
  const double* gw = gain.data().data();
  const double* bw = bias.data().data();
  std::vector<double> out(x.numel());
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * is;
      normalized[r * d + j] = xh;
      out[r * d + j] = gw[j] * xh + bw[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor result = make_result(s, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), pg = gain.impl(), pb = bias.impl(), po = result.impl();
    record("layer_norm", result,
           [px, pg, pb, po, rows, d, xhat = std::move(normalized), inv = std::move(inv_std)] {
             const double* G = po->grad.data();
             const double* gw = pg->data.data();
             double* dX = px->requires_grad ? px->grad_buffer().data() : nullptr;
             double* dG = pg->requires_grad ? pg->grad_buffer().data() : nullptr;
             double* dB = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
             std::vector<double> dxhat(d);
             for (std::size_t r = 0; r < rows; ++r) {
               const double* g = G + r * d;
               const double* xh = xhat.data() + r * d;
               double mean_d = 0.0, mean_dx = 0.0;
               for (std::size_t j = 0; j < d; ++j) {
                 if (dG) dG[j] += g[j] * xh[j];
                 if (dB) dB[j] += g[j];
                 dxhat[j] = g[j] * gw[j];
                 mean_d += dxhat[j];
                 mean_dx += dxhat[j] * xh[j];
               }
               if (!dX) continue;
               mean_d /= static_cast<double>(d);
               mean_dx /= static_cast<double>(d);
               double* dx = dX + r * d;
               for (std::size_t j = 0; j < d; ++j) {
                 dx[j] += inv[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
               }
             }
           });
  }
  return result;
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_string(ts));
  if (shape_numel(ids_shape) != ids.size()) {
    throw DimensionError("embedding: ids do not fill shape " + shape_string(ids_shape));
  }
  const std::size_t vocab = ts[0], d = ts[1];
  const double* T = table.data().data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw VocabularyError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    std::copy_n(T + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape os = ids_shape;
  os.push_back(d);
  const bool track = tracking({&table});
  Tensor result = make_result(std::move(os), std::move(out), track);
  if (track) {
    ImplPtr pt = table.impl(), po = result.impl();
    std::vector<std::int64_t> saved(ids.begin(), ids.end());
    record("embedding", result, [pt, po, d, saved = std::move(saved)] {
      double* dT = pt->grad_buffer().data();
      const double* G = po->grad.data();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        double* row = dT + static_cast<std::size_t>(saved[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += G[i * d + j];
      }
    });
  }
  return result;
}

Tensor slice_block(const Tensor& x, std::size_t rows, std::size_t cols) {
  const Shape& s = x.shape();
  if (s.size() != 2 || rows > s[0] || cols > s[1]) {
    throw DimensionError("slice_block: cannot take [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "] from " + shape_string(s));
  }
  const std::size_t stride = s[1];
  const double* X = x.data().data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(X + r * stride, cols, out.data() + r * cols);
  const bool track = tracking({&x});
  Tensor result = make_result({rows, cols}, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    record("slice_block", result, [px, po, rows, cols, stride] {
      double* dX = px->grad_buffer().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) dX[r * stride + c] += po->grad[r * cols + c];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  const bool track = tracking({&x});
  Tensor result =
      make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    record("reshape", result, [px, po] {
      auto& dX = px->grad_buffer();
      for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += po->grad[i];
    });
  }
  return result;
}

namespace {

// Moves between [b x l x heads*dh] and [b*heads x l x dh]. `to_heads` picks the direction.
Tensor permute_heads(const Tensor& x, std::size_t heads, bool to_heads) {
  const Shape& s = x.shape();
  if (s.size() != 3 || heads == 0) shape_error(to_heads ? "split_heads" : "merge_heads", s, {heads});
  std::size_t b, l, dh;
  if (to_heads) {
    if (s[2] % heads != 0) {
      throw ConfigError("split_heads: width " + std::to_string(s[2]) +
                        " not divisible by head count " + std::to_string(heads));
    }
    b = s[0], l = s[1], dh = s[2] / heads;
  } else {
    if (s[0] % heads != 0) shape_error("merge_heads", s, {heads});
    b = s[0] / heads, l = s[1], dh = s[2];
  }
  const std::size_t d = heads * dh;
  // Flat index of element (batch, pos, head, j) in the merged and split layouts.
  auto merged = [=](std::size_t bi, std::size_t li, std::size_t h, std::size_t j) {
    return (bi * l + li) * d + h * dh + j;
  };
  auto split = [=](std::size_t bi, std::size_t li, std::size_t h, std::size_t j) {
    return ((bi * heads + h) * l + li) * dh + j;
  };
  const double* X = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < dh; ++j) {
          if (to_heads) {
            out[split(bi, li, h, j)] = X[merged(bi, li, h, j)];
          } else {
            out[merged(bi, li, h, j)] = X[split(bi, li, h, j)];
          }
        }
  Shape os = to_heads ? Shape{b * heads, l, dh} : Shape{b, l, d};
  const bool track = tracking({&x});
  Tensor result = make_result(std::move(os), std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    record(to_heads ? "split_heads" : "merge_heads", result,
           [px, po, b, l, heads, dh, to_heads, merged, split] {
             double* dX = px->grad_buffer().data();
             const double* G = po->grad.data();
             for (std::size_t bi = 0; bi < b; ++bi)
               for (std::size_t li = 0; li < l; ++li)
                 for (std::size_t h = 0; h < heads; ++h)
                   for (std::size_t j = 0; j < dh; ++j) {
                     if (to_heads) {
                       dX[merged(bi, li, h, j)] += G[split(bi, li, h, j)];
                     } else {
                       dX[split(bi, li, h, j)] += G[merged(bi, li, h, j)];
                     }
                   }
           });
  }
  return result;
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t heads) { return permute_heads(x, heads, true); }
Tensor merge_heads(const Tensor& x, std::size_t heads) { return permute_heads(x, heads, false); }

Tensor select_rows(const Tensor& x, std::span<const std::size_t> positions) {
  const Shape& s = x.shape();
  if (s.size() != 3 || positions.size() != s[0]) {
    throw DimensionError("select_rows: " + std::to_string(positions.size()) +
                         " positions for input " + shape_string(s));
  }
  const std::size_t b = s[0], l = s[1], d = s[2];
  const double* X = x.data().data();
  std::vector<double> out(b * d);
  for (std::size_t i = 0; i < b; ++i) {
    if (positions[i] >= l) {
      throw ContractError("select_rows: position " + std::to_string(positions[i]) +
                          " out of range for length " + std::to_string(l));
    }
    std::copy_n(X + (i * l + positions[i]) * d, d, out.data() + i * d);
  }
  const bool track = tracking({&x});
  Tensor result = make_result({b, d}, std::move(out), track);
  if (track) {
    ImplPtr px = x.impl(), po = result.impl();
    std::vector<std::size_t> saved(positions.begin(), positions.end());
    record("select_rows", result, [px, po, l, d, saved = std::move(saved)] {
      double* dX = px->grad_buffer().data();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        double* row = dX + (i * l + saved[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += po->grad[i * d + j];
      }
    });
  }
  return result;
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets, double clamp) {
  const Shape& s = probs.shape();
  if (s.size() != 2 || targets.size() != probs.numel()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for predictions " + shape_string(s));
  }
  const std::size_t b = s[0];
  if (b == 0) throw ContractError("binary_cross_entropy: empty batch");
  const double* P = probs.data().data();
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double p = std::clamp(P[i], clamp, 1.0 - clamp);
    const double y = targets[i];
    total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  const bool track = tracking({&probs});
  Tensor result = make_result({}, {-total * inv_b}, track);
  if (track) {
    ImplPtr pp = probs.impl(), po = result.impl();
    std::vector<double> y(targets.begin(), targets.end());
    record("binary_cross_entropy", result, [pp, po, y = std::move(y), inv_b, clamp] {
      const double g = po->grad[0] * inv_b;
      auto& dP = pp->grad_buffer();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = pp->data[i];
        if (p < clamp || p > 1.0 - clamp) continue;
        dP[i] += -g * (y[i] / p - (1.0 - y[i]) / (1.0 - p));
      }
    });
  }
  return result;
}

}  // namespace trace::ops
