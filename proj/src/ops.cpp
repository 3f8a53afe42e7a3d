#include "par/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace par::ops {

namespace {

struct Dims {
  std::size_t r;
  std::size_t c;
};

Dims dims(const Tensor& t) { return {t.rows(), t.cols()}; }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  const auto da = dims(a), db = dims(b);
  if (da.r != db.r || da.c != db.c) mismatch(op, a, b);
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto d = dims(a);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op_result(name, {d.r, d.c}, std::move(out), {a},
                        [a, deriv](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto xv = a.data();
                          auto& ga = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i]);
                        });
}

// out (n x m) += A (n x k) * B (k x m), row-major.
void gemm_acc(const double* A, const double* B, double* out, std::size_t n, std::size_t k, std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* o0 = out + i * m;
    double* o1 = o0 + m;
    double* o2 = o1 + m;
    double* o3 = o2 + m;
    const double* a0 = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const double* bp = B + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double b = bp[j];
        o0[j] += x0 * b;
        o1[j] += x1 * b;
        o2[j] += x2 * b;
        o3[j] += x3 * b;
      }
    }
  }
  for (; i < n; ++i) {
    double* oi = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* bp = B + p * m;
      for (std::size_t j = 0; j < m; ++j) oi[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto da = dims(a), db = dims(b);
  if (da.c != db.r) mismatch("matmul", a, b);
  const std::size_t n = da.r, k = da.c, m = db.c;
  std::vector<double> out(n * m, 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    gemm_acc(A, B, out.data(), n, k, m);
  }
  return make_op_result(
      "matmul", {n, m}, std::move(out), {a, b},
      [a, b, n, k, m](std::span<const double> g, std::span<std::vector<double>* const> gin) {
        const double* A = a.data().data();
        const double* B = b.data().data();
        if (gin[0]) {
          std::vector<double> bt(m * k);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
          gemm_acc(g.data(), bt.data(), gin[0]->data(), n, m, k);
        }
        if (gin[1]) {
          std::vector<double> at(k * n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) at[p * n + i] = A[i * k + p];
          gemm_acc(at.data(), g.data(), gin[1]->data(), k, n, m);
        }
      });
}

Tensor transpose(const Tensor& a) {
  const auto d = dims(a);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.c; ++j) out[j * d.r + i] = x[i * d.c + j];
  return make_op_result("transpose", {d.c, d.r}, std::move(out), {a},
                        [d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t i = 0; i < d.r; ++i)
                            for (std::size_t j = 0; j < d.c; ++j) ga[i * d.c + j] += g[j * d.r + i];
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  const auto d = dims(a);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", {d.r, d.c}, std::move(out), {a, b},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (auto* gp : gin) {
                            if (!gp) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  const auto d = dims(a);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", {d.r, d.c}, std::move(out), {a, b},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                          if (gin[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  const auto d = dims(a);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", {d.r, d.c}, std::move(out), {a, b},
                        [a, b](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          auto xv = a.data(), yv = b.data();
                          if (gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * yv[i];
                          if (gin[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * xv[i];
                        });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  const auto d = dims(a), db = dims(bias);
  if (db.r != 1 || db.c != d.c) mismatch("add_row_bias", a, bias);
  auto x = a.data(), bv = bias.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.c; ++j) out[i * d.c + j] = x[i * d.c + j] + bv[j];
  return make_op_result("add_row_bias", {d.r, d.c}, std::move(out), {a, bias},
                        [d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                          if (gin[1]) {
                            auto& gb = *gin[1];
                            for (std::size_t i = 0; i < d.r; ++i)
                              for (std::size_t j = 0; j < d.c; ++j) gb[j] += g[i * d.c + j];
                          }
                        });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) mismatch("mul_scalar", a, s);
  const auto d = dims(a);
  const double sv = s.data()[0];
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sv;
  return make_op_result("mul_scalar", {d.r, d.c}, std::move(out), {a, s},
                        [a, s](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          auto xv = a.data();
                          const double sval = s.data()[0];
                          if (gin[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * sval;
                          if (gin[1]) {
                            double acc = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                            (*gin[1])[0] += acc;
                          }
                        });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double v) { return std::fabs(v); },
               [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double v) { return -v; }, [](double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary("leaky_relu", a, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const auto da = dims(a), db = dims(b);
  if (da.r != db.r) mismatch("concat_cols", a, b);
  const std::size_t c = da.c + db.c;
  auto x = a.data(), y = b.data();
  std::vector<double> out(da.r * c);
  for (std::size_t i = 0; i < da.r; ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * da.c), da.c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(i * db.c), db.c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c + da.c));
  }
  return make_op_result("concat_cols", {da.r, c}, std::move(out), {a, b},
                        [da, db, c](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (std::size_t i = 0; i < da.r; ++i) {
                            if (gin[0])
                              for (std::size_t j = 0; j < da.c; ++j) (*gin[0])[i * da.c + j] += g[i * c + j];
                            if (gin[1])
                              for (std::size_t j = 0; j < db.c; ++j) (*gin[1])[i * db.c + j] += g[i * c + da.c + j];
                          }
                        });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<std::size_t> starts;
  for (const auto& p : parts) {
    if (p.cols() != c) mismatch("concat_rows", parts.front(), p);
    starts.push_back(r);
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op_result("concat_rows", {r, c}, std::move(out), parts,
                        [starts, c](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          for (std::size_t k = 0; k < gin.size(); ++k) {
                            if (!gin[k]) continue;
                            auto& gk = *gin[k];
                            const std::size_t off = starts[k] * c;
                            for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[off + i];
                          }
                        });
}

Tensor slice(const Tensor& a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
  const auto d = dims(a);
  if (nrows == 0 || ncols == 0 || row0 + nrows > d.r || col0 + ncols > d.c) {
    throw ContractViolation("slice: block out of range for " + shape_str(a.shape()));
  }
  auto x = a.data();
  std::vector<double> out(nrows * ncols);
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = 0; j < ncols; ++j) out[i * ncols + j] = x[(row0 + i) * d.c + col0 + j];
  return make_op_result("slice", {nrows, ncols}, std::move(out), {a},
                        [=](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t i = 0; i < nrows; ++i)
                            for (std::size_t j = 0; j < ncols; ++j) ga[(row0 + i) * d.c + col0 + j] += g[i * ncols + j];
                        });
}

namespace {

// Shared softmax backward: dx_j = y_j (g_j - sum_k g_k y_k) over each row.
BackwardFn softmax_backward(std::shared_ptr<const std::vector<double>> y, Dims d) {
  return [y, d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
    if (!gin[0]) return;
    auto& ga = *gin[0];
    const auto& yv = *y;
    for (std::size_t i = 0; i < d.r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d.c; ++j) dot += g[i * d.c + j] * yv[i * d.c + j];
      for (std::size_t j = 0; j < d.c; ++j) ga[i * d.c + j] += yv[i * d.c + j] * (g[i * d.c + j] - dot);
    }
  };
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  const auto d = dims(a);
  auto x = a.data();
  auto y = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < d.r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d.c; ++j) {
      if (!std::isfinite(x[i * d.c + j])) throw ContractViolation("softmax_rows: non-finite row " + std::to_string(i));
      mx = std::max(mx, x[i * d.c + j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) z += ((*y)[i * d.c + j] = std::exp(x[i * d.c + j] - mx));
    for (std::size_t j = 0; j < d.c; ++j) (*y)[i * d.c + j] /= z;
  }
  std::vector<double> out = *y;
  return make_op_result("softmax_rows", {d.r, d.c}, std::move(out), {a}, softmax_backward(y, d));
}

Tensor masked_softmax_rows(const Tensor& a, std::span<const std::uint8_t> keep) {
  const auto d = dims(a);
  if (keep.size() != d.r * d.c) throw ContractViolation("masked_softmax_rows: mask size mismatch");
  auto x = a.data();
  auto y = std::make_shared<std::vector<double>>(x.size(), 0.0);
  for (std::size_t i = 0; i < d.r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < d.c; ++j) {
      if (!keep[i * d.c + j]) continue;
      any = true;
      if (!std::isfinite(x[i * d.c + j])) {
        throw ContractViolation("masked_softmax_rows: non-finite row " + std::to_string(i));
      }
      mx = std::max(mx, x[i * d.c + j]);
    }
    if (!any) throw ContractViolation("masked_softmax_rows: row " + std::to_string(i) + " has no kept entry");
    double z = 0.0;
    for (std::size_t j = 0; j < d.c; ++j)
      if (keep[i * d.c + j]) z += ((*y)[i * d.c + j] = std::exp(x[i * d.c + j] - mx));
    for (std::size_t j = 0; j < d.c; ++j) (*y)[i * d.c + j] /= z;
  }
  std::vector<double> out = *y;
  // Masked entries have y = 0, so the plain softmax backward leaves them untouched.
  return make_op_result("masked_softmax_rows", {d.r, d.c}, std::move(out), {a}, softmax_backward(y, d));
}

Tensor masked_normalize_rows(const Tensor& a, std::span<const std::uint8_t> keep, RowNorm mode) {
  if (mode == RowNorm::kSoftmax) return masked_softmax_rows(a, keep);
  const auto d = dims(a);
  if (keep.size() != d.r * d.c) throw ContractViolation("masked_normalize_rows: mask size mismatch");
  auto x = a.data();
  std::vector<double> u(x.size(), 0.0);
  for (std::size_t i = 0; i < d.r; ++i) {
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < d.c; ++j)
      if (keep[i * d.c + j]) {
        if (!std::isfinite(x[i * d.c + j]))
          throw ContractViolation("masked_normalize_rows: non-finite row " + std::to_string(i));
        kept.push_back(i * d.c + j);
      }
    if (kept.empty()) throw ContractViolation("masked_normalize_rows: row " + std::to_string(i) + " has no kept entry");
    if (mode == RowNorm::kSigmoid) {
      for (auto e : kept) u[e] = x[e];
      continue;
    }
    if (mode == RowNorm::kZScore) {
      double mu = 0.0, var = 0.0;
      for (auto e : kept) mu += x[e];
      mu /= static_cast<double>(kept.size());
      for (auto e : kept) var += (x[e] - mu) * (x[e] - mu);
      const double sd = std::sqrt(var / static_cast<double>(kept.size()));
      for (auto e : kept) u[e] = sd > 0.0 ? (x[e] - mu) / sd : 0.0;
    } else {
      double lo = x[kept[0]], hi = x[kept[0]];
      for (auto e : kept) lo = std::min(lo, x[e]), hi = std::max(hi, x[e]);
      for (auto e : kept) u[e] = hi > lo ? (x[e] - lo) / (hi - lo) : 0.0;
    }
  }
  if (mode != RowNorm::kSigmoid) {
    Tensor scaled = make_op_result(
        "masked_rescale_rows", {d.r, d.c}, std::vector<double>(u), {a},
        [a, d, mode, keep = std::vector<std::uint8_t>(keep.begin(), keep.end()), u](
            std::span<const double> g, std::span<std::vector<double>* const> gin) {
          if (!gin[0]) return;
          auto x = a.data();
          auto& gx = *gin[0];
          for (std::size_t i = 0; i < d.r; ++i) {
            std::vector<std::size_t> kept;
            for (std::size_t j = 0; j < d.c; ++j)
              if (keep[i * d.c + j]) kept.push_back(i * d.c + j);
            const double n = static_cast<double>(kept.size());
            if (mode == RowNorm::kZScore) {
              double mu = 0.0, var = 0.0;
              for (auto e : kept) mu += x[e];
              mu /= n;
              for (auto e : kept) var += (x[e] - mu) * (x[e] - mu);
              const double sd = std::sqrt(var / n);
              if (sd == 0.0) continue;
              double gm = 0.0, gzm = 0.0;
              for (auto e : kept) gm += g[e], gzm += g[e] * u[e];
              gm /= n;
              gzm /= n;
              for (auto e : kept) gx[e] += (g[e] - gm - u[e] * gzm) / sd;
            } else {
              std::size_t lo = kept[0], hi = kept[0];
              for (auto e : kept) {
                if (x[e] < x[lo]) lo = e;
                if (x[e] > x[hi]) hi = e;
              }
              const double range = x[hi] - x[lo];
              if (range <= 0.0) continue;
              double glo = 0.0, ghi = 0.0;
              for (auto e : kept) {
                gx[e] += g[e] / range;
                glo += g[e] * (u[e] - 1.0) / range;
                ghi -= g[e] * u[e] / range;
              }
              gx[lo] += glo;
              gx[hi] += ghi;
            }
          }
        });
    return masked_softmax_rows(scaled, keep);
  }
  auto y = std::make_shared<std::vector<double>>(x.size(), 0.0);
  auto s = std::make_shared<std::vector<double>>(d.r, 0.0);
  for (std::size_t i = 0; i < d.r; ++i) {
    for (std::size_t j = 0; j < d.c; ++j)
      if (keep[i * d.c + j]) (*s)[i] += ((*y)[i * d.c + j] = 1.0 / (1.0 + std::exp(-x[i * d.c + j])));
    for (std::size_t j = 0; j < d.c; ++j) (*y)[i * d.c + j] /= (*s)[i];
  }
  std::vector<double> out = *y;
  return make_op_result("masked_sigmoid_rows", {d.r, d.c}, std::move(out), {a},
                        [y, s, d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          for (std::size_t i = 0; i < d.r; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < d.c; ++j) dot += g[i * d.c + j] * (*y)[i * d.c + j];
                            for (std::size_t j = 0; j < d.c; ++j) {
                              const double yv = (*y)[i * d.c + j];
                              if (yv == 0.0) continue;
                              // sigma' = sigma (1 - sigma), with sigma = y * s.
                              const double sig = yv * (*s)[i];
                              (*gin[0])[i * d.c + j] += (g[i * d.c + j] - dot) / (*s)[i] * sig * (1.0 - sig);
                            }
                          }
                        });
}

Tensor mean_rows(const Tensor& a) {
  const auto d = dims(a);
  auto x = a.data();
  std::vector<double> out(d.c, 0.0);
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.c; ++j) out[j] += x[i * d.c + j];
  for (auto& v : out) v /= static_cast<double>(d.r);
  return make_op_result("mean_rows", {1, d.c}, std::move(out), {a},
                        [d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          const double inv = 1.0 / static_cast<double>(d.r);
                          for (std::size_t i = 0; i < d.r; ++i)
                            for (std::size_t j = 0; j < d.c; ++j) (*gin[0])[i * d.c + j] += g[j] * inv;
                        });
}

Tensor mean_cols(const Tensor& a) {
  const auto d = dims(a);
  auto x = a.data();
  std::vector<double> out(d.r, 0.0);
  for (std::size_t i = 0; i < d.r; ++i) {
    for (std::size_t j = 0; j < d.c; ++j) out[i] += x[i * d.c + j];
    out[i] /= static_cast<double>(d.c);
  }
  return make_op_result("mean_cols", {d.r, 1}, std::move(out), {a},
                        [d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          const double inv = 1.0 / static_cast<double>(d.c);
                          for (std::size_t i = 0; i < d.r; ++i)
                            for (std::size_t j = 0; j < d.c; ++j) (*gin[0])[i * d.c + j] += g[i] * inv;
                        });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op_result("sum", {1, 1}, {s}, {a},
                        [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          for (auto& v : *gin[0]) v += g[0];
                        });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const auto d = dims(a);
  if (index.empty()) throw ContractViolation("gather_rows: empty index");
  auto x = a.data();
  std::vector<double> out(index.size() * d.c);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= d.r) {
      throw ContractViolation("gather_rows: index " + std::to_string(index[k]) + " out of range for " +
                              shape_str(a.shape()));
    }
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(index[k] * d.c), d.c,
                out.begin() + static_cast<std::ptrdiff_t>(k * d.c));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op_result("gather_rows", {index.size(), d.c}, std::move(out), {a},
                        [idx = std::move(idx), d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t k = 0; k < idx.size(); ++k)
                            for (std::size_t j = 0; j < d.c; ++j) ga[idx[k] * d.c + j] += g[k * d.c + j];
                        });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> index) { return gather_rows(table, index); }

Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t n_out) {
  const auto d = dims(a);
  if (index.size() != d.r) throw ContractViolation("scatter_add_rows: index length does not match rows");
  auto x = a.data();
  std::vector<double> out(n_out * d.c, 0.0);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= n_out) throw ContractViolation("scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < d.c; ++j) out[index[k] * d.c + j] += x[k * d.c + j];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op_result("scatter_add_rows", {n_out, d.c}, std::move(out), {a},
                        [idx = std::move(idx), d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t k = 0; k < idx.size(); ++k)
                            for (std::size_t j = 0; j < d.c; ++j) ga[k * d.c + j] += g[idx[k] * d.c + j];
                        });
}

Tensor segment_mean_rows(const Tensor& a, std::span<const std::size_t> offsets) {
  const auto d = dims(a);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != d.r) {
    throw ContractViolation("segment_mean_rows: offsets must run from 0 to rows");
  }
  const std::size_t ns = offsets.size() - 1;
  auto x = a.data();
  std::vector<double> out(ns * d.c, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractViolation("segment_mean_rows: empty segment");
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      for (std::size_t j = 0; j < d.c; ++j) out[s * d.c + j] += x[i * d.c + j];
    for (std::size_t j = 0; j < d.c; ++j) out[s * d.c + j] *= inv;
  }
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return make_op_result("segment_mean_rows", {ns, d.c}, std::move(out), {a},
                        [off = std::move(off), d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t s = 0; s + 1 < off.size(); ++s) {
                            const double inv = 1.0 / static_cast<double>(off[s + 1] - off[s]);
                            for (std::size_t i = off[s]; i < off[s + 1]; ++i)
                              for (std::size_t j = 0; j < d.c; ++j) ga[i * d.c + j] += g[s * d.c + j] * inv;
                          }
                        });
}

Tensor scatter_symmetric(const Tensor& v, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                         std::size_t n) {
  if (v.numel() != pairs.size()) throw ContractViolation("scatter_symmetric: one value per pair required");
  auto x = v.data();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    if (i >= n || j >= n) throw ContractViolation("scatter_symmetric: pair out of range");
    out[i * n + j] = x[k];
    out[j * n + i] = x[k];
  }
  std::vector<std::pair<std::size_t, std::size_t>> pr(pairs.begin(), pairs.end());
  const Dims dv = dims(v);
  return make_op_result("scatter_symmetric", {n, n}, std::move(out), {v},
                        [pr = std::move(pr), n, dv](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          (void)dv;
                          if (!gin[0]) return;
                          auto& gv = *gin[0];
                          for (std::size_t k = 0; k < pr.size(); ++k) {
                            const auto [i, j] = pr[k];
                            gv[k] += (i == j) ? g[i * n + i] : g[i * n + j] + g[j * n + i];
                          }
                        });
}

Tensor dropout(const Tensor& a, double keep_prob, std::mt19937_64& rng, bool train) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ContractViolation("dropout: keep probability must be in (0, 1]");
  if (!train || keep_prob == 1.0) return a;
  const auto d = dims(a);
  auto x = a.data();
  std::bernoulli_distribution keep(keep_prob);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const double s = 1.0 / keep_prob;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : 0.0;
    out[i] = x[i] * (*mask)[i];
  }
  return make_op_result("dropout", {d.r, d.c}, std::move(out), {a},
                        [mask](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*mask)[i];
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> target) {
  const auto d = dims(logits);
  if (target.size() != d.r) throw ContractViolation("cross_entropy: one target per row required");
  auto x = logits.data();
  auto prob = std::make_shared<std::vector<double>>(x.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < d.r; ++i) {
    if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= d.c) {
      throw ContractViolation("cross_entropy: target out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d.c; ++j) mx = std::max(mx, x[i * d.c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) z += std::exp(x[i * d.c + j] - mx);
    const double logz = mx + std::log(z);
    for (std::size_t j = 0; j < d.c; ++j) (*prob)[i * d.c + j] = std::exp(x[i * d.c + j] - logz);
    loss += logz - x[i * d.c + static_cast<std::size_t>(target[i])];
  }
  std::vector<int> tgt(target.begin(), target.end());
  return make_op_result("cross_entropy", {1, 1}, {loss}, {logits},
                        [prob, tgt = std::move(tgt), d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto& ga = *gin[0];
                          for (std::size_t i = 0; i < d.r; ++i)
                            for (std::size_t j = 0; j < d.c; ++j) {
                              const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
                              ga[i * d.c + j] += g[0] * ((*prob)[i * d.c + j] - onehot);
                            }
                        });
}

Tensor squared_l2_rows(const Tensor& a, const Tensor& b) {
  require_same("squared_l2_rows", a, b);
  auto x = a.data(), y = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return make_op_result("squared_l2_rows", {1, 1}, {s}, {a, b},
                        [a, b](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          auto xv = a.data(), yv = b.data();
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            const double t = 2.0 * g[0] * (xv[i] - yv[i]);
                            if (gin[0]) (*gin[0])[i] += t;
                            if (gin[1]) (*gin[1])[i] -= t;
                          }
                        });
}

Tensor cosine_matrix(const Tensor& h) {
  const auto d = dims(h);
  auto x = h.data();
  auto norms = std::make_shared<std::vector<double>>(d.r);
  for (std::size_t i = 0; i < d.r; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d.c; ++k) s += x[i * d.c + k] * x[i * d.c + k];
    if (s == 0.0) throw ContractViolation("cosine_matrix: zero-norm row " + std::to_string(i));
    (*norms)[i] = std::sqrt(s);
  }
  auto out = std::make_shared<std::vector<double>>(d.r * d.r);
  for (std::size_t i = 0; i < d.r; ++i)
    for (std::size_t j = 0; j < d.r; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d.c; ++k) dot += x[i * d.c + k] * x[j * d.c + k];
      (*out)[i * d.r + j] = dot / ((*norms)[i] * (*norms)[j]);
    }
  std::vector<double> result = *out;
  // d cos_ij / d h_i = h_j / (|h_i||h_j|) - cos_ij h_i / |h_i|^2
  return make_op_result("cosine_matrix", {d.r, d.r}, std::move(result), {h},
                        [h, norms, out, d](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                          if (!gin[0]) return;
                          auto xv = h.data();
                          auto& gh = *gin[0];
                          const auto& nv = *norms;
                          const auto& cv = *out;
                          for (std::size_t i = 0; i < d.r; ++i)
                            for (std::size_t j = 0; j < d.r; ++j) {
                              const double gij = g[i * d.r + j];
                              if (gij == 0.0) continue;
                              const double inv = 1.0 / (nv[i] * nv[j]);
                              const double ci = cv[i * d.r + j] / (nv[i] * nv[i]);
                              const double cj = cv[i * d.r + j] / (nv[j] * nv[j]);
                              for (std::size_t k = 0; k < d.c; ++k) {
                                gh[i * d.c + k] += gij * (xv[j * d.c + k] * inv - ci * xv[i * d.c + k]);
                                gh[j * d.c + k] += gij * (xv[i * d.c + k] * inv - cj * xv[j * d.c + k]);
                              }
                            }
                        });
}

}  // namespace par::ops
