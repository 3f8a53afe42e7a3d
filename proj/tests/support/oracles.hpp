#pragma once

// Straight-line reference implementations on plain vectors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "par/tensor.hpp"

namespace par::testing {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline double max_abs_diff(const Mat& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b(i, j)));
  return m;
}

/// Row 0 of softmax(C C^T / sqrt(d)) C with C = [g; c0; c1].
inline Vec oracle_attend(const Vec& g, const Vec& c0, const Vec& c1) {
  const Mat C = {g, c0, c1};
  double s[3];
  for (int j = 0; j < 3; ++j) {
    s[j] = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s[j] += g[k] * C[j][k];
    s[j] /= std::sqrt(static_cast<double>(g.size()));
  }
  const double mx = std::max({s[0], s[1], s[2]});
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - mx));
  Vec out(g.size(), 0.0);
  for (int j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < g.size(); ++k) out[k] += s[j] / z * C[j][k];
  return out;
}

/// Two-layer ReLU MLP on one row.
inline Vec oracle_mlp(const Vec& x, const Mat& w1, const Vec& b1, const Mat& w2, const Vec& b2) {
  Vec h(b1);
  for (std::size_t j = 0; j < h.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) h[j] += x[i] * w1[i][j];
    h[j] = std::max(0.0, h[j]);
  }
  Vec y(b2);
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t i = 0; i < h.size(); ++i) y[j] += h[i] * w2[i][j];
  return y;
}

struct OracleRelationWeights {
  Mat wa1, wa2, wr;
  Vec ba1, ba2;
};

inline Mat oracle_adjacency(const Mat& h, const OracleRelationWeights& w) {
  const std::size_t n = h.size();
  Mat a(n, Vec(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Vec x(h[i].size());
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::exp(-std::abs(h[i][k] - h[j][k]));
      a[i][j] = oracle_mlp(x, w.wa1, w.ba1, w.wa2, w.ba2)[0];
    }
  return a;
}

/// Mask of the k largest entries per row over j != i, by full sort; ties to the lower index.
inline std::vector<std::vector<bool>> oracle_knn(const Mat& a, std::size_t k) {
  const std::size_t n = a.size();
  std::vector<std::vector<bool>> keep(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> c;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) c.emplace_back(-a[i][j], j);
    std::sort(c.begin(), c.end());
    for (std::size_t t = 0; t < k; ++t) keep[i][c[t].second] = true;
  }
  return keep;
}

inline Mat oracle_masked_softmax(const Mat& a, const std::vector<std::vector<bool>>& keep) {
  Mat out(a.size(), Vec(a[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < a[i].size(); ++j)
      if (keep[i][j]) mx = std::max(mx, a[i][j]);
    for (std::size_t j = 0; j < a[i].size(); ++j)
      if (keep[i][j]) z += (out[i][j] = std::exp(a[i][j] - mx));
    for (auto& v : out[i]) v /= z;
  }
  return out;
}

inline Mat oracle_refine(const Mat& h, const Mat& a_hat, const Mat& wr, double slope = 0.01) {
  Mat out = mat_mul(mat_mul(a_hat, h), wr);
  for (auto& r : out)
    for (auto& v : r) v = v > 0 ? v : slope * v;
  return out;
}

struct OracleRelation {
  Mat h, a_hat;
  double reg = 0.0;
};

inline OracleRelation oracle_run_relation(Mat h, const OracleRelationWeights& w, std::size_t iterations,
                                          std::size_t k, const std::vector<int>& labels) {
  OracleRelation out;
  const std::size_t n = h.size(), m = labels.size();
  k = std::min(k, n - 1);
  for (std::size_t t = 0; t < iterations; ++t) {
    Mat a = oracle_adjacency(h, w);
    out.a_hat = oracle_masked_softmax(a, oracle_knn(a, k));
    h = oracle_refine(h, out.a_hat, w.wr);
  }
  out.h = h;
  if (iterations > 0)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double star = labels[i] == labels[j] ? 1.0 : 0.0;
        out.reg += (star - out.a_hat[i][j]) * (star - out.a_hat[i][j]);
      }
  return out;
}

inline Vec oracle_classify(const Vec& h, const Mat& w, const Vec& b) {
  Vec z(b);
  for (std::size_t c = 0; c < z.size(); ++c)
    for (std::size_t i = 0; i < h.size(); ++i) z[c] += h[i] * w[i][c];
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) s += (v = std::exp(v - mx));
  for (auto& v : z) v /= s;
  return z;
}

/// ROC-AUC by counting every (positive, negative) pair.
inline double brute_force_auc(const Vec& scores, const std::vector<int>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        pairs += 1.0;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

}  // namespace par::testing
