#pragma once

// Loop-based reference implementations, deliberately independent of the
// graph engine: plain scalar arithmetic, explicit sorts, no shared kernels.
// The acceptance suite and the unit tests both check the production path
// against these.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/objective.hpp"

namespace phijack::oracle {

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const double* a, int n) { return std::sqrt(dot(a, a, n)); }

inline double cosine(const double* a, const double* b, int n, double eps) {
  return dot(a, b, n) / ((norm(a, n) + eps) * (norm(b, n) + eps));
}

inline std::vector<double> saliency(const AttentionMaps& att) {
  std::vector<double> s(att.keys, 0.0);
  for (int k = 0; k < att.keys; ++k) {
    double acc = 0.0;
    for (int h = 0; h < att.heads; ++h)
      for (int q = 0; q < att.queries; ++q) acc += att.at(h, q, k);
    s[k] = acc / (static_cast<double>(att.heads) * att.queries);
  }
  return s;
}

inline std::vector<double> weight_map(const std::vector<double>& s, double alpha, double eps) {
  double lo = s[0], hi = s[0];
  for (double v : s) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> w(s.size());
  for (size_t i = 0; i < s.size(); ++i) w[i] = 1.0 + alpha * (s[i] - lo) / (hi - lo + eps);
  return w;
}

inline double suppress(const TokenFeatures& zadv, const TokenFeatures& zclean,
                       const std::vector<double>& w, double eps) {
  double num = 0.0, den = 0.0;
  for (int j = 0; j < zadv.token_count(); ++j) {
    num += w[j] * cosine(zadv.token(j), zclean.token(j), zadv.dim, eps);
    den += w[j];
  }
  return num / den;
}

inline double semantic(const TokenFeatures& zadv, const std::vector<int>& omega,
                       const Tensor& anchors, int top_k, double eps) {
  double acc = 0.0;
  for (int j : omega) {
    std::vector<double> sims;
    for (int a = 0; a < anchors.rows; ++a) {
      sims.push_back(cosine(zadv.token(j), anchors.v.data() + static_cast<size_t>(a) * anchors.cols,
                            zadv.dim, eps));
    }
    // sort by (value desc, index asc) then average the first k
    std::vector<int> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int l, int r) { return sims[l] > sims[r]; });
    double m = 0.0;
    for (int t = 0; t < top_k; ++t) m += sims[order[t]];
    acc += m / top_k;
  }
  return 1.0 - acc / omega.size();
}

inline double visual(const TokenFeatures& zadv, const std::vector<int>& omega,
                     const std::vector<double>& proto, double eps) {
  double acc = 0.0;
  for (int j : omega) acc += cosine(zadv.token(j), proto.data(), zadv.dim, eps);
  return 1.0 - acc / omega.size();
}

inline std::vector<double> prototype(const TokenFeatures& clean,
                                     const std::vector<uint8_t>& arm_mask, double eps) {
  std::vector<double> v(clean.dim, 0.0);
  for (int j = 0; j < clean.token_count(); ++j) {
    if (!arm_mask[j]) continue;
    for (int d = 0; d < clean.dim; ++d) v[d] += clean.token(j)[d];
  }
  const double n = norm(v.data(), clean.dim);
  for (double& x : v) x /= (n + eps);
  return v;
}

// corner-aligned bilinear resample of a crop, looping over output pixels
inline void bilinear(const Image& src, int r0, int c0, int box_h, int box_w, int side,
                     std::vector<double>& out) {
  out.assign(static_cast<size_t>(side) * side * 3, 0.0);
  for (int r = 0; r < side; ++r) {
    const double sr = side > 1 ? static_cast<double>(r) * (box_h - 1) / (side - 1) : 0.0;
    const int ir = std::min(static_cast<int>(sr), box_h - 2);
    const double fr = sr - ir;
    for (int c = 0; c < side; ++c) {
      const double sc = side > 1 ? static_cast<double>(c) * (box_w - 1) / (side - 1) : 0.0;
      const int ic = std::min(static_cast<int>(sc), box_w - 2);
      const double fc = sc - ic;
      for (int ch = 0; ch < 3; ++ch) {
        const double v00 = src.at(r0 + ir, c0 + ic, ch);
        const double v01 = src.at(r0 + ir, c0 + ic + 1, ch);
        const double v10 = src.at(r0 + ir + 1, c0 + ic, ch);
        const double v11 = src.at(r0 + ir + 1, c0 + ic + 1, ch);
        out[(static_cast<size_t>(r) * side + c) * 3 + ch] =
            (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
      }
    }
  }
}

// random feature fixtures
inline TokenFeatures random_features(int rows, int cols, int dim, RandomStream& rng,
                                     bool with_attention = false) {
  TokenFeatures f;
  f.token_rows = rows;
  f.token_cols = cols;
  f.dim = dim;
  f.tokens.resize(static_cast<size_t>(rows) * cols * dim);
  for (double& v : f.tokens) v = rng.uniform(-1.5, 1.5);
  if (with_attention) {
    const int t = rows * cols;
    f.attention.heads = 4;
    f.attention.queries = t;
    f.attention.keys = t;
    f.attention.data.resize(static_cast<size_t>(4) * t * t);
    for (int h = 0; h < 4; ++h) {
      for (int q = 0; q < t; ++q) {
        double* row = f.attention.data.data() + (static_cast<size_t>(h) * t + q) * t;
        double sum = 0.0;
        for (int k = 0; k < t; ++k) {
          row[k] = rng.uniform(0.0, 1.0);
          sum += row[k];
        }
        for (int k = 0; k < t; ++k) row[k] /= sum;
      }
    }
    f.has_attention = true;
  }
  return f;
}

}  // namespace phijack::oracle
