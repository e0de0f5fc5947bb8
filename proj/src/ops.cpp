#include "clmlf/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace clmlf::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const auto& xs = g.shape(x);
  const auto& ws = g.shape(w);
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) shape_error("linear", xs, ws);
  const int k = ws[0];
  const int n = ws[1];
  const int rows = static_cast<int>(g.value(x).size() / static_cast<std::size_t>(k));
  if (b.valid() && (g.shape(b).size() != 1 || g.shape(b)[0] != n)) shape_error("linear bias", ws, g.shape(b));

  Shape out_shape = xs;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  MatMap<T> y(out.data.data(), rows, n);
  y.noalias() = ConstMatMap<T>(g.value(x).data.data(), rows, k) * ConstMatMap<T>(g.value(w).data.data(), k, n);
  if (b.valid()) {
    const auto& bv = g.value(b).data;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c) y(r, c) += bv[static_cast<std::size_t>(c)];
  }
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return g.emplace(std::move(out), parents, [x, w, b, rows, k, n](Graph<T>& g, int self) {
    ConstMatMap<T> dy(g.out_grad(self).data(), rows, n);
    if (g.requires_grad(x)) {
      MatMap<T> dx(g.grad_buffer(x).data(), rows, k);
      dx.noalias() += dy * ConstMatMap<T>(g.value(w).data.data(), k, n).transpose();
    }
    if (g.requires_grad(w)) {
      MatMap<T> dw(g.grad_buffer(w).data(), k, n);
      dw.noalias() += ConstMatMap<T>(g.value(x).data.data(), rows, k).transpose() * dy;
    }
    if (b.valid() && g.requires_grad(b)) {
      auto& db = g.grad_buffer(b);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < n; ++c) db[static_cast<std::size_t>(c)] += dy(r, c);
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) shape_error("add", g.shape(a), g.shape(b));
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return g.emplace(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    for (Var p : {a, b}) {
      if (!g.requires_grad(p)) continue;
      auto& d = g.grad_buffer(p);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

template <typename T>
Var add_positions(Graph<T>& g, Var x, Var table) {
  const auto& xs = g.shape(x);
  const auto& ts = g.shape(table);
  if (xs.size() != 3 || ts.size() != 2 || ts[1] != xs[2] || ts[0] < xs[1]) shape_error("add_positions", xs, ts);
  const std::size_t samples = static_cast<std::size_t>(xs[0]);
  const std::size_t block = static_cast<std::size_t>(xs[1]) * static_cast<std::size_t>(xs[2]);
  Tensor<T> out = g.value(x);
  const auto& tv = g.value(table).data;
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t i = 0; i < block; ++i) out.data[s * block + i] += tv[i];
  return g.emplace(std::move(out), {x, table}, [x, table, samples, block](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    if (g.requires_grad(x)) {
      auto& dx = g.grad_buffer(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.requires_grad(table)) {
      auto& dt = g.grad_buffer(table);
      for (std::size_t s = 0; s < samples; ++s)
        for (std::size_t i = 0; i < block; ++i) dt[i] += dy[s * block + i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v *= factor;
  return g.emplace(std::move(out), {x}, [x, factor](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v = gelu_value(v);
  return g.emplace(std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    const auto& xv = g.value(x).data;
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * gelu_derivative(xv[i]);
  });
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const auto& xs = g.shape(x);
  const int d = xs.back();
  if (g.shape(gamma) != Shape{d} || g.shape(beta) != Shape{d}) shape_error("layer_norm", xs, g.shape(gamma));
  const std::size_t rows = g.value(x).size() / static_cast<std::size_t>(d);
  const auto& xv = g.value(x).data;
  const auto& gv = g.value(gamma).data;
  const auto& bv = g.value(beta).data;
  Tensor<T> out(xs);
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      out.data[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return g.emplace(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g,
                                                                                                  int self) {
                     const auto& dy = g.out_grad(self);
                     const auto& gv = g.value(gamma).data;
                     if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                       auto& dg = g.grad_buffer(gamma);
                       auto& db = g.grad_buffer(beta);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (int j = 0; j < d; ++j) {
                           dg[j] += dy[r * d + j] * xhat[r * d + j];
                           db[j] += dy[r * d + j];
                         }
                     }
                     if (!g.requires_grad(x)) return;
                     auto& dx = g.grad_buffer(x);
                     for (std::size_t r = 0; r < rows; ++r) {
                       T mean_dh = 0;
                       T mean_dh_h = 0;
                       for (int j = 0; j < d; ++j) {
                         const T dh = dy[r * d + j] * gv[j];
                         mean_dh += dh;
                         mean_dh_h += dh * xhat[r * d + j];
                       }
                       mean_dh /= T(d);
                       mean_dh_h /= T(d);
                       for (int j = 0; j < d; ++j) {
                         const T dh = dy[r * d + j] * gv[j];
                         dx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                       }
                     }
                   });
}

template <typename T>
Var embedding(Graph<T>& g, Var table, const std::vector<int>& ids, const Shape& index_shape) {
  const auto& ts = g.shape(table);
  if (ts.size() != 2) throw std::invalid_argument("embedding: table must be 2-D");
  if (ids.size() != numel(index_shape)) throw std::invalid_argument("embedding: ids do not match index shape");
  const int vocab = ts[0];
  const std::size_t d = static_cast<std::size_t>(ts[1]);
  Shape out_shape = index_shape;
  out_shape.push_back(ts[1]);
  Tensor<T> out(out_shape);
  const auto& tv = g.value(table).data;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(id * d), d, out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return g.emplace(std::move(out), {table}, [table, ids, d](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    auto& dt = g.grad_buffer(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dt[base + j] += dy[i * d + j];
    }
  });
}

template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const Mask& key_mask, int heads, Tensor<T>* probs_out) {
  const auto& qs = g.shape(q);
  if (qs.size() != 3 || g.shape(k) != qs || g.shape(v) != qs) shape_error("attention", qs, g.shape(k));
  const int S = qs[0];
  const int n = qs[1];
  const int d = qs[2];
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (key_mask.size() != static_cast<std::size_t>(S) * static_cast<std::size_t>(n)) {
    throw std::invalid_argument("attention: key mask must be [S, n]");
  }
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const auto& qv = g.value(q).data;
  const auto& kv = g.value(k).data;
  const auto& vv = g.value(v).data;

  Tensor<T> probs(Shape{S, heads, n, n});
  Tensor<T> out(qs);
  std::vector<T> scores(static_cast<std::size_t>(n));
  for (int s = 0; s < S; ++s) {
    const std::uint8_t* mask = key_mask.data() + static_cast<std::size_t>(s) * n;
    if (std::none_of(mask, mask + n, [](std::uint8_t m) { return m != 0; })) {
      throw std::invalid_argument("attention: sample " + std::to_string(s) + " has every key masked");
    }
    for (int h = 0; h < heads; ++h) {
      T* P = probs.data.data() + ((static_cast<std::size_t>(s) * heads + h) * n) * n;
      for (int i = 0; i < n; ++i) {
        const T* qi = qv.data() + (static_cast<std::size_t>(s) * n + i) * d + h * dh;
        T max_score = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
          if (!mask[j]) continue;
          const T* kj = kv.data() + (static_cast<std::size_t>(s) * n + j) * d + h * dh;
          T dot = 0;
          for (int c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * scale;
          max_score = std::max(max_score, scores[j]);
        }
        T denom = 0;
        for (int j = 0; j < n; ++j) {
          const T e = mask[j] ? std::exp(scores[j] - max_score) : T(0);
          P[i * n + j] = e;
          denom += e;
        }
        T* oi = out.data.data() + (static_cast<std::size_t>(s) * n + i) * d + h * dh;
        for (int j = 0; j < n; ++j) {
          P[i * n + j] /= denom;
          const T p = P[i * n + j];
          if (p == T(0)) continue;
          const T* vj = vv.data() + (static_cast<std::size_t>(s) * n + j) * d + h * dh;
          for (int c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  return g.emplace(std::move(out), {q, k, v},
                   [q, k, v, S, n, d, heads, dh, scale, probs = std::move(probs)](Graph<T>& g, int self) {
                     const auto& dy = g.out_grad(self);
                     const auto& qv = g.value(q).data;
                     const auto& kv = g.value(k).data;
                     const auto& vv = g.value(v).data;
                     std::vector<T>* dq = g.requires_grad(q) ? &g.grad_buffer(q) : nullptr;
                     std::vector<T>* dk = g.requires_grad(k) ? &g.grad_buffer(k) : nullptr;
                     std::vector<T>* dv = g.requires_grad(v) ? &g.grad_buffer(v) : nullptr;
                     std::vector<T> dP(static_cast<std::size_t>(n));
                     for (int s = 0; s < S; ++s) {
                       for (int h = 0; h < heads; ++h) {
                         const T* P = probs.data.data() + ((static_cast<std::size_t>(s) * heads + h) * n) * n;
                         for (int i = 0; i < n; ++i) {
                           const std::size_t row_i = (static_cast<std::size_t>(s) * n + i) * d + h * dh;
                           const T* doi = dy.data() + row_i;
                           T weighted = 0;
                           for (int j = 0; j < n; ++j) {
                             const std::size_t row_j = (static_cast<std::size_t>(s) * n + j) * d + h * dh;
                             const T p = P[i * n + j];
                             T dot = 0;
                             for (int c = 0; c < dh; ++c) dot += doi[c] * vv[row_j + c];
                             dP[j] = dot;
                             weighted += p * dot;
                             if (dv && p != T(0)) {
                               for (int c = 0; c < dh; ++c) (*dv)[row_j + c] += p * doi[c];
                             }
                           }
                           for (int j = 0; j < n; ++j) {
                             const T p = P[i * n + j];
                             if (p == T(0)) continue;
                             const T ds = p * (dP[j] - weighted) * scale;
                             const std::size_t row_j = (static_cast<std::size_t>(s) * n + j) * d + h * dh;
                             if (dq) {
                               for (int c = 0; c < dh; ++c) (*dq)[row_i + c] += ds * kv[row_j + c];
                             }
                             if (dk) {
                               for (int c = 0; c < dh; ++c) (*dk)[row_j + c] += ds * qv[row_i + c];
                             }
                           }
                         }
                       }
                     }
                   });
}

template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  const T keep_scale = T(1) / T(1.0 - rate);
  std::vector<T> mask(g.value(x).size());
  for (auto& m : mask) m = rng.bernoulli(rate) ? T(0) : keep_scale;
  Tensor<T> out = g.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  return g.emplace(std::move(out), {x}, [x, mask = std::move(mask)](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad) {
  const auto& xs = g.shape(x);
  const auto& ws = g.shape(w);
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != xs[3]) shape_error("conv2d", xs, ws);
  if (g.shape(b) != Shape{ws[3]}) shape_error("conv2d bias", ws, g.shape(b));
  if (stride <= 0 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const int S = xs[0], H = xs[1], W = xs[2], ci = xs[3];
  const int kh = ws[0], kw = ws[1], co = ws[3];
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const int K = kh * kw * ci;
  const int rows = S * Ho * Wo;

  const auto& xv = g.value(x).data;
  std::vector<T> cols(static_cast<std::size_t>(rows) * K, T(0));
  for (int s = 0; s < S; ++s)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        T* col = cols.data() + (static_cast<std::size_t>((s * Ho + oy) * Wo + ox)) * K;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const T* src = xv.data() + (static_cast<std::size_t>((s * H + iy) * W + ix)) * ci;
            std::copy_n(src, ci, col + (ky * kw + kx) * ci);
          }
        }
      }

  Tensor<T> out(Shape{S, Ho, Wo, co});
  MatMap<T> y(out.data.data(), rows, co);
  y.noalias() = ConstMatMap<T>(cols.data(), rows, K) * ConstMatMap<T>(g.value(w).data.data(), K, co);
  const auto& bv = g.value(b).data;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < co; ++c) y(r, c) += bv[static_cast<std::size_t>(c)];

  return g.emplace(std::move(out), {x, w, b},
                   [x, w, b, S, H, W, ci, kh, kw, co, Ho, Wo, K, rows, stride, pad,
                    cols = std::move(cols)](Graph<T>& g, int self) {
                     ConstMatMap<T> dy(g.out_grad(self).data(), rows, co);
                     if (g.requires_grad(w)) {
                       MatMap<T> dw(g.grad_buffer(w).data(), K, co);
                       dw.noalias() += ConstMatMap<T>(cols.data(), rows, K).transpose() * dy;
                     }
                     if (g.requires_grad(b)) {
                       auto& db = g.grad_buffer(b);
                       for (int r = 0; r < rows; ++r)
                         for (int c = 0; c < co; ++c) db[static_cast<std::size_t>(c)] += dy(r, c);
                     }
                     if (!g.requires_grad(x)) return;
                     RowMat<T> dcols = dy * ConstMatMap<T>(g.value(w).data.data(), K, co).transpose();
                     auto& dx = g.grad_buffer(x);
                     for (int s = 0; s < S; ++s)
                       for (int oy = 0; oy < Ho; ++oy)
                         for (int ox = 0; ox < Wo; ++ox) {
                           const int r = (s * Ho + oy) * Wo + ox;
                           for (int ky = 0; ky < kh; ++ky) {
                             const int iy = oy * stride - pad + ky;
                             if (iy < 0 || iy >= H) continue;
                             for (int kx = 0; kx < kw; ++kx) {
                               const int ix = ox * stride - pad + kx;
                               if (ix < 0 || ix >= W) continue;
                               T* dst = dx.data() + (static_cast<std::size_t>((s * H + iy) * W + ix)) * ci;
                               for (int c = 0; c < ci; ++c) dst[c] += dcols(r, (ky * kw + kx) * ci + c);
                             }
                           }
                         }
                   });
}

template <typename T>
Var concat_tokens(Graph<T>& g, Var a, Var b) {
  const auto& as = g.shape(a);
  const auto& bs = g.shape(b);
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[2]) shape_error("concat_tokens", as, bs);
  const int S = as[0], na = as[1], nb = bs[1], d = as[2];
  const std::size_t sa = static_cast<std::size_t>(na) * d;
  const std::size_t sb = static_cast<std::size_t>(nb) * d;
  Tensor<T> out(Shape{S, na + nb, d});
  const auto& av = g.value(a).data;
  const auto& bv = g.value(b).data;
  for (int s = 0; s < S; ++s) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(s * sa), sa,
                out.data.begin() + static_cast<std::ptrdiff_t>(s * (sa + sb)));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(s * sb), sb,
                out.data.begin() + static_cast<std::ptrdiff_t>(s * (sa + sb) + sa));
  }
  return g.emplace(std::move(out), {a, b}, [a, b, S, sa, sb](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    if (g.requires_grad(a)) {
      auto& da = g.grad_buffer(a);
      for (int s = 0; s < S; ++s)
        for (std::size_t i = 0; i < sa; ++i) da[s * sa + i] += dy[s * (sa + sb) + i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_buffer(b);
      for (int s = 0; s < S; ++s)
        for (std::size_t i = 0; i < sb; ++i) db[s * sb + i] += dy[s * (sa + sb) + sa + i];
    }
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  if (numel(shape) != g.value(x).size()) shape_error("reshape", g.shape(x), shape);
  Tensor<T> out(std::move(shape), g.value(x).data);
  return g.emplace(std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

template <typename T>
Var masked_softmax(Graph<T>& g, Var x, const Mask& mask) {
  const auto& xv = g.value(x).data;
  if (mask.size() != xv.size()) throw std::invalid_argument("masked_softmax: mask size mismatch");
  const int cols = g.shape(x).back();
  const std::size_t rows = xv.size() / static_cast<std::size_t>(cols);
  Tensor<T> out(g.shape(x));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    const std::uint8_t* m = mask.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < cols; ++j)
      if (m[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
    T denom = 0;
    for (int j = 0; j < cols; ++j) {
      const T e = m[j] ? std::exp(row[j] - mx) : T(0);
      out.data[r * cols + j] = e;
      denom += e;
    }
    for (int j = 0; j < cols; ++j) out.data[r * cols + j] /= denom;
  }
  return g.emplace(std::move(out), {x}, [x, rows, cols](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    const auto& p = g.value_of(self).data;
    auto& dx = g.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int j = 0; j < cols; ++j) dot += p[r * cols + j] * dy[r * cols + j];
      for (int j = 0; j < cols; ++j) dx[r * cols + j] += p[r * cols + j] * (dy[r * cols + j] - dot);
    }
  });
}

template <typename T>
Var masked_log_softmax(Graph<T>& g, Var x, const Mask& mask) {
  const auto& xv = g.value(x).data;
  if (mask.size() != xv.size()) throw std::invalid_argument("masked_log_softmax: mask size mismatch");
  const int cols = g.shape(x).back();
  const std::size_t rows = xv.size() / static_cast<std::size_t>(cols);
  Tensor<T> out(g.shape(x));
  std::vector<T> probs(xv.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    const std::uint8_t* m = mask.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < cols; ++j)
      if (m[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      throw std::invalid_argument("masked_log_softmax: row " + std::to_string(r) + " is fully masked");
    }
    T denom = 0;
    for (int j = 0; j < cols; ++j)
      if (m[j]) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    for (int j = 0; j < cols; ++j) {
      if (!m[j]) continue;
      out.data[r * cols + j] = row[j] - lse;
      probs[r * cols + j] = std::exp(row[j] - lse);
    }
  }
  return g.emplace(std::move(out), {x}, [x, rows, cols, mask, probs = std::move(probs)](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    auto& dx = g.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T total = 0;
      for (int j = 0; j < cols; ++j)
        if (mask[r * cols + j]) total += dy[r * cols + j];
      for (int j = 0; j < cols; ++j)
        if (mask[r * cols + j]) dx[r * cols + j] += dy[r * cols + j] - probs[r * cols + j] * total;
    }
  });
}

template <typename T>
Var weighted_token_sum(Graph<T>& g, Var weights, Var seq) {
  const auto& ws = g.shape(weights);
  const auto& ss = g.shape(seq);
  if (ws.size() != 2 || ss.size() != 3 || ws[0] != ss[0] || ws[1] != ss[1]) shape_error("weighted_token_sum", ws, ss);
  const int S = ss[0], n = ss[1], d = ss[2];
  const auto& wv = g.value(weights).data;
  const auto& fv = g.value(seq).data;
  Tensor<T> out(Shape{S, d});
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < n; ++i) {
      const T w = wv[static_cast<std::size_t>(s) * n + i];
      const T* f = fv.data() + (static_cast<std::size_t>(s) * n + i) * d;
      for (int c = 0; c < d; ++c) out.data[static_cast<std::size_t>(s) * d + c] += w * f[c];
    }
  return g.emplace(std::move(out), {weights, seq}, [weights, seq, S, n, d](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    const auto& wv = g.value(weights).data;
    const auto& fv = g.value(seq).data;
    std::vector<T>* dw = g.requires_grad(weights) ? &g.grad_buffer(weights) : nullptr;
    std::vector<T>* df = g.requires_grad(seq) ? &g.grad_buffer(seq) : nullptr;
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < n; ++i) {
        const std::size_t wi = static_cast<std::size_t>(s) * n + i;
        const std::size_t fi = wi * d;
        const T* r = dy.data() + static_cast<std::size_t>(s) * d;
        if (dw) {
          T dot = 0;
          for (int c = 0; c < d; ++c) dot += r[c] * fv[fi + c];
          (*dw)[wi] += dot;
        }
        if (df) {
          for (int c = 0; c < d; ++c) (*df)[fi + c] += wv[wi] * r[c];
        }
      }
  });
}

template <typename T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps) {
  const auto& xs = g.shape(x);
  if (xs.size() != 2) throw std::invalid_argument("l2_normalize_rows expects a 2-D input");
  const int R = xs[0], d = xs[1];
  const auto& xv = g.value(x).data;
  Tensor<T> out(xs);
  std::vector<T> norms(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    T sq = 0;
    for (int c = 0; c < d; ++c) sq += xv[static_cast<std::size_t>(r) * d + c] * xv[static_cast<std::size_t>(r) * d + c];
    norms[r] = std::max(std::sqrt(sq), eps);
    for (int c = 0; c < d; ++c) out.data[static_cast<std::size_t>(r) * d + c] = xv[static_cast<std::size_t>(r) * d + c] / norms[r];
  }
  return g.emplace(std::move(out), {x}, [x, R, d, eps, norms = std::move(norms)](Graph<T>& g, int self) {
    const auto& dy = g.out_grad(self);
    const auto& y = g.value_of(self).data;
    auto& dx = g.grad_buffer(x);
    for (int r = 0; r < R; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * d;
      if (norms[r] <= eps) {
        for (int c = 0; c < d; ++c) dx[base + c] += dy[base + c] / eps;
        continue;
      }
      T dot = 0;
      for (int c = 0; c < d; ++c) dot += y[base + c] * dy[base + c];
      for (int c = 0; c < d; ++c) dx[base + c] += (dy[base + c] - y[base + c] * dot) / norms[r];
    }
  });
}

template <typename T>
Var matmul_nt(Graph<T>& g, Var a, Var b) {
  const auto& as = g.shape(a);
  const auto& bs = g.shape(b);
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) shape_error("matmul_nt", as, bs);
  const int R = as[0], M = bs[0], d = as[1];
  Tensor<T> out(Shape{R, M});
  MatMap<T>(out.data.data(), R, M).noalias() =
      ConstMatMap<T>(g.value(a).data.data(), R, d) * ConstMatMap<T>(g.value(b).data.data(), M, d).transpose();
  return g.emplace(std::move(out), {a, b}, [a, b, R, M, d](Graph<T>& g, int self) {
    ConstMatMap<T> dy(g.out_grad(self).data(), R, M);
    if (g.requires_grad(a)) {
      MatMap<T> da(g.grad_buffer(a).data(), R, d);
      da.noalias() += dy * ConstMatMap<T>(g.value(b).data.data(), M, d);
    }
    if (g.requires_grad(b)) {
      MatMap<T> db(g.grad_buffer(b).data(), M, d);
      db.noalias() += dy.transpose() * ConstMatMap<T>(g.value(a).data.data(), R, d);
    }
  });
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels) {
  const auto& ls = g.shape(logits);
  if (ls.size() != 2 || static_cast<std::size_t>(ls[0]) != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits " + shape_string(ls) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const int R = ls[0], C = ls[1];
  const auto& lv = g.value(logits).data;
  std::vector<T> probs(lv.size());
  T loss = 0;
  for (int r = 0; r < R; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= C) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
    }
    const T* row = lv.data() + static_cast<std::size_t>(r) * C;
    const T mx = *std::max_element(row, row + C);
    T denom = 0;
    for (int c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    const T lse = mx + std::log(denom);
    for (int c = 0; c < C; ++c) probs[static_cast<std::size_t>(r) * C + c] = std::exp(row[c] - lse);
    loss += lse - row[y];
  }
  loss /= T(R);
  return g.emplace(Tensor<T>(Shape{}, {loss}), {logits},
                   [logits, labels, R, C, probs = std::move(probs)](Graph<T>& g, int self) {
                     const T up = g.out_grad(self)[0] / T(R);
                     auto& dl = g.grad_buffer(logits);
                     for (int r = 0; r < R; ++r)
                       for (int c = 0; c < C; ++c) {
                         const std::size_t i = static_cast<std::size_t>(r) * C + c;
                         dl[i] += up * (probs[i] - (c == labels[static_cast<std::size_t>(r)] ? T(1) : T(0)));
                       }
                   });
}

template <typename T>
Var weighted_gather(Graph<T>& g, Var x, const std::vector<GatherEntry>& entries) {
  const auto& xs = g.shape(x);
  if (xs.size() != 2) throw std::invalid_argument("weighted_gather expects a 2-D input");
  const int cols = xs[1];
  const auto& xv = g.value(x).data;
  T total = 0;
  for (const auto& e : entries) {
    if (e.row < 0 || e.row >= xs[0] || e.col < 0 || e.col >= cols) {
      throw std::out_of_range("weighted_gather: index outside " + shape_string(xs));
    }
    total += T(e.weight) * xv[static_cast<std::size_t>(e.row) * cols + e.col];
  }
  return g.emplace(Tensor<T>(Shape{}, {total}), {x}, [x, cols, entries](Graph<T>& g, int self) {
    const T up = g.out_grad(self)[0];
    auto& dx = g.grad_buffer(x);
    for (const auto& e : entries) dx[static_cast<std::size_t>(e.row) * cols + e.col] += up * T(e.weight);
  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<std::pair<Var, T>>& terms) {
  T total = 0;
  std::vector<Var> parents;
  for (const auto& [v, c] : terms) {
    total += c * g.scalar(v);
    parents.push_back(v);
  }
  return g.emplace(Tensor<T>(Shape{}, {total}), parents, [terms](Graph<T>& g, int self) {
    const T up = g.out_grad(self)[0];
    for (const auto& [v, c] : terms) {
      if (g.requires_grad(v)) g.grad_buffer(v)[0] += up * c;
    }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T total = 0;
  for (T v : g.value(x).data) total += v;
  return g.emplace(Tensor<T>(Shape{}, {total}), {x}, [x](Graph<T>& g, int self) {
    const T up = g.out_grad(self)[0];
    for (auto& d : g.grad_buffer(x)) d += up;
  });
}

#define CLMLF_INSTANTIATE_OPS(T)                                                                     \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                                  \
  template Var add<T>(Graph<T>&, Var, Var);                                                          \
  template Var add_positions<T>(Graph<T>&, Var, Var);                                                \
  template Var scale<T>(Graph<T>&, Var, T);                                                          \
  template Var gelu<T>(Graph<T>&, Var);                                                              \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                           \
  template Var embedding<T>(Graph<T>&, Var, const std::vector<int>&, const Shape&);                  \
  template Var attention<T>(Graph<T>&, Var, Var, Var, const Mask&, int, Tensor<T>*);                 \
  template Var dropout<T>(Graph<T>&, Var, double, Rng&);                                             \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                                        \
  template Var concat_tokens<T>(Graph<T>&, Var, Var);                                                \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                                    \
  template Var masked_softmax<T>(Graph<T>&, Var, const Mask&);                                       \
  template Var masked_log_softmax<T>(Graph<T>&, Var, const Mask&);                                   \
  template Var weighted_token_sum<T>(Graph<T>&, Var, Var);                                           \
  template Var l2_normalize_rows<T>(Graph<T>&, Var, T);                                              \
  template Var matmul_nt<T>(Graph<T>&, Var, Var);                                                    \
  template Var cross_entropy<T>(Graph<T>&, Var, const std::vector<int>&);                            \
  template Var weighted_gather<T>(Graph<T>&, Var, const std::vector<GatherEntry>&);                  \
  template Var weighted_sum<T>(Graph<T>&, const std::vector<std::pair<Var, T>>&);                    \
  template Var sum<T>(Graph<T>&, Var);

CLMLF_INSTANTIATE_OPS(float)
CLMLF_INSTANTIATE_OPS(double)

#undef CLMLF_INSTANTIATE_OPS

}  // namespace clmlf::ops
