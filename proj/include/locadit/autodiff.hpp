//
// Reverse-mode differentiation over flat f64 arrays. A Tape owns the nodes;
// Var is a cheap handle carrying (rows, cols). Every op allocates its output
// on the tape and registers a backward closure; backward() sweeps the nodes
// in reverse creation order. Parameters bind to a ParamStore, whose flat
// gradient vector receives the leaf gradients.
//
// Shapes are row-major; ops check dimensions and throw ShapeMismatch.
//

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "locadit/core.hpp"
#include "locadit/params.hpp"

namespace locadit {

struct Var {
  int id = -1;
  size_t rows = 0, cols = 0;
  size_t size() const { return rows * cols; }
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Tape&)> back;  // empty for constants
  };

  std::vector<Node> nodes;

  void clear() { nodes.clear(); }

  /// Free relabeling of dimensions; the flat buffer is shared.
  Var reshape(Var v, size_t rows, size_t cols) const {
    if (rows * cols != v.size()) fail(errc::shape_mismatch, "reshape size mismatch");
    return Var{v.id, rows, cols};
  }

  std::span<const double> val(Var v) const { return nodes[v.id].val; }
  std::span<double> grad(Var v) { return nodes[v.id].grad; }
  double scalar(Var v) const { return nodes[v.id].val.at(0); }

  // ---------------------------------------------------------------- leaves

  Var input(std::vector<double> v, size_t rows, size_t cols) {
    if (v.size() != rows * cols) fail(errc::shape_mismatch, "input size != rows*cols");
    return make(std::move(v), rows, cols, nullptr);
  }
  Var input(std::span<const double> v, size_t rows, size_t cols) {
    return input(std::vector<double>(v.begin(), v.end()), rows, cols);
  }

  Var param(ParamStore& store, const std::string& name, size_t rows, size_t cols) {
    const auto& s = store.slice(name);
    if (s.size != rows * cols) fail(errc::shape_mismatch, "param shape mismatch: " + name);
    std::vector<double> v(store.values_.begin() + s.offset,
                          store.values_.begin() + s.offset + s.size);
    double* gdst = store.grads_.data() + s.offset;
    size_t n = s.size;
    Var out = make(std::move(v), rows, cols, nullptr);
    int id = out.id;
    nodes[id].back = [id, gdst, n](Tape& t) {
      const double* g = t.nodes[id].grad.data();
      for (size_t i = 0; i < n; ++i) gdst[i] += g[i];
    };
    return out;
  }

  // ----------------------------------------------------------- elementwise

  Var add(Var a, Var b) {
    check_same(a, b);
    std::vector<double> v(a.size());
    const double *av = nodes[a.id].val.data(), *bv = nodes[b.id].val.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, b, out](Tape& t) {
      t.axpy(a, out, 1.0);
      t.axpy(b, out, 1.0);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same(a, b);
    std::vector<double> v(a.size());
    const double *av = nodes[a.id].val.data(), *bv = nodes[b.id].val.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, b, out](Tape& t) {
      t.axpy(a, out, 1.0);
      t.axpy(b, out, -1.0);
    });
    return out;
  }

  Var mul(Var a, Var b) {
    check_same(a, b);
    std::vector<double> v(a.size());
    const double *av = nodes[a.id].val.data(), *bv = nodes[b.id].val.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, b, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double *av2 = t.nodes[a.id].val.data(), *bv2 = t.nodes[b.id].val.data();
      double *ga = t.nodes[a.id].grad.data(), *gb = t.nodes[b.id].grad.data();
      for (size_t i = 0; i < t.nodes[out.id].val.size(); ++i) {
        ga[i] += g[i] * bv2[i];
        gb[i] += g[i] * av2[i];
      }
    });
    return out;
  }

  Var scale(Var a, double c) {
    std::vector<double> v(nodes[a.id].val);
    for (double& x : v) x *= c;
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out, c](Tape& t) { t.axpy(a, out, c); });
    return out;
  }

  Var add_scalar(Var a, double c) {
    std::vector<double> v(nodes[a.id].val);
    for (double& x : v) x += c;
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out](Tape& t) { t.axpy(a, out, 1.0); });
    return out;
  }

  /// Elementwise addition of a constant vector (used for attention masks).
  Var add_const(Var a, std::span<const double> c) {
    if (c.size() != a.size()) fail(errc::shape_mismatch, "add_const size mismatch");
    std::vector<double> v(nodes[a.id].val);
    for (size_t i = 0; i < v.size(); ++i) v[i] += c[i];
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out](Tape& t) { t.axpy(a, out, 1.0); });
    return out;
  }

  Var relu(Var a) {
    std::vector<double> v(nodes[a.id].val);
    for (double& x : v) x = x > 0 ? x : 0;
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* av = t.nodes[a.id].val.data();
      double* ga = t.nodes[a.id].grad.data();
      for (size_t i = 0; i < t.nodes[out.id].val.size(); ++i)
        if (av[i] > 0) ga[i] += g[i];
    });
    return out;
  }

  Var sigmoid(Var a) {
    std::vector<double> v(nodes[a.id].val);
    for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* yv = t.nodes[out.id].val.data();
      double* ga = t.nodes[a.id].grad.data();
      for (size_t i = 0; i < t.nodes[out.id].val.size(); ++i)
        ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
    return out;
  }

  Var exp_(Var a) {
    std::vector<double> v(nodes[a.id].val);
    for (double& x : v) x = std::exp(x);
    Var out = make(std::move(v), a.rows, a.cols, nullptr);
    bind(out, [a, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* yv = t.nodes[out.id].val.data();
      double* ga = t.nodes[a.id].grad.data();
      for (size_t i = 0; i < t.nodes[out.id].val.size(); ++i) ga[i] += g[i] * yv[i];
    });
    return out;
  }

  // ---------------------------------------------------------------- matrix

  Var matmul(Var a, Var b) {  // [m x k] * [k x n]
    if (a.cols != b.rows) fail(errc::shape_mismatch, "matmul inner dims");
    size_t m = a.rows, k = a.cols, n = b.cols;
    std::vector<double> v(m * n, 0.0);
    {
      const double *A = nodes[a.id].val.data(), *B = nodes[b.id].val.data();
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          double s = A[i * k + p];
          if (s == 0.0) continue;
          const double* brow = B + p * n;
          double* crow = v.data() + i * n;
          for (size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
    Var out = make(std::move(v), m, n, nullptr);
    bind(out, [a, b, out, m, k, n](Tape& t) {
      const double* G = t.nodes[out.id].grad.data();
      const double *A = t.nodes[a.id].val.data(), *B = t.nodes[b.id].val.data();
      double *gA = t.nodes[a.id].grad.data(), *gB = t.nodes[b.id].grad.data();
      // dA = G * B^T
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          double s = 0;
          const double* grow = G + i * n;
          const double* brow = B + p * n;
          for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[i * k + p] += s;
        }
      // dB = A^T * G
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          double s = A[i * k + p];
          if (s == 0.0) continue;
          const double* grow = G + i * n;
          double* gbrow = gB + p * n;
          for (size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
    });
    return out;
  }

  Var matmul_nt(Var a, Var b) {  // [m x k] * [n x k]^T -> [m x n]
    if (a.cols != b.cols) fail(errc::shape_mismatch, "matmul_nt inner dims");
    size_t m = a.rows, k = a.cols, n = b.rows;
    std::vector<double> v(m * n, 0.0);
    {
      const double *A = nodes[a.id].val.data(), *B = nodes[b.id].val.data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          double s = 0;
          const double *arow = A + i * k, *brow = B + j * k;
          for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
          v[i * n + j] = s;
        }
    }
    Var out = make(std::move(v), m, n, nullptr);
    bind(out, [a, b, out, m, k, n](Tape& t) {
      const double* G = t.nodes[out.id].grad.data();
      const double *A = t.nodes[a.id].val.data(), *B = t.nodes[b.id].val.data();
      double *gA = t.nodes[a.id].grad.data(), *gB = t.nodes[b.id].grad.data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          double g = G[i * n + j];
          if (g == 0.0) continue;
          const double *arow = A + i * k, *brow = B + j * k;
          double *garow = gA + i * k, *gbrow = gB + j * k;
          for (size_t p = 0; p < k; ++p) {
            garow[p] += g * brow[p];
            gbrow[p] += g * arow[p];
          }
        }
    });
    return out;
  }

  Var add_bias(Var x, Var bias) {  // bias [1 x n] broadcast over rows
    if (bias.rows != 1 || bias.cols != x.cols) fail(errc::shape_mismatch, "add_bias dims");
    std::vector<double> v(nodes[x.id].val);
    const double* b = nodes[bias.id].val.data();
    for (size_t i = 0; i < x.rows; ++i)
      for (size_t j = 0; j < x.cols; ++j) v[i * x.cols + j] += b[j];
    Var out = make(std::move(v), x.rows, x.cols, nullptr);
    bind(out, [x, bias, out](Tape& t) {
      t.axpy(x, out, 1.0);
      const double* g = t.nodes[out.id].grad.data();
      double* gb = t.nodes[bias.id].grad.data();
      for (size_t i = 0; i < x.rows; ++i)
        for (size_t j = 0; j < x.cols; ++j) gb[j] += g[i * x.cols + j];
    });
    return out;
  }

  Var mul_row_broadcast(Var x, Var row) {  // x [m x n] .* row [1 x n]
    if (row.rows != 1 || row.cols != x.cols) fail(errc::shape_mismatch, "mul_row_broadcast dims");
    std::vector<double> v(nodes[x.id].val);
    const double* r = nodes[row.id].val.data();
    for (size_t i = 0; i < x.rows; ++i)
      for (size_t j = 0; j < x.cols; ++j) v[i * x.cols + j] *= r[j];
    Var out = make(std::move(v), x.rows, x.cols, nullptr);
    bind(out, [x, row, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* xv = t.nodes[x.id].val.data();
      const double* rv = t.nodes[row.id].val.data();
      double* gx = t.nodes[x.id].grad.data();
      double* gr = t.nodes[row.id].grad.data();
      for (size_t i = 0; i < x.rows; ++i)
        for (size_t j = 0; j < x.cols; ++j) {
          gx[i * x.cols + j] += g[i * x.cols + j] * rv[j];
          gr[j] += g[i * x.cols + j] * xv[i * x.cols + j];
        }
    });
    return out;
  }

  /// Rows picked by index; -1 yields a zero row. Backward scatter-adds.
  Var gather_rows(Var x, std::span<const int64_t> idx) {
    size_t n = x.cols;
    std::vector<double> v(idx.size() * n, 0.0);
    const double* xv = nodes[x.id].val.data();
    for (size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      if (size_t(idx[r]) >= x.rows) fail(errc::shape_mismatch, "gather_rows index out of range");
      std::copy_n(xv + size_t(idx[r]) * n, n, v.data() + r * n);
    }
    Var out = make(std::move(v), idx.size(), n, nullptr);
    std::vector<int64_t> idx_copy(idx.begin(), idx.end());
    bind(out, [x, out, idx_copy = std::move(idx_copy), n](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      double* gx = t.nodes[x.id].grad.data();
      for (size_t r = 0; r < idx_copy.size(); ++r) {
        if (idx_copy[r] < 0) continue;
        double* dst = gx + size_t(idx_copy[r]) * n;
        const double* src = g + r * n;
        for (size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
    return out;
  }

  Var concat_rows(Var a, Var b) {
    if (a.cols != b.cols) fail(errc::shape_mismatch, "concat_rows cols");
    std::vector<double> v;
    v.reserve(a.size() + b.size());
    v.insert(v.end(), nodes[a.id].val.begin(), nodes[a.id].val.end());
    v.insert(v.end(), nodes[b.id].val.begin(), nodes[b.id].val.end());
    Var out = make(std::move(v), a.rows + b.rows, a.cols, nullptr);
    bind(out, [a, b, out](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      double* ga = t.nodes[a.id].grad.data();
      double* gb = t.nodes[b.id].grad.data();
      for (size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
      for (size_t i = 0; i < b.size(); ++i) gb[i] += g[a.size() + i];
    });
    return out;
  }

  Var concat_cols(Var a, Var b) {
    if (a.rows != b.rows) fail(errc::shape_mismatch, "concat_cols rows");
    size_t m = a.rows, ca = a.cols, cb = b.cols;
    std::vector<double> v(m * (ca + cb));
    const double *av = nodes[a.id].val.data(), *bv = nodes[b.id].val.data();
    for (size_t i = 0; i < m; ++i) {
      std::copy_n(av + i * ca, ca, v.data() + i * (ca + cb));
      std::copy_n(bv + i * cb, cb, v.data() + i * (ca + cb) + ca);
    }
    Var out = make(std::move(v), m, ca + cb, nullptr);
    bind(out, [a, b, out, m, ca, cb](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      double* ga = t.nodes[a.id].grad.data();
      double* gb = t.nodes[b.id].grad.data();
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
        for (size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
      }
    });
    return out;
  }

  Var slice_cols(Var x, size_t c0, size_t c1) {
    if (c1 > x.cols || c0 >= c1) fail(errc::shape_mismatch, "slice_cols range");
    size_t m = x.rows, n = x.cols, w = c1 - c0;
    std::vector<double> v(m * w);
    const double* xv = nodes[x.id].val.data();
    for (size_t i = 0; i < m; ++i) std::copy_n(xv + i * n + c0, w, v.data() + i * w);
    Var out = make(std::move(v), m, w, nullptr);
    bind(out, [x, out, c0, m, n, w](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      double* gx = t.nodes[x.id].grad.data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
    });
    return out;
  }

  Var softmax_rows(Var x) {
    size_t m = x.rows, n = x.cols;
    std::vector<double> v(nodes[x.id].val);
    for (size_t i = 0; i < m; ++i) {
      double* row = v.data() + i * n;
      double mx = row[0];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0;
      for (size_t j = 0; j < n; ++j) sum += (row[j] = std::exp(row[j] - mx));
      for (size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    Var out = make(std::move(v), m, n, nullptr);
    bind(out, [x, out, m, n](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* y = t.nodes[out.id].val.data();
      double* gx = t.nodes[x.id].grad.data();
      for (size_t i = 0; i < m; ++i) {
        const double *grow = g + i * n, *yrow = y + i * n;
        double dotv = 0;
        for (size_t j = 0; j < n; ++j) dotv += grow[j] * yrow[j];
        double* gxrow = gx + i * n;
        for (size_t j = 0; j < n; ++j) gxrow[j] += yrow[j] * (grow[j] - dotv);
      }
    });
    return out;
  }

  Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
    if (gain.cols != x.cols || bias.cols != x.cols || gain.rows != 1 || bias.rows != 1)
      fail(errc::shape_mismatch, "layernorm dims");
    size_t m = x.rows, n = x.cols;
    std::vector<double> v(m * n), xhat(m * n), inv(m);
    const double* xv = nodes[x.id].val.data();
    const double* gn = nodes[gain.id].val.data();
    const double* bs = nodes[bias.id].val.data();
    for (size_t i = 0; i < m; ++i) {
      const double* row = xv + i * n;
      double mu = 0;
      for (size_t j = 0; j < n; ++j) mu += row[j];
      mu /= double(n);
      double var = 0;
      for (size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= double(n);
      inv[i] = 1.0 / std::sqrt(var + eps);
      for (size_t j = 0; j < n; ++j) {
        xhat[i * n + j] = (row[j] - mu) * inv[i];
        v[i * n + j] = gn[j] * xhat[i * n + j] + bs[j];
      }
    }
    Var out = make(std::move(v), m, n, nullptr);
    bind(out, [x, gain, bias, out, m, n, xhat = std::move(xhat), inv = std::move(inv)](Tape& t) {
      const double* g = t.nodes[out.id].grad.data();
      const double* gn = t.nodes[gain.id].val.data();
      double* gx = t.nodes[x.id].grad.data();
      double* gg = t.nodes[gain.id].grad.data();
      double* gb = t.nodes[bias.id].grad.data();
      for (size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        const double* xh = xhat.data() + i * n;
        double mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (size_t j = 0; j < n; ++j) {
          double dxh = grow[j] * gn[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
          gg[j] += grow[j] * xh[j];
          gb[j] += grow[j];
        }
        mean_dxhat /= double(n);
        mean_dxhat_xhat /= double(n);
        double* gxrow = gx + i * n;
        for (size_t j = 0; j < n; ++j) {
          double dxh = grow[j] * gn[j];
          gxrow[j] += inv[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    });
    return out;
  }

  // ------------------------------------------------------------ reductions

  Var sum_all(Var x) {
    double s = 0;
    for (double v : nodes[x.id].val) s += v;
    Var out = make({s}, 1, 1, nullptr);
    bind(out, [x, out](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      double* gx = t.nodes[x.id].grad.data();
      for (size_t i = 0; i < t.nodes[x.id].val.size(); ++i) gx[i] += g;
    });
    return out;
  }

  Var mean_all(Var x) { return scale(sum_all(x), 1.0 / double(x.size())); }

  /// Mean squared error against a constant target.
  Var mse_mean(Var a, std::span<const double> target) {
    if (target.size() != a.size()) fail(errc::shape_mismatch, "mse target size");
    const double* av = nodes[a.id].val.data();
    double s = 0;
    for (size_t i = 0; i < target.size(); ++i) s += (av[i] - target[i]) * (av[i] - target[i]);
    size_t n = target.size();
    Var out = make({s / double(n)}, 1, 1, nullptr);
    std::vector<double> tcopy(target.begin(), target.end());
    bind(out, [a, out, tcopy = std::move(tcopy), n](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      const double* av2 = t.nodes[a.id].val.data();
      double* ga = t.nodes[a.id].grad.data();
      for (size_t i = 0; i < n; ++i) ga[i] += g * 2.0 * (av2[i] - tcopy[i]) / double(n);
    });
    return out;
  }

  /// Mean absolute error against a constant target; subgradient 0 at ties.
  Var l1_mean(Var a, std::span<const double> target) {
    if (target.size() != a.size()) fail(errc::shape_mismatch, "l1 target size");
    const double* av = nodes[a.id].val.data();
    double s = 0;
    for (size_t i = 0; i < target.size(); ++i) s += std::abs(av[i] - target[i]);
    size_t n = target.size();
    Var out = make({n ? s / double(n) : 0.0}, 1, 1, nullptr);
    std::vector<double> tcopy(target.begin(), target.end());
    bind(out, [a, out, tcopy = std::move(tcopy), n](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      const double* av2 = t.nodes[a.id].val.data();
      double* ga = t.nodes[a.id].grad.data();
      for (size_t i = 0; i < n; ++i) {
        double d = av2[i] - tcopy[i];
        ga[i] += g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / double(n);
      }
    });
    return out;
  }

  /// Binary cross entropy on logits clamped to [-cap, cap], mean over
  /// elements. The clamp is part of the function: gradients vanish outside.
  Var bce_logits_mean(Var logits, std::span<const double> targets, double cap = 30.0) {
    if (targets.size() != logits.size()) fail(errc::shape_mismatch, "bce target size");
    const double* lv = nodes[logits.id].val.data();
    size_t n = targets.size();
    double s = 0;
    for (size_t i = 0; i < n; ++i) {
      double l = std::clamp(lv[i], -cap, cap);
      s += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
    }
    Var out = make({n ? s / double(n) : 0.0}, 1, 1, nullptr);
    std::vector<double> tcopy(targets.begin(), targets.end());
    bind(out, [logits, out, tcopy = std::move(tcopy), n, cap](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      const double* lv2 = t.nodes[logits.id].val.data();
      double* gl = t.nodes[logits.id].grad.data();
      for (size_t i = 0; i < n; ++i) {
        if (lv2[i] < -cap || lv2[i] > cap) continue;
        double sig = 1.0 / (1.0 + std::exp(-lv2[i]));
        gl[i] += g * (sig - tcopy[i]) / double(n);
      }
    });
    return out;
  }

  /// KL(N(mu, e^logvar) || N(0, 1)), mean over elements.
  Var kl_gauss_mean(Var mu, Var logvar) {
    check_same(mu, logvar);
    const double* m = nodes[mu.id].val.data();
    const double* lv = nodes[logvar.id].val.data();
    size_t n = mu.size();
    double s = 0;
    for (size_t i = 0; i < n; ++i) s += 0.5 * (m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i]);
    Var out = make({n ? s / double(n) : 0.0}, 1, 1, nullptr);
    bind(out, [mu, logvar, out, n](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      const double* m2 = t.nodes[mu.id].val.data();
      const double* lv2 = t.nodes[logvar.id].val.data();
      double* gm = t.nodes[mu.id].grad.data();
      double* gl = t.nodes[logvar.id].grad.data();
      for (size_t i = 0; i < n; ++i) {
        gm[i] += g * m2[i] / double(n);
        gl[i] += g * 0.5 * (std::exp(lv2[i]) - 1.0) / double(n);
      }
    });
    return out;
  }

  /// Cross entropy per row against integer targets, mean over rows.
  Var xent_rows_mean(Var logits, std::span<const uint32_t> targets) {
    size_t m = logits.rows, n = logits.cols;
    if (targets.size() != m) fail(errc::shape_mismatch, "xent target count");
    for (uint32_t t : targets)
      if (t >= n) fail(errc::vocabulary_overflow, "xent target id outside vocabulary");
    const double* lv = nodes[logits.id].val.data();
    double s = 0;
    for (size_t i = 0; i < m; ++i) {
      const double* row = lv + i * n;
      double mx = row[0];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0;
      for (size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
      s += mx + std::log(sum) - row[targets[i]];
    }
    Var out = make({m ? s / double(m) : 0.0}, 1, 1, nullptr);
    std::vector<uint32_t> tcopy(targets.begin(), targets.end());
    bind(out, [logits, out, tcopy = std::move(tcopy), m, n](Tape& t) {
      double g = t.nodes[out.id].grad[0];
      const double* lv2 = t.nodes[logits.id].val.data();
      double* gl = t.nodes[logits.id].grad.data();
      for (size_t i = 0; i < m; ++i) {
        const double* row = lv2 + i * n;
        double mx = row[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
        double* grow = gl + i * n;
        for (size_t j = 0; j < n; ++j) {
          double p = std::exp(row[j] - mx) / sum;
          grow[j] += g * (p - (j == tcopy[i] ? 1.0 : 0.0)) / double(m);
        }
      }
    });
    return out;
  }

  // -------------------------------------------------------------- backward

  void backward(Var loss) {
    if (loss.size() != 1) fail(errc::shape_mismatch, "backward needs a scalar loss");
    nodes[loss.id].grad[0] = 1.0;
    for (size_t i = nodes.size(); i-- > 0;)
      if (nodes[i].back) nodes[i].back(*this);
  }

 private:
  Var make(std::vector<double> v, size_t rows, size_t cols, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(v);
    n.grad.assign(n.val.size(), 0.0);
    n.back = std::move(back);
    nodes.push_back(std::move(n));
    return Var{int(nodes.size() - 1), rows, cols};
  }

  void bind(Var v, std::function<void(Tape&)> back) { nodes[v.id].back = std::move(back); }

  void check_same(Var a, Var b) const {
    if (a.rows != b.rows || a.cols != b.cols) fail(errc::shape_mismatch, "elementwise dims differ");
  }

  // grad[a] += c * grad[out]
  void axpy(Var a, Var out, double c) {
    const double* g = nodes[out.id].grad.data();
    double* ga = nodes[a.id].grad.data();
    for (size_t i = 0; i < nodes[out.id].val.size(); ++i) ga[i] += c * g[i];
  }
};

}  // namespace locadit
