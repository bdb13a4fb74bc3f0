#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "unigraph/graph.hpp"
#include "unigraph/matrix.hpp"
#include "unigraph/rng.hpp"

namespace unigraph {

// Trainable tensor living outside any tape. Gradients accumulate here when a
// tape that referenced the parameter runs backward.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void init(int rows, int cols) {
    value = Matrix(rows, cols);
    grad = Matrix(rows, cols);
  }

  void init_uniform(int rows, int cols, Rng& rng, double fan_in) {
    init(rows, cols);
    const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
    for (std::size_t i = 0; i < value.size(); ++i) value.data()[i] = rng.uniform(-bound, bound);
  }

  void zero_grad() { grad.zero(); }
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

// Reverse-mode autodiff over matrices. Ops append nodes whose backward
// closures add into their inputs' grads; backward() walks the tape in reverse
// creation order, which is already topological.
class Tape {
public:
  struct V {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  struct GatDebug {
    std::vector<double> attention_sums;  // post-softmax sum per node, should be 1
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Matrix& val(V v) const { return nodes_[v.id].val; }
  Matrix& grad(V v) { return nodes_[v.id].grad; }

  V leaf(Matrix m) { return push(std::move(m), nullptr); }

  V param(Parameter& p) {
    V out = push(p.value, nullptr);
    Parameter* pp = &p;
    nodes_[out.id].back = [this, out, pp]() { add_inplace(pp->grad, nodes_[out.id].grad); };
    return out;
  }

  V matmul(V a, V b) {
    check_cols_rows(a, b);
    V out = push(unigraph::matmul(val(a), val(b)), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      matmul_nt_acc(nodes_[a.id].grad, nodes_[out.id].grad, nodes_[b.id].val);
      matmul_tn_acc(nodes_[b.id].grad, nodes_[a.id].val, nodes_[out.id].grad);
    };
    return out;
  }

  // a * b^T
  V matmul_nt(V a, V b) {
    V out = push(unigraph::matmul_nt(val(a), val(b)), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      matmul_acc(nodes_[a.id].grad, nodes_[out.id].grad, nodes_[b.id].val);
      matmul_tn_acc(nodes_[b.id].grad, nodes_[out.id].grad, nodes_[a.id].val);
    };
    return out;
  }

  V add(V a, V b) {
    check_same_shape(a, b);
    Matrix m = val(a);
    add_inplace(m, val(b));
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      add_inplace(nodes_[a.id].grad, nodes_[out.id].grad);
      add_inplace(nodes_[b.id].grad, nodes_[out.id].grad);
    };
    return out;
  }

  // a (m x n) + row vector b (1 x n) broadcast over rows
  V add_rowvec(V a, V b) {
    if (val(b).rows() != 1 || val(a).cols() != val(b).cols()) throw std::invalid_argument("add_rowvec shape");
    Matrix m = val(a);
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) m(i, j) += val(b)(0, j);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      const Matrix& g = nodes_[out.id].grad;
      add_inplace(nodes_[a.id].grad, g);
      Matrix& gb = nodes_[b.id].grad;
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    };
    return out;
  }

  V scale(V a, double s) {
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= s;
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, s]() { axpy(nodes_[a.id].grad, s, nodes_[out.id].grad); };
    return out;
  }

  V hadamard(V a, V b) {
    check_same_shape(a, b);
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= val(b).data()[i];
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, b]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      Matrix& gb = nodes_[b.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.data()[i] += g.data()[i] * nodes_[b.id].val.data()[i];
        gb.data()[i] += g.data()[i] * nodes_[a.id].val.data()[i];
      }
    };
    return out;
  }

  V hadamard_const(V a, Matrix c) {
    if (!val(a).same_shape(c)) throw std::invalid_argument("hadamard_const shape");
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= c.data()[i];
    auto shared = std::make_shared<Matrix>(std::move(c));
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, shared]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * shared->data()[i];
    };
    return out;
  }

  // Inverted dropout; p == 0 is a no-op.
  V dropout(V a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
    Matrix mask(val(a).rows(), val(a).cols());
    const double keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0 : keep;
    return hadamard_const(a, std::move(mask));
  }

  V gelu(V a) {
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double x = m.data()[i];
      m.data()[i] = x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    }
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      const Matrix& x = nodes_[a.id].val;
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double xi = x.data()[i];
        const double phi = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
        ga.data()[i] += g.data()[i] * (phi + xi * pdf);
      }
    };
    return out;
  }

  V elu(V a) {
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double x = m.data()[i];
      m.data()[i] = x > 0.0 ? x : std::expm1(x);
    }
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      const Matrix& x = nodes_[a.id].val;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double xi = x.data()[i];
        ga.data()[i] += g.data()[i] * (xi > 0.0 ? 1.0 : std::exp(xi));
      }
    };
    return out;
  }

  V leaky_relu(V a, double slope) {
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double x = m.data()[i];
      m.data()[i] = x > 0.0 ? x : slope * x;
    }
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, slope]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      const Matrix& x = nodes_[a.id].val;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] * (x.data()[i] > 0.0 ? 1.0 : slope);
    };
    return out;
  }

  V relu(V a) { return leaky_relu(a, 0.0); }

  V tanh_act(V a) {
    Matrix m = val(a);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std::tanh(m.data()[i]);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const Matrix& g = nodes_[out.id].grad;
      const Matrix& y = nodes_[out.id].val;
      Matrix& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
    };
    return out;
  }

  V identity(V a) { return a; }

  V softmax_rows(V a) {
    Matrix m = val(a);
    softmax_rows_inplace(m);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const Matrix& g = nodes_[out.id].grad;
      const Matrix& y = nodes_[out.id].val;
      Matrix& ga = nodes_[a.id].grad;
      for (int i = 0; i < g.rows(); ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
        for (int j = 0; j < g.cols(); ++j) ga(i, j) += (g(i, j) - dot) * y(i, j);
      }
    };
    return out;
  }

  // Per-row normalization with learned gain/bias (both 1 x d).
  V layernorm_rows(V x, V gain, V bias, double eps = 1e-5) {
    const Matrix& xv = val(x);
    const int n = xv.rows(), d = xv.cols();
    if (val(gain).rows() != 1 || val(gain).cols() != d || val(bias).rows() != 1 || val(bias).cols() != d)
      throw std::invalid_argument("layernorm gain/bias shape");
    auto xhat = std::make_shared<Matrix>(n, d);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    Matrix y(n, d);
    for (int i = 0; i < n; ++i) {
      double mean = 0.0;
      for (int j = 0; j < d; ++j) mean += xv(i, j);
      mean /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) {
        const double c = xv(i, j) - mean;
        var += c * c;
      }
      var /= d;
      const double istd = 1.0 / std::sqrt(var + eps);
      (*inv_std)[i] = istd;
      for (int j = 0; j < d; ++j) {
        const double h = (xv(i, j) - mean) * istd;
        (*xhat)(i, j) = h;
        y(i, j) = h * val(gain)(0, j) + val(bias)(0, j);
      }
    }
    V out = push(std::move(y), nullptr);
    nodes_[out.id].back = [this, out, x, gain, bias, xhat, inv_std]() {
      const Matrix& g = nodes_[out.id].grad;
      const int n = g.rows(), d = g.cols();
      Matrix& gx = nodes_[x.id].grad;
      Matrix& gg = nodes_[gain.id].grad;
      Matrix& gb = nodes_[bias.id].grad;
      const Matrix& gv = nodes_[gain.id].val;
      for (int i = 0; i < n; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          const double dy = g(i, j);
          gb(0, j) += dy;
          gg(0, j) += dy * (*xhat)(i, j);
          const double dxhat = dy * gv(0, j);
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * (*xhat)(i, j);
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int j = 0; j < d; ++j) {
          const double dxhat = g(i, j) * gv(0, j);
          gx(i, j) += (*inv_std)[i] * (dxhat - mean_dxhat - (*xhat)(i, j) * mean_dxhat_xhat);
        }
      }
    };
    return out;
  }

  V concat_cols(V a, V b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols rows");
    Matrix m(av.rows(), av.cols() + bv.cols());
    for (int i = 0; i < av.rows(); ++i) {
      for (int j = 0; j < av.cols(); ++j) m(i, j) = av(i, j);
      for (int j = 0; j < bv.cols(); ++j) m(i, av.cols() + j) = bv(i, j);
    }
    const int ac = av.cols();
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, b, ac]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      Matrix& gb = nodes_[b.id].grad;
      for (int i = 0; i < g.rows(); ++i) {
        for (int j = 0; j < ga.cols(); ++j) ga(i, j) += g(i, j);
        for (int j = 0; j < gb.cols(); ++j) gb(i, j) += g(i, ac + j);
      }
    };
    return out;
  }

  V slice_cols(V a, int c0, int width) {
    const Matrix& av = val(a);
    if (c0 < 0 || c0 + width > av.cols()) throw std::invalid_argument("slice_cols bounds");
    Matrix m(av.rows(), width);
    for (int i = 0; i < av.rows(); ++i)
      for (int j = 0; j < width; ++j) m(i, j) = av(i, c0 + j);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, c0, width]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < width; ++j) ga(i, c0 + j) += g(i, j);
    };
    return out;
  }

  V concat_rows(const std::vector<V>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows needs inputs");
    int rows = 0;
    const int cols = val(parts[0]).cols();
    for (V p : parts) {
      if (val(p).cols() != cols) throw std::invalid_argument("concat_rows cols");
      rows += val(p).rows();
    }
    Matrix m(rows, cols);
    int r = 0;
    for (V p : parts) {
      const Matrix& pv = val(p);
      for (int i = 0; i < pv.rows(); ++i, ++r)
        for (int j = 0; j < cols; ++j) m(r, j) = pv(i, j);
    }
    auto parts_copy = std::make_shared<std::vector<V>>(parts);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, parts_copy]() {
      const Matrix& g = nodes_[out.id].grad;
      int r = 0;
      for (V p : *parts_copy) {
        Matrix& gp = nodes_[p.id].grad;
        for (int i = 0; i < gp.rows(); ++i, ++r)
          for (int j = 0; j < g.cols(); ++j) gp(i, j) += g(r, j);
      }
    };
    return out;
  }

  // out[i] = a[rows[i]]; repeated indices accumulate on backward, which makes
  // this double as an embedding lookup.
  V gather_rows(V a, std::vector<int> rows) {
    const Matrix& av = val(a);
    Matrix m(static_cast<int>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= av.rows()) throw std::invalid_argument("gather_rows index");
      for (int j = 0; j < av.cols(); ++j) m(static_cast<int>(i), j) = av(rows[i], j);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, idx]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < idx->size(); ++i)
        for (int j = 0; j < g.cols(); ++j) ga((*idx)[i], j) += g(static_cast<int>(i), j);
    };
    return out;
  }

  // out row (b * reps + i) = a row b
  V repeat_rows_blocks(V a, int reps) {
    const Matrix& av = val(a);
    Matrix m(av.rows() * reps, av.cols());
    for (int b = 0; b < av.rows(); ++b)
      for (int i = 0; i < reps; ++i)
        for (int j = 0; j < av.cols(); ++j) m(b * reps + i, j) = av(b, j);
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a, reps]() {
      const Matrix& g = nodes_[out.id].grad;
      Matrix& ga = nodes_[a.id].grad;
      for (int b = 0; b < ga.rows(); ++b)
        for (int i = 0; i < reps; ++i)
          for (int j = 0; j < g.cols(); ++j) ga(b, j) += g(b * reps + i, j);
    };
    return out;
  }

  V sum_all(V a) {
    double s = 0.0;
    for (std::size_t i = 0; i < val(a).size(); ++i) s += val(a).data()[i];
    Matrix m(1, 1);
    m(0, 0) = s;
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, a]() {
      const double g = nodes_[out.id].grad(0, 0);
      Matrix& ga = nodes_[a.id].grad;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
    };
    return out;
  }

  // Multi-head self-attention over a batch of equal-length sequences stacked
  // as rows. qkv is (batch*len) x 3d laid out [Q | K | V]; key_bias is
  // (batch x len) additive mask applied to score columns (0 or -1e30).
  V attention_block(V qkv, int batch, int len, int heads, Matrix key_bias) {
    const Matrix& qv = val(qkv);
    if (qv.rows() != batch * len || qv.cols() % 3 != 0) throw std::invalid_argument("attention_block shape");
    const int d = qv.cols() / 3;
    if (d % heads != 0) throw std::invalid_argument("heads must divide width");
    if (key_bias.rows() != batch || key_bias.cols() != len) throw std::invalid_argument("key_bias shape");
    const int dh = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<Matrix>>();
    probs->reserve(static_cast<std::size_t>(batch) * heads);
    Matrix out_m(batch * len, d);
    for (int b = 0; b < batch; ++b) {
      const int r0 = b * len;
      for (int h = 0; h < heads; ++h) {
        const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
        Matrix s(len, len);
        for (int i = 0; i < len; ++i) {
          for (int j = 0; j < len; ++j) {
            double acc = 0.0;
            for (int p = 0; p < dh; ++p) acc += qv(r0 + i, qo + p) * qv(r0 + j, ko + p);
            s(i, j) = acc * scl + key_bias(b, j);
          }
        }
        softmax_rows_inplace(s);
        for (int i = 0; i < len; ++i)
          for (int p = 0; p < dh; ++p) {
            double acc = 0.0;
            for (int j = 0; j < len; ++j) acc += s(i, j) * qv(r0 + j, vo + p);
            out_m(r0 + i, h * dh + p) = acc;
          }
        probs->push_back(std::move(s));
      }
    }

    V out = push(std::move(out_m), nullptr);
    nodes_[out.id].back = [this, out, qkv, batch, len, heads, d, dh, scl, probs]() {
      const Matrix& g = nodes_[out.id].grad;
      const Matrix& qv = nodes_[qkv.id].val;
      Matrix& gq = nodes_[qkv.id].grad;
      for (int b = 0; b < batch; ++b) {
        const int r0 = b * len;
        for (int h = 0; h < heads; ++h) {
          const Matrix& p_m = (*probs)[static_cast<std::size_t>(b) * heads + h];
          const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
          Matrix dp(len, len);
          for (int i = 0; i < len; ++i)
            for (int j = 0; j < len; ++j) {
              double acc = 0.0;
              for (int p = 0; p < dh; ++p) acc += g(r0 + i, h * dh + p) * qv(r0 + j, vo + p);
              dp(i, j) = acc;
            }
          for (int j = 0; j < len; ++j)
            for (int p = 0; p < dh; ++p) {
              double acc = 0.0;
              for (int i = 0; i < len; ++i) acc += p_m(i, j) * g(r0 + i, h * dh + p);
              gq(r0 + j, vo + p) += acc;
            }
          Matrix ds(len, len);
          for (int i = 0; i < len; ++i) {
            double dot = 0.0;
            for (int j = 0; j < len; ++j) dot += dp(i, j) * p_m(i, j);
            for (int j = 0; j < len; ++j) ds(i, j) = (dp(i, j) - dot) * p_m(i, j) * scl;
          }
          for (int i = 0; i < len; ++i)
            for (int p = 0; p < dh; ++p) {
              double acc = 0.0;
              for (int j = 0; j < len; ++j) acc += ds(i, j) * qv(r0 + j, ko + p);
              gq(r0 + i, qo + p) += acc;
            }
          for (int j = 0; j < len; ++j)
            for (int p = 0; p < dh; ++p) {
              double acc = 0.0;
              for (int i = 0; i < len; ++i) acc += ds(i, j) * qv(r0 + i, qo + p);
              gq(r0 + j, ko + p) += acc;
            }
        }
      }
    };
    return out;
  }

  // Sum over flagged rows of -log softmax(logits)[target]; the caller divides
  // by the global masked count.
  V masked_ce_sum(V logits, std::vector<int> targets, std::vector<char> flags) {
    const Matrix& lv = val(logits);
    if (targets.size() != static_cast<std::size_t>(lv.rows()) || flags.size() != targets.size())
      throw std::invalid_argument("masked_ce_sum shape");
    double loss = 0.0;
    for (int i = 0; i < lv.rows(); ++i) {
      if (!flags[i]) continue;
      if (targets[i] < 0 || targets[i] >= lv.cols()) throw std::invalid_argument("ce target out of range");
      double mx = lv(i, 0);
      for (int j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(i, j));
      double sum = 0.0;
      for (int j = 0; j < lv.cols(); ++j) sum += std::exp(lv(i, j) - mx);
      loss += mx + std::log(sum) - lv(i, targets[i]);
    }
    Matrix m(1, 1);
    m(0, 0) = loss;
    auto t = std::make_shared<std::vector<int>>(std::move(targets));
    auto f = std::make_shared<std::vector<char>>(std::move(flags));
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, logits, t, f]() {
      const double up = nodes_[out.id].grad(0, 0);
      const Matrix& lv = nodes_[logits.id].val;
      Matrix& gl = nodes_[logits.id].grad;
      for (int i = 0; i < lv.rows(); ++i) {
        if (!(*f)[i]) continue;
        double mx = lv(i, 0);
        for (int j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(i, j));
        double sum = 0.0;
        for (int j = 0; j < lv.cols(); ++j) sum += std::exp(lv(i, j) - mx);
        for (int j = 0; j < lv.cols(); ++j) {
          const double p = std::exp(lv(i, j) - mx) / sum;
          gl(i, j) += up * (p - (j == (*t)[i] ? 1.0 : 0.0));
        }
      }
    };
    return out;
  }

  // Mean over rows of (1 - cos(z_i, target_i)). The target is a constant and
  // carries no gradient. A zero-norm row on either side contributes exactly 1
  // with zero gradient; zero_row_warnings counts them.
  V latent_cosine_loss(V z, Matrix target, int* zero_row_warnings = nullptr) {
    const Matrix& zv = val(z);
    if (!zv.same_shape(target)) throw std::invalid_argument("latent_cosine_loss shape");
    const int n = zv.rows(), d = zv.cols();
    double loss = 0.0;
    int warnings = 0;
    for (int i = 0; i < n; ++i) {
      double zz = 0.0, tt = 0.0, zt = 0.0;
      for (int j = 0; j < d; ++j) {
        zz += zv(i, j) * zv(i, j);
        tt += target(i, j) * target(i, j);
        zt += zv(i, j) * target(i, j);
      }
      if (zz == 0.0 || tt == 0.0) {
        loss += 1.0;
        ++warnings;
      } else {
        loss += 1.0 - zt / (std::sqrt(zz) * std::sqrt(tt));
      }
    }
    if (zero_row_warnings) *zero_row_warnings = warnings;
    Matrix m(1, 1);
    m(0, 0) = loss / n;
    auto tgt = std::make_shared<Matrix>(std::move(target));
    V out = push(std::move(m), nullptr);
    nodes_[out.id].back = [this, out, z, tgt]() {
      const double up = nodes_[out.id].grad(0, 0);
      const Matrix& zv = nodes_[z.id].val;
      Matrix& gz = nodes_[z.id].grad;
      const int n = zv.rows(), d = zv.cols();
      for (int i = 0; i < n; ++i) {
        double zz = 0.0, tt = 0.0, zt = 0.0;
        for (int j = 0; j < d; ++j) {
          zz += zv(i, j) * zv(i, j);
          tt += (*tgt)(i, j) * (*tgt)(i, j);
          zt += zv(i, j) * (*tgt)(i, j);
        }
        if (zz == 0.0 || tt == 0.0) continue;
        const double nz = std::sqrt(zz), nt = std::sqrt(tt);
        const double cosv = zt / (nz * nt);
        for (int j = 0; j < d; ++j) {
          const double dcos = (*tgt)(i, j) / (nz * nt) - cosv * zv(i, j) / zz;
          gz(i, j) += up * (-dcos / n);
        }
      }
    };
    return out;
  }

  // One GAT attention head over a local subgraph. z is the transformed node
  // matrix (n x d); attn_src / attn_dst are (heads x d) parameter nodes of
  // which row `head` is used. Every node gets a self slot in addition to its
  // CSR neighbors; softmax runs over self + neighbors. Edge features (aligned
  // with local CSR entries, constant) multiply neighbor messages elementwise;
  // the self slot has none. coef_keep scales post-softmax coefficients
  // (dropout mask over n + entries slots, self slot first per node).
  V gat_attention(V z, V attn_src, V attn_dst, int head, const ContextSubgraph& sub,
                  const Matrix* edge_feats, double leaky_slope,
                  const std::vector<double>* coef_keep = nullptr, GatDebug* debug = nullptr) {
    const Matrix& zv = val(z);
    const int n = static_cast<int>(sub.num_nodes());
    const int d = zv.cols();
    if (zv.rows() != n) throw std::invalid_argument("gat_attention node count");
    if (edge_feats && (edge_feats->rows() != static_cast<int>(sub.csr_targets.size()) || edge_feats->cols() != d))
      throw std::invalid_argument("edge feature table shape");
    if (coef_keep && coef_keep->size() != sub.num_nodes() + sub.csr_targets.size())
      throw std::invalid_argument("coefficient mask size");

    const Matrix& as = val(attn_src);
    const Matrix& ad = val(attn_dst);
    if (head < 0 || head >= as.rows() || as.cols() != d || ad.cols() != d)
      throw std::invalid_argument("attention vector shape");

    std::vector<double> s_src(n, 0.0), s_dst(n, 0.0);
    for (int u = 0; u < n; ++u)
      for (int j = 0; j < d; ++j) {
        s_src[u] += zv(u, j) * as(head, j);
        s_dst[u] += zv(u, j) * ad(head, j);
      }

    auto alphas = std::make_shared<std::vector<std::vector<double>>>(n);
    auto lgrads = std::make_shared<std::vector<std::vector<double>>>(n);
    if (debug) debug->attention_sums.assign(n, 0.0);

    Matrix out_m(n, d);
    for (int v = 0; v < n; ++v) {
      const std::size_t e0 = sub.csr_offsets[v], e1 = sub.csr_offsets[v + 1];
      const std::size_t slots = 1 + (e1 - e0);
      std::vector<double> pre(slots), lg(slots);
      pre[0] = s_src[v] + s_dst[v];
      for (std::size_t e = e0; e < e1; ++e) pre[1 + (e - e0)] = s_src[sub.csr_targets[e]] + s_dst[v];
      double mx = pre[0];
      for (std::size_t k = 0; k < slots; ++k) {
        lg[k] = pre[k] > 0.0 ? 1.0 : leaky_slope;
        pre[k] = pre[k] > 0.0 ? pre[k] : leaky_slope * pre[k];
        mx = std::max(mx, pre[k]);
      }
      double denom = 0.0;
      std::vector<double> alpha(slots);
      for (std::size_t k = 0; k < slots; ++k) {
        alpha[k] = std::exp(pre[k] - mx);
        denom += alpha[k];
      }
      for (std::size_t k = 0; k < slots; ++k) alpha[k] /= denom;
      if (debug)
        for (std::size_t k = 0; k < slots; ++k) debug->attention_sums[v] += alpha[k];

      // keep-mask layout: self slots occupy [0, n), entry slots follow at n + entry index
      auto keep_at = [&](std::size_t k) {
        if (!coef_keep) return 1.0;
        return k == 0 ? (*coef_keep)[v] : (*coef_keep)[sub.num_nodes() + e0 + (k - 1)];
      };

      for (std::size_t k = 0; k < slots; ++k) {
        const double w = alpha[k] * keep_at(k);
        if (w == 0.0) continue;
        const int u = k == 0 ? v : static_cast<int>(sub.csr_targets[e0 + k - 1]);
        if (k > 0 && edge_feats) {
          const std::size_t e = e0 + k - 1;
          for (int j = 0; j < d; ++j) out_m(v, j) += w * zv(u, j) * (*edge_feats)(static_cast<int>(e), j);
        } else {
          for (int j = 0; j < d; ++j) out_m(v, j) += w * zv(u, j);
        }
      }
      (*alphas)[v] = std::move(alpha);
      (*lgrads)[v] = std::move(lg);
    }

    auto keep_copy = coef_keep ? std::make_shared<std::vector<double>>(*coef_keep) : nullptr;
    auto ef_copy = edge_feats ? std::make_shared<Matrix>(*edge_feats) : nullptr;
    auto offs = std::make_shared<std::vector<std::size_t>>(sub.csr_offsets);
    auto tgts = std::make_shared<std::vector<NodeId>>(sub.csr_targets);

    V out = push(std::move(out_m), nullptr);
    nodes_[out.id].back = [this, out, z, attn_src, attn_dst, head, alphas, lgrads, keep_copy, ef_copy,
                           offs, tgts]() {
      const Matrix& g = nodes_[out.id].grad;
      const Matrix& zv = nodes_[z.id].val;
      Matrix& gz = nodes_[z.id].grad;
      Matrix& gas = nodes_[attn_src.id].grad;
      Matrix& gad = nodes_[attn_dst.id].grad;
      const Matrix& as = nodes_[attn_src.id].val;
      const Matrix& ad = nodes_[attn_dst.id].val;
      const int n = zv.rows(), d = zv.cols();

      std::vector<double> ds_src(n, 0.0), ds_dst(n, 0.0);
      for (int v = 0; v < n; ++v) {
        const std::size_t e0 = (*offs)[v], e1 = (*offs)[v + 1];
        const std::size_t slots = 1 + (e1 - e0);
        const auto& alpha = (*alphas)[v];
        const auto& lg = (*lgrads)[v];
        auto keep_at = [&](std::size_t k) {
          if (!keep_copy) return 1.0;
          return k == 0 ? (*keep_copy)[v] : (*keep_copy)[static_cast<std::size_t>(n) + e0 + (k - 1)];
        };

        std::vector<double> dalpha(slots, 0.0);
        for (std::size_t k = 0; k < slots; ++k) {
          const int u = k == 0 ? v : static_cast<int>((*tgts)[e0 + k - 1]);
          const double kp = keep_at(k);
          double dot = 0.0;
          if (k > 0 && ef_copy) {
            const int e = static_cast<int>(e0 + k - 1);
            for (int j = 0; j < d; ++j) {
              const double msg = zv(u, j) * (*ef_copy)(e, j);
              dot += g(v, j) * msg;
              gz(u, j) += g(v, j) * alpha[k] * kp * (*ef_copy)(e, j);
            }
          } else {
            for (int j = 0; j < d; ++j) {
              dot += g(v, j) * zv(u, j);
              gz(u, j) += g(v, j) * alpha[k] * kp;
            }
          }
          dalpha[k] = dot * kp;
        }

        double asum = 0.0;
        for (std::size_t k = 0; k < slots; ++k) asum += dalpha[k] * alpha[k];
        double de_total = 0.0;
        for (std::size_t k = 0; k < slots; ++k) {
          const double de = (dalpha[k] - asum) * alpha[k] * lg[k];
          const int u = k == 0 ? v : static_cast<int>((*tgts)[e0 + k - 1]);
          ds_src[u] += de;
          de_total += de;
        }
        ds_dst[v] += de_total;
      }

      for (int u = 0; u < n; ++u) {
        for (int j = 0; j < d; ++j) {
          gas(head, j) += ds_src[u] * zv(u, j);
          gad(head, j) += ds_dst[u] * zv(u, j);
          gz(u, j) += ds_src[u] * as(head, j) + ds_dst[u] * ad(head, j);
        }
      }
    };
    return out;
  }

  void backward(V loss) {
    if (val(loss).rows() != 1 || val(loss).cols() != 1) throw std::invalid_argument("loss must be scalar");
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

private:
  struct Node {
    Matrix val;
    Matrix grad;
    std::function<void()> back;
  };

  static void softmax_rows_inplace(Matrix& m) {
    for (int i = 0; i < m.rows(); ++i) {
      double mx = m(i, 0);
      for (int j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
      double sum = 0.0;
      for (int j = 0; j < m.cols(); ++j) {
        m(i, j) = std::exp(m(i, j) - mx);
        sum += m(i, j);
      }
      for (int j = 0; j < m.cols(); ++j) m(i, j) /= sum;
    }
  }

  V push(Matrix v, std::function<void()> back) {
    Node n;
    n.grad = Matrix(v.rows(), v.cols());
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return V{static_cast<int>(nodes_.size()) - 1};
  }

  void check_same_shape(V a, V b) const {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("shape mismatch");
  }
  void check_cols_rows(V a, V b) const {
    if (val(a).cols() != val(b).rows()) throw std::invalid_argument("matmul shape mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace unigraph
