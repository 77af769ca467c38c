#include "stylediff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stylediff {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p, bool trainable) {
  const bool wants_grad = grad_enabled_ && trainable && p.trainable;
  for (const auto& [bound, id] : bound_params_) {
    if (bound == &p && nodes_[id].requires_grad == wants_grad) return {this, id};
  }
  Node node;
  node.value = p.value;
  node.requires_grad = wants_grad;
  node.param = wants_grad ? &p : nullptr;
  nodes_.push_back(std::move(node));
  bound_params_.emplace_back(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::invalid_argument("autograd: mixing vars from different tapes");
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(Var<T> v) {
  Node& node = nodes_[v.id];
  if (node.grad.size() != node.value.size()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (!grad_enabled_) throw std::logic_error("autograd: backward on a tape without gradients");
  if (value(root).size() != 1) throw std::invalid_argument("autograd: backward root must be a scalar");
  grad(root).fill(T(1));
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(node.value, node.grad);
    if (node.param) {
      Parameter<T>& p = *node.param;
      if (p.grad.size() != p.value.size()) p.grad = Tensor<T>(p.value.shape());
      for (std::size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
    }
  }
}

namespace ag {
namespace {

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (!v.tape) throw std::invalid_argument("autograd: unbound variable");
  return *v.tape;
}

template <typename T>
void require_same_size(Var<T> a, Var<T> b, const char* op) {
  if (a.value().size() != b.value().size()) {
    throw std::invalid_argument(std::string(op) + ": size mismatch " +
                                shape_string(a.value().shape()) + " vs " +
                                shape_string(b.value().shape()));
  }
}

template <typename T>
bool wants(Var<T> v) {
  return v.tape->requires_grad(v);
}

template <typename T>
Tensor<T> scalar(T v) {
  return Tensor<T>({1}, std::vector<T>{v});
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " +
                                shape_string(a.value().shape()) + " * " +
                                shape_string(b.value().shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::gemm(m, n, k, a.value().data(), b.value().data(), out.data(), false);
  Tape<T>& tape = tape_of(a);
  return tape.record(std::move(out), {a, b}, [a, b, m, n, k](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *a.tape;
    if (wants(a)) kernels::gemm_nt(m, k, n, g.data(), b.value().data(), t.grad(a).data(), true);
    if (wants(b)) kernels::gemm_tn(k, n, m, a.value().data(), g.data(), t.grad(b).data(), true);
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k || b.value().size() != n) {
    throw std::invalid_argument("linear: input " + shape_string(x.value().shape()) +
                                " incompatible with weight " + shape_string(w.value().shape()) +
                                " / bias " + shape_string(b.value().shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const T* bias = b.value().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bias, bias + n, out.data() + i * n);
  kernels::gemm(m, n, k, x.value().data(), w.value().data(), out.data(), true);
  return tape_of(x).record(std::move(out), {x, w, b},
                           [x, w, b, m, n, k](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *x.tape;
    if (wants(x)) kernels::gemm_nt(m, k, n, g.data(), w.value().data(), t.grad(x).data(), true);
    if (wants(w)) kernels::gemm_tn(k, n, m, x.value().data(), g.data(), t.grad(w).data(), true);
    if (wants(b)) {
      T* gb = t.grad(b).data();
      for (std::size_t i = 0; i < m; ++i) {
        const T* gi = g.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gb[j] += gi[j];
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_size(a, b, "add");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *a.tape;
    for (Var<T> v : {a, b}) {
      if (!wants(v)) continue;
      T* gv = t.grad(v).data();
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_size(a, b, "sub");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *a.tape;
    if (wants(a)) {
      T* ga = t.grad(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants(b)) {
      T* gb = t.grad(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_size(a, b, "mul");
  Tensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *a.tape;
    if (wants(a)) {
      T* ga = t.grad(a).data();
      const T* bv = b.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (wants(b)) {
      T* gb = t.grad(b).data();
      const T* av = a.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return tape_of(a).record(std::move(out), {a}, [a, factor](const Tensor<T>&, const Tensor<T>& g) {
    T* ga = a.tape->grad(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var<T> repeat_rows(Var<T> x, std::size_t times) {
  if (times == 0) throw std::invalid_argument("repeat_rows: zero repetitions");
  const std::size_t rows = x.rows(), d = x.cols();
  Tensor<T> out = Tensor<T>::matrix(rows * times, d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.value().data() + r * d;
    for (std::size_t k = 0; k < times; ++k) std::copy(src, src + d, out.data() + (r * times + k) * d);
  }
  return tape_of(x).record(std::move(out), {x}, [x, rows, d, times](const Tensor<T>&, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < times; ++k) {
        const T* src = g.data() + (r * times + k) * d;
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  if (b.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
  Tensor<T> out = Tensor<T>::matrix(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return tape_of(a).record(std::move(out), {a, b}, [a, b, rows, ca, cb](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *a.tape;
    if (wants(a)) {
      T* ga = t.grad(a).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
      }
    }
    if (wants(b)) {
      T* gb = t.grad(b).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw std::invalid_argument("concat_rows: column counts differ");
    rows += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, d);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + at);
    at += p.value().size();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](const Tensor<T>&, const Tensor<T>& g) {
    std::size_t at = 0;
    for (const auto& p : parts) {
      const std::size_t n = p.value().size();
      if (wants(p)) {
        T* gp = p.tape->grad(p).data();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[at + i];
      }
      at += n;
    }
  });
}

template <typename T>
Var<T> select_rows(Var<T> x, std::vector<std::size_t> rows) {
  const std::size_t d = x.cols();
  Tensor<T> out = Tensor<T>::matrix(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw std::out_of_range("select_rows: row index out of range");
    std::copy_n(x.value().data() + rows[i] * d, d, out.data() + i * d);
  }
  return tape_of(x).record(std::move(out), {x}, [x, rows = std::move(rows), d](const Tensor<T>&, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gx[rows[i] * d + j] += g[i * d + j];
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor<T>& y, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kA = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& xv = x.value();
    T* gx = x.tape->grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(kC * (v + kA * v * v * v));
      const T dudx = kC * (T(1) + T(3) * kA * v * v);
      gx[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * dudx);
    }
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor<T>& y, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw std::invalid_argument("layer_norm: affine parameters do not match width");
  }
  Tensor<T> normed = Tensor<T>::matrix(rows, d);
  std::vector<T> inv_std(rows);
  Tensor<T> out = Tensor<T>::matrix(rows, d);
  const T* gm = gamma.value().data();
  const T* bt = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * inv_std[r];
      normed[r * d + j] = h;
      out[r * d + j] = gm[j] * h + bt[j];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, d, normed = std::move(normed), inv_std = std::move(inv_std)](
          const Tensor<T>&, const Tensor<T>& g) {
        Tape<T>& t = *x.tape;
        const T* gm = gamma.value().data();
        if (wants(gamma) || wants(beta)) {
          T* gg = wants(gamma) ? t.grad(gamma).data() : nullptr;
          T* gb = wants(beta) ? t.grad(beta).data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += g[r * d + j] * normed[r * d + j];
              if (gb) gb[j] += g[r * d + j];
            }
          }
        }
        if (wants(x)) {
          T* gx = t.grad(x).data();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gm[j];
              mean_dh += dh;
              mean_dh_h += dh * normed[r * d + j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gm[j];
              gx[r * d + j] += inv_std[r] * (dh - mean_dh - normed[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const kernels::AttentionShape& shape) {
  if (shape.heads == 0 || shape.model_dim % shape.heads != 0) {
    throw std::invalid_argument("attention: model width " + std::to_string(shape.model_dim) +
                                " not divisible into " + std::to_string(shape.heads) + " heads");
  }
  if (q.cols() != shape.model_dim || k.cols() != shape.model_dim || v.cols() != shape.model_dim ||
      q.rows() != shape.segments * shape.query_len || k.rows() != shape.segments * shape.key_len ||
      v.rows() != k.rows()) {
    throw std::invalid_argument("attention: operand shapes do not match the segment layout");
  }
  Tensor<T> out = Tensor<T>::matrix(q.rows(), shape.model_dim);
  std::vector<T> probs(shape.probs_size());
  kernels::attention_forward(shape, q.value().data(), k.value().data(), v.value().data(),
                             out.data(), probs.data());
  return tape_of(q).record(
      std::move(out), {q, k, v},
      [q, k, v, shape, probs = std::move(probs)](const Tensor<T>&, const Tensor<T>& g) {
        Tape<T>& t = *q.tape;
        kernels::attention_backward(shape, q.value().data(), k.value().data(), v.value().data(),
                                    probs.data(), g.data(),
                                    wants(q) ? t.grad(q).data() : nullptr,
                                    wants(k) ? t.grad(k).data() : nullptr,
                                    wants(v) ? t.grad(v).data() : nullptr);
      });
}

template <typename T>
Var<T> attention_pool(Var<T> x, Var<T> score, std::size_t segment_len) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (segment_len == 0 || rows == 0 || rows % segment_len != 0) {
    throw std::invalid_argument("attention_pool: empty or ragged token sequence");
  }
  if (score.value().size() != d) throw std::invalid_argument("attention_pool: score width mismatch");
  const std::size_t segments = rows / segment_len;
  std::vector<T> weights(rows);
  Tensor<T> out = Tensor<T>::matrix(segments, d);
  const T* u = score.value().data();
  for (std::size_t s = 0; s < segments; ++s) {
    T max_score = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < segment_len; ++i) {
      const T* xi = x.value().data() + (s * segment_len + i) * d;
      T acc = 0;
      for (std::size_t j = 0; j < d; ++j) acc += xi[j] * u[j];
      weights[s * segment_len + i] = acc;
      max_score = std::max(max_score, acc);
    }
    T total = 0;
    for (std::size_t i = 0; i < segment_len; ++i) {
      T& w = weights[s * segment_len + i];
      w = std::exp(w - max_score);
      total += w;
    }
    T* os = out.data() + s * d;
    for (std::size_t i = 0; i < segment_len; ++i) {
      T& w = weights[s * segment_len + i];
      w /= total;
      const T* xi = x.value().data() + (s * segment_len + i) * d;
      for (std::size_t j = 0; j < d; ++j) os[j] += w * xi[j];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, score},
      [x, score, segments, segment_len, d, weights = std::move(weights)](const Tensor<T>&,
                                                                         const Tensor<T>& g) {
        Tape<T>& t = *x.tape;
        T* gx = wants(x) ? t.grad(x).data() : nullptr;
        T* gu = wants(score) ? t.grad(score).data() : nullptr;
        const T* u = score.value().data();
        std::vector<T> dots(segment_len);
        for (std::size_t s = 0; s < segments; ++s) {
          const T* gs = g.data() + s * d;
          T mean_dot = 0;
          for (std::size_t i = 0; i < segment_len; ++i) {
            const T* xi = x.value().data() + (s * segment_len + i) * d;
            T acc = 0;
            for (std::size_t j = 0; j < d; ++j) acc += gs[j] * xi[j];
            dots[i] = acc;
            mean_dot += weights[s * segment_len + i] * acc;
          }
          for (std::size_t i = 0; i < segment_len; ++i) {
            const std::size_t row = s * segment_len + i;
            const T w = weights[row];
            const T dscore = w * (dots[i] - mean_dot);
            const T* xi = x.value().data() + row * d;
            if (gx) {
              for (std::size_t j = 0; j < d; ++j) gx[row * d + j] += w * gs[j] + dscore * u[j];
            }
            if (gu) {
              for (std::size_t j = 0; j < d; ++j) gu[j] += dscore * xi[j];
            }
          }
        }
      });
}

template <typename T>
Var<T> segment_mean(Var<T> x, std::size_t segment_len) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (segment_len == 0 || rows == 0 || rows % segment_len != 0) {
    throw std::invalid_argument("segment_mean: empty or ragged sequence");
  }
  const std::size_t segments = rows / segment_len;
  const T inv = T(1) / static_cast<T>(segment_len);
  Tensor<T> out = Tensor<T>::matrix(segments, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[(r / segment_len) * d + j] += inv * x.value()[r * d + j];
  }
  return tape_of(x).record(std::move(out), {x}, [x, rows, d, segment_len, inv](const Tensor<T>&, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv * g[(r / segment_len) * d + j];
    }
  });
}

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t segment_len, std::size_t stride,
               std::size_t pad) {
  const Shape& ws = w.value().shape();
  if (ws.size() != 3) throw std::invalid_argument("conv1d: weight must be [out x in x kernel]");
  const std::size_t cout = ws[0], cin = ws[1], kernel = ws[2];
  if (x.cols() != cin) {
    throw std::invalid_argument("conv1d: input has " + std::to_string(x.cols()) +
                                " channels, weight expects " + std::to_string(cin));
  }
  if (stride == 0 || segment_len == 0 || segment_len + 2 * pad < kernel ||
      x.rows() % segment_len != 0) {
    throw std::invalid_argument("conv1d: kernel/stride incompatible with sequence length");
  }
  if (b.value().size() != cout) throw std::invalid_argument("conv1d: bias width mismatch");
  const std::size_t segments = x.rows() / segment_len;
  const std::size_t out_len = (segment_len + 2 * pad - kernel) / stride + 1;
  const std::size_t out_rows = segments * out_len;
  const std::size_t patch = cin * kernel;

  // im2col: patch element (c, kk) of output step o reads input step o*stride - pad + kk.
  std::vector<T> cols(out_rows * patch, T(0));
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t o = 0; o < out_len; ++o) {
      T* dst = cols.data() + (s * out_len + o) * patch;
      for (std::size_t kk = 0; kk < kernel; ++kk) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(segment_len)) continue;
        const T* xr = x.value().data() + (s * segment_len + static_cast<std::size_t>(src)) * cin;
        for (std::size_t c = 0; c < cin; ++c) dst[c * kernel + kk] = xr[c];
      }
    }
  }
  Tensor<T> out = Tensor<T>::matrix(out_rows, cout);
  for (std::size_t r = 0; r < out_rows; ++r) std::copy_n(b.value().data(), cout, out.data() + r * cout);
  kernels::gemm_nt(out_rows, cout, patch, cols.data(), w.value().data(), out.data(), true);

  return tape_of(x).record(
      std::move(out), {x, w, b},
      [x, w, b, cols = std::move(cols), segments, segment_len, out_len, out_rows, cin, cout, kernel,
       patch, stride, pad](const Tensor<T>&, const Tensor<T>& g) {
        Tape<T>& t = *x.tape;
        if (wants(w)) kernels::gemm_tn(cout, patch, out_rows, g.data(), cols.data(), t.grad(w).data(), true);
        if (wants(b)) {
          T* gb = t.grad(b).data();
          for (std::size_t r = 0; r < out_rows; ++r) {
            for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
          }
        }
        if (wants(x)) {
          std::vector<T> dcols(out_rows * patch);
          kernels::gemm(out_rows, patch, cout, g.data(), w.value().data(), dcols.data(), false);
          T* gx = t.grad(x).data();
          for (std::size_t s = 0; s < segments; ++s) {
            for (std::size_t o = 0; o < out_len; ++o) {
              const T* src_patch = dcols.data() + (s * out_len + o) * patch;
              for (std::size_t kk = 0; kk < kernel; ++kk) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o * stride + kk) - static_cast<std::ptrdiff_t>(pad);
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(segment_len)) continue;
                T* gr = gx + (s * segment_len + static_cast<std::size_t>(src)) * cin;
                for (std::size_t c = 0; c < cin; ++c) gr[c] += src_patch[c * kernel + kk];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
  const std::size_t rows = x.rows(), c = x.cols();
  if (gamma.value().size() != c || beta.value().size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw std::invalid_argument("batch_norm: channel count mismatch");
  }
  std::vector<T> mean(c, T(0)), inv_std(c);
  if (training) {
    if (rows < 2) throw std::invalid_argument("batch_norm: training mode needs at least two rows");
    std::vector<T> var(c, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) mean[j] += x.value()[r * c + j];
    }
    for (auto& m : mean) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const T dv = x.value()[r * c + j] - mean[j];
        var[j] += dv * dv;
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<T>(rows);
      inv_std[j] = T(1) / std::sqrt(var[j] + eps);
      const T unbiased = var[j] * static_cast<T>(rows) / static_cast<T>(rows - 1);
      running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mean[j];
      running_var[j] = (T(1) - momentum) * running_var[j] + momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = running_mean[j];
      inv_std[j] = T(1) / std::sqrt(running_var[j] + eps);
    }
  }
  Tensor<T> normed = Tensor<T>::matrix(rows, c);
  Tensor<T> out = Tensor<T>::matrix(rows, c);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (x.value()[r * c + j] - mean[j]) * inv_std[j];
      normed[r * c + j] = h;
      out[r * c + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, c, training, normed = std::move(normed), inv_std = std::move(inv_std)](
          const Tensor<T>&, const Tensor<T>& g) {
        Tape<T>& t = *x.tape;
        std::vector<T> sum_dh(c, T(0)), sum_dh_h(c, T(0));
        T* gg = wants(gamma) ? t.grad(gamma).data() : nullptr;
        T* gb = wants(beta) ? t.grad(beta).data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const T gv = g[r * c + j];
            if (gg) gg[j] += gv * normed[r * c + j];
            if (gb) gb[j] += gv;
            const T dh = gv * gamma.value()[j];
            sum_dh[j] += dh;
            sum_dh_h[j] += dh * normed[r * c + j];
          }
        }
        if (!wants(x)) return;
        T* gx = t.grad(x).data();
        const T n = static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = g[r * c + j] * gamma.value()[j];
            if (training) {
              gx[r * c + j] += inv_std[j] * (dh - sum_dh[j] / n - normed[r * c + j] * sum_dh_h[j] / n);
            } else {
              gx[r * c + j] += inv_std[j] * dh;
            }
          }
        }
      });
}

template <typename T>
Var<T> row_cosine(Var<T> a, Var<T> b, T eps) {
  require_same_size(a, b, "row_cosine");
  const std::size_t rows = a.rows(), d = a.cols();
  Tensor<T> out = Tensor<T>::matrix(rows, 1);
  std::vector<T> dots(rows), norm_a(rows), norm_b(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T av = a.value()[r * d + j], bv = b.value()[r * d + j];
      dot += av * bv;
      na += av * av;
      nb += bv * bv;
    }
    dots[r] = dot;
    norm_a[r] = std::sqrt(na);
    norm_b[r] = std::sqrt(nb);
    // Rounding can push |cos| a hair past 1 for parallel rows.
    out[r] = std::clamp(dot / std::max(norm_a[r] * norm_b[r], eps), T(-1), T(1));
  }
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b, rows, d, eps, norm_a = std::move(norm_a), norm_b = std::move(norm_b)](
          const Tensor<T>& p, const Tensor<T>& g) {
        Tape<T>& t = *a.tape;
        T* ga = wants(a) ? t.grad(a).data() : nullptr;
        T* gb = wants(b) ? t.grad(b).data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T den = norm_a[r] * norm_b[r];
          const bool guarded = !(den > eps);
          const T inv_den = T(1) / (guarded ? eps : den);
          for (std::size_t j = 0; j < d; ++j) {
            const T av = a.value()[r * d + j], bv = b.value()[r * d + j];
            if (ga) {
              T da = bv * inv_den;
              if (!guarded) da -= p[r] * av / (norm_a[r] * norm_a[r]);
              ga[r * d + j] += g[r] * da;
            }
            if (gb) {
              T db = av * inv_den;
              if (!guarded) db -= p[r] * bv / (norm_b[r] * norm_b[r]);
              gb[r * d + j] += g[r] * db;
            }
          }
        }
      });
}

template <typename T>
Var<T> bce_mean(Var<T> p, const std::vector<T>& labels, T eps) {
  const std::size_t n = p.value().size();
  if (labels.size() != n) throw std::invalid_argument("bce_mean: label count mismatch");
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T pc = std::clamp(p.value()[i], eps, T(1) - eps);
    loss -= labels[i] * std::log(pc) + (T(1) - labels[i]) * std::log(T(1) - pc);
  }
  loss /= static_cast<T>(n);
  return tape_of(p).record(scalar(loss), {p}, [p, labels, eps, n](const Tensor<T>&, const Tensor<T>& g) {
    T* gp = p.tape->grad(p).data();
    for (std::size_t i = 0; i < n; ++i) {
      const T pv = p.value()[i];
      if (pv <= eps || pv >= T(1) - eps) continue;
      const T y = labels[i];
      gp[i] += g[0] * (-(y / pv) + (T(1) - y) / (T(1) - pv)) / static_cast<T>(n);
    }
  });
}

template <typename T>
Var<T> neg_log_mean(Var<T> p, T eps) {
  const std::size_t n = p.value().size();
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) loss -= std::log(std::max(p.value()[i], eps));
  loss /= static_cast<T>(n);
  return tape_of(p).record(scalar(loss), {p}, [p, eps, n](const Tensor<T>&, const Tensor<T>& g) {
    T* gp = p.tape->grad(p).data();
    for (std::size_t i = 0; i < n; ++i) {
      const T pv = p.value()[i];
      if (pv > eps) gp[i] -= g[0] / (pv * static_cast<T>(n));
    }
  });
}

template <typename T>
Var<T> squared_error(Var<T> pred, Var<T> target) {
  require_same_size(pred, target, "squared_error");
  const std::size_t rows = pred.rows();
  T loss = 0;
  for (std::size_t i = 0; i < pred.value().size(); ++i) {
    const T dv = pred.value()[i] - target.value()[i];
    loss += dv * dv;
  }
  loss /= static_cast<T>(rows);
  return tape_of(pred).record(scalar(loss), {pred, target}, [pred, target, rows](const Tensor<T>&, const Tensor<T>& g) {
    Tape<T>& t = *pred.tape;
    const T k = T(2) * g[0] / static_cast<T>(rows);
    T* gp = wants(pred) ? t.grad(pred).data() : nullptr;
    T* gt = wants(target) ? t.grad(target).data() : nullptr;
    for (std::size_t i = 0; i < pred.value().size(); ++i) {
      const T dv = k * (pred.value()[i] - target.value()[i]);
      if (gp) gp[i] += dv;
      if (gt) gt[i] -= dv;
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  return tape_of(x).record(scalar(total), {x}, [x](const Tensor<T>&, const Tensor<T>& g) {
    T* gx = x.tape->grad(x).data();
    for (std::size_t i = 0; i < x.value().size(); ++i) gx[i] += g[0];
  });
}

#define STYLEDIFF_INSTANTIATE_OPS(T)                                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                                    \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> repeat_rows(Var<T>, std::size_t);                                          \
  template Var<T> concat_cols(Var<T>, Var<T>);                                               \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                   \
  template Var<T> select_rows(Var<T>, std::vector<std::size_t>);                             \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> gelu(Var<T>);                                                              \
  template Var<T> tanh(Var<T>);                                                              \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const kernels::AttentionShape&);         \
  template Var<T> attention_pool(Var<T>, Var<T>, std::size_t);                               \
  template Var<T> segment_mean(Var<T>, std::size_t);                                         \
  template Var<T> conv1d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);     \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, bool, T, T);    \
  template Var<T> row_cosine(Var<T>, Var<T>, T);                                             \
  template Var<T> bce_mean(Var<T>, const std::vector<T>&, T);                                \
  template Var<T> neg_log_mean(Var<T>, T);                                                   \
  template Var<T> squared_error(Var<T>, Var<T>);                                             \
  template Var<T> sum(Var<T>);

STYLEDIFF_INSTANTIATE_OPS(float)
STYLEDIFF_INSTANTIATE_OPS(double)

}  // namespace ag

template class Tape<float>;
template class Tape<double>;

}  // namespace stylediff
