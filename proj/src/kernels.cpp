#include "stylediff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stylediff::kernels {

namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// Register tile: 4 rows of C by one cache line of columns.
template <typename T>
void gemm_tile_rows(std::size_t i, std::size_t rows_in_tile, std::size_t n, std::size_t k,
                    const T* a, const T* b, T* c, bool accumulate) {
  constexpr std::size_t kCols = 64 / sizeof(T);
  if (rows_in_tile == 4) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      T acc0[kCols], acc1[kCols], acc2[kCols], acc3[kCols];
      for (std::size_t q = 0; q < kCols; ++q) {
        acc0[q] = accumulate ? c0[j + q] : T(0);
        acc1[q] = accumulate ? c1[j + q] : T(0);
        acc2[q] = accumulate ? c2[j + q] : T(0);
        acc3[q] = accumulate ? c3[j + q] : T(0);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j;
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        for (std::size_t q = 0; q < kCols; ++q) {
          const T bv = brow[q];
          acc0[q] += x0 * bv;
          acc1[q] += x1 * bv;
          acc2[q] += x2 * bv;
          acc3[q] += x3 * bv;
        }
      }
      for (std::size_t q = 0; q < kCols; ++q) {
        c0[j + q] = acc0[q];
        c1[j + q] = acc1[q];
        c2[j + q] = acc2[q];
        c3[j + q] = acc3[q];
      }
    }
    for (; j < n; ++j) {
      T s0 = accumulate ? c0[j] : T(0);
      T s1 = accumulate ? c1[j] : T(0);
      T s2 = accumulate ? c2[j] : T(0);
      T s3 = accumulate ? c3[j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T bv = b[p * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
    return;
  }
  for (std::size_t r = i; r < i + rows_in_tile; ++r) {
    const T* ar = a + r * k;
    T* cr = c + r * n;
    if (!accumulate) std::fill(cr, cr + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T x = ar[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += x * brow[j];
    }
  }
}

template <typename T>
void attention_head(const AttentionShape& shape, std::size_t seg, std::size_t head, const T* q,
                    const T* k, const T* v, T* out, T* probs) {
  const std::size_t d = shape.model_dim;
  const std::size_t dh = shape.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t col = head * dh;
  T* p_block = probs + (seg * shape.heads + head) * shape.query_len * shape.key_len;
  for (std::size_t i = 0; i < shape.query_len; ++i) {
    const T* qi = q + (seg * shape.query_len + i) * d + col;
    T* pi = p_block + i * shape.key_len;
    T max_score = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      const T* kj = k + (seg * shape.key_len + j) * d + col;
      T s = 0;
      for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
      pi[j] = s * scale;
      max_score = std::max(max_score, pi[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      pi[j] = std::exp(pi[j] - max_score);
      total += pi[j];
    }
    for (std::size_t j = 0; j < shape.key_len; ++j) pi[j] /= total;
    T* oi = out + (seg * shape.query_len + i) * d + col;
    std::fill(oi, oi + dh, T(0));
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      const T* vj = v + (seg * shape.key_len + j) * d + col;
      const T w = pi[j];
      for (std::size_t e = 0; e < dh; ++e) oi[e] += w * vj[e];
    }
  }
}

template <typename T>
void attention_head_backward(const AttentionShape& shape, std::size_t seg, std::size_t head,
                             const T* q, const T* k, const T* v, const T* probs, const T* dout,
                             T* dq, T* dk, T* dv, std::vector<T>& scratch) {
  const std::size_t d = shape.model_dim;
  const std::size_t dh = shape.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::size_t col = head * dh;
  const T* p_block = probs + (seg * shape.heads + head) * shape.query_len * shape.key_len;
  scratch.resize(shape.key_len);
  for (std::size_t i = 0; i < shape.query_len; ++i) {
    const T* pi = p_block + i * shape.key_len;
    const T* gi = dout + (seg * shape.query_len + i) * d + col;
    const T* qi = q + (seg * shape.query_len + i) * d + col;
    T weighted = 0;
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      const T* vj = v + (seg * shape.key_len + j) * d + col;
      T s = 0;
      for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
      scratch[j] = s;
      weighted += s * pi[j];
    }
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      const T ds = pi[j] * (scratch[j] - weighted) * scale;
      const std::size_t krow = (seg * shape.key_len + j) * d + col;
      if (dq) {
        T* dqi = dq + (seg * shape.query_len + i) * d + col;
        const T* kj = k + krow;
        for (std::size_t e = 0; e < dh; ++e) dqi[e] += ds * kj[e];
      }
      if (dk) {
        T* dkj = dk + krow;
        for (std::size_t e = 0; e < dh; ++e) dkj[e] += ds * qi[e];
      }
      if (dv) {
        T* dvj = dv + krow;
        const T w = pi[j];
        for (std::size_t e = 0; e < dh; ++e) dvj[e] += w * gi[e];
      }
    }
  }
}

int g_thread_limit = 0;

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  const std::size_t tiles = (m + 3) / 4;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  const bool parallel = m * n * k >= kParallelWork && tiles > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(tiles); ++tile) {
    const std::size_t i = static_cast<std::size_t>(tile) * 4;
    gemm_tile_rows(i, std::min<std::size_t>(4, m - i), n, k, a, b, c, accumulate);
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm(m, n, k, a, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> at(m * k);
  transpose(k, m, a, at.data());
  gemm(m, n, k, at.data(), b, c, accumulate);
}

template <typename T>
void attention_forward(const AttentionShape& shape, const T* q, const T* k, const T* v, T* out,
                       T* probs) {
  const std::size_t tasks = shape.segments * shape.heads;
  const bool parallel =
      tasks > 1 && tasks * shape.query_len * shape.key_len * shape.head_dim() >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t task = 0; task < static_cast<std::ptrdiff_t>(tasks); ++task) {
    const auto t = static_cast<std::size_t>(task);
    attention_head(shape, t / shape.heads, t % shape.heads, q, k, v, out, probs);
  }
}

template <typename T>
void attention_backward(const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  const std::size_t tasks = shape.segments * shape.heads;
  const bool parallel =
      tasks > 1 && tasks * shape.query_len * shape.key_len * shape.head_dim() >= kParallelWork;
#pragma omp parallel if (parallel)
  {
    std::vector<T> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t task = 0; task < static_cast<std::ptrdiff_t>(tasks); ++task) {
      const auto t = static_cast<std::size_t>(task);
      attention_head_backward(shape, t / shape.heads, t % shape.heads, q, k, v, probs, dout, dq,
                              dk, dv, scratch);
    }
  }
}

namespace reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void attention_forward(const AttentionShape& shape, const T* q, const T* k, const T* v, T* out,
                       T* probs) {
  for (std::size_t s = 0; s < shape.segments; ++s) {
    for (std::size_t h = 0; h < shape.heads; ++h) attention_head(shape, s, h, q, k, v, out, probs);
  }
}

template <typename T>
void attention_backward(const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  std::vector<T> scratch;
  for (std::size_t s = 0; s < shape.segments; ++s) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      attention_head_backward(shape, s, h, q, k, v, probs, dout, dq, dk, dv, scratch);
    }
  }
}

}  // namespace reference

void set_thread_limit(int threads) {
  g_thread_limit = threads;
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

int thread_limit() {
#ifdef _OPENMP
  return g_thread_limit > 0 ? g_thread_limit : omp_get_max_threads();
#else
  return 1;
#endif
}

#define STYLEDIFF_INSTANTIATE_KERNELS(T)                                                          \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);    \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void attention_forward<T>(const AttentionShape&, const T*, const T*, const T*, T*,   \
                                     T*);                                                       \
  template void attention_backward<T>(const AttentionShape&, const T*, const T*, const T*,      \
                                      const T*, const T*, T*, T*, T*);                          \
  template void reference::gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,  \
                                   T*, bool);                                                   \
  template void reference::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*,         \
                                      const T*, T*, bool);                                      \
  template void reference::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*,         \
                                      const T*, T*, bool);                                      \
  template void reference::attention_forward<T>(const AttentionShape&, const T*, const T*,      \
                                                const T*, T*, T*);                              \
  template void reference::attention_backward<T>(const AttentionShape&, const T*, const T*,     \
                                                 const T*, const T*, const T*, T*, T*, T*);

STYLEDIFF_INSTANTIATE_KERNELS(float)
STYLEDIFF_INSTANTIATE_KERNELS(double)

}  // namespace stylediff::kernels
