#pragma once

// Dense compute kernels. Every kernel exists twice: a blocked, OpenMP-parallel
// version used by the networks, and a plain serial version under
// `kernels::reference` that the tests and benchmarks compare against.
//
// All matrices are row-major. Accumulation order over the inner dimension is
// ascending in both implementations, and each output element is owned by a
// single thread, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace stylediff::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// C[m x n] (+)= A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// Layout of a segmented multi-head attention call. Queries are stacked as
/// `segments * query_len` rows, keys/values as `segments * key_len` rows, and
/// attention never crosses a segment boundary.
struct AttentionShape {
  std::size_t segments = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  std::size_t model_dim = 1;

  std::size_t head_dim() const { return model_dim / heads; }
  std::size_t probs_size() const { return segments * heads * query_len * key_len; }
};

/// out = softmax(q k^T / sqrt(head_dim)) v per head and segment. `probs`
/// receives the attention weights (size `shape.probs_size()`).
template <typename T>
void attention_forward(const AttentionShape& shape, const T* q, const T* k, const T* v, T* out,
                       T* probs);

/// Accumulates gradients into dq, dk, dv (any of which may be null).
template <typename T>
void attention_backward(const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv);

namespace reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void attention_forward(const AttentionShape& shape, const T* q, const T* k, const T* v, T* out,
                       T* probs);
template <typename T>
void attention_backward(const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv);

}  // namespace reference

/// Caps the OpenMP team size; 0 leaves the runtime default.
void set_thread_limit(int threads);
int thread_limit();

}  // namespace stylediff::kernels
