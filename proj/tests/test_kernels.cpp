#include <doctest.h>

#include <cmath>
#include <vector>

#include "stylediff/kernels.hpp"
#include "stylediff/random.hpp"

using namespace stylediff;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return normal_vector<float>(rng, n);
}

struct Dims {
  std::size_t m, n, k;
};

const Dims kShapes[] = {{1, 1, 1}, {3, 5, 7}, {4, 64, 64}, {17, 33, 9}, {64, 48, 130}};

}  // namespace

TEST_CASE("parallel gemm variants match the serial reference bit for bit") {
  for (const auto& s : kShapes) {
    for (bool accumulate : {false, true}) {
      const auto a = random_values(s.m * s.k, 1);
      const auto b = random_values(s.k * s.n, 2);
      const auto c0 = random_values(s.m * s.n, 3);
      auto c_fast = c0, c_ref = c0;
      kernels::gemm(s.m, s.n, s.k, a.data(), b.data(), c_fast.data(), accumulate);
      kernels::reference::gemm(s.m, s.n, s.k, a.data(), b.data(), c_ref.data(), accumulate);
      CHECK(c_fast == c_ref);

      const auto bt = random_values(s.n * s.k, 4);
      c_fast = c_ref = c0;
      kernels::gemm_nt(s.m, s.n, s.k, a.data(), bt.data(), c_fast.data(), accumulate);
      kernels::reference::gemm_nt(s.m, s.n, s.k, a.data(), bt.data(), c_ref.data(), accumulate);
      CHECK(c_fast == c_ref);

      const auto at = random_values(s.k * s.m, 5);
      c_fast = c_ref = c0;
      kernels::gemm_tn(s.m, s.n, s.k, at.data(), b.data(), c_fast.data(), accumulate);
      kernels::reference::gemm_tn(s.m, s.n, s.k, at.data(), b.data(), c_ref.data(), accumulate);
      CHECK(c_fast == c_ref);
    }
  }
}

TEST_CASE("gemm agrees with a double-precision triple loop") {
  const std::size_t m = 5, n = 6, k = 7;
  const auto a = random_values(m * k, 6);
  const auto b = random_values(k * n, 7);
  std::vector<float> c(m * n);
  kernels::gemm(m, n, k, a.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += double(a[i * k + p]) * double(b[p * n + j]);
      CHECK(c[i * n + j] == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}

TEST_CASE("a single row through gemm equals the same row inside a batch") {
  const std::size_t m = 9, n = 11, k = 13;
  const auto a = random_values(m * k, 8);
  const auto b = random_values(k * n, 9);
  std::vector<float> batch(m * n), single(n);
  kernels::gemm(m, n, k, a.data(), b.data(), batch.data(), false);
  for (std::size_t r = 0; r < m; ++r) {
    kernels::gemm(1, n, k, a.data() + r * k, b.data(), single.data(), false);
    CHECK(std::equal(single.begin(), single.end(), batch.begin() + r * n));
  }
}

TEST_CASE("attention kernels match the reference and rows of weights sum to one") {
  kernels::AttentionShape shape{3, 4, 6, 2, 8};
  const auto q = random_values(shape.segments * shape.query_len * shape.model_dim, 10);
  const auto k = random_values(shape.segments * shape.key_len * shape.model_dim, 11);
  const auto v = random_values(shape.segments * shape.key_len * shape.model_dim, 12);
  std::vector<float> out_fast(q.size()), out_ref(q.size());
  std::vector<float> p_fast(shape.probs_size()), p_ref(shape.probs_size());
  kernels::attention_forward(shape, q.data(), k.data(), v.data(), out_fast.data(), p_fast.data());
  kernels::reference::attention_forward(shape, q.data(), k.data(), v.data(), out_ref.data(), p_ref.data());
  CHECK(out_fast == out_ref);
  CHECK(p_fast == p_ref);
  for (std::size_t row = 0; row < shape.probs_size() / shape.key_len; ++row) {
    double s = 0;
    for (std::size_t j = 0; j < shape.key_len; ++j) {
      const float w = p_fast[row * shape.key_len + j];
      CHECK(w >= 0.0f);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  const auto dout = random_values(q.size(), 13);
  std::vector<float> dq_f(q.size()), dk_f(k.size()), dv_f(v.size());
  std::vector<float> dq_r(q.size()), dk_r(k.size()), dv_r(v.size());
  kernels::attention_backward(shape, q.data(), k.data(), v.data(), p_fast.data(), dout.data(), dq_f.data(),
                              dk_f.data(), dv_f.data());
  kernels::reference::attention_backward(shape, q.data(), k.data(), v.data(), p_ref.data(), dout.data(),
                                         dq_r.data(), dk_r.data(), dv_r.data());
  CHECK(dq_f == dq_r);
  CHECK(dk_f == dk_r);
  CHECK(dv_f == dv_r);
}

TEST_CASE("kernel results do not depend on the thread limit") {
  const std::size_t m = 37, n = 29, k = 41;
  const auto a = random_values(m * k, 14);
  const auto b = random_values(k * n, 15);
  const int before = kernels::thread_limit();
  std::vector<float> c1(m * n), c2(m * n);
  kernels::set_thread_limit(1);
  kernels::gemm(m, n, k, a.data(), b.data(), c1.data(), false);
  kernels::set_thread_limit(4);
  kernels::gemm(m, n, k, a.data(), b.data(), c2.data(), false);
  kernels::set_thread_limit(before);
  CHECK(c1 == c2);
}
