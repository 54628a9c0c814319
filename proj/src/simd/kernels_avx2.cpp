// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.
#include "xlearner/simd/kernels.hpp"

#include <immintrin.h>

#include <vector>

namespace xl::simd::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
    static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d hi64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
    }
};

// Writes alpha*acc + beta*c without reading c when beta == 0.
template <class T>
inline void finish(T* c, typename Vec<T>::reg acc, T alpha, T beta) {
    using V = Vec<T>;
    auto r = V::mul(acc, V::set1(alpha));
    if (beta != T(0)) r = V::fmadd(V::load(c), V::set1(beta), r);
    V::store(c, r);
}

// C[m,n] = alpha * A[m,k] B[k,n] + beta * C, A and B contiguous row-major.
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b, T beta,
             T* c, std::size_t ldc) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    constexpr std::size_t NR = 2 * W;
    constexpr std::size_t MR = 4;

    std::size_t i = 0;
    for (; i + MR <= m; i += MR) {
        const T* a0 = a + (i + 0) * k;
        const T* a1 = a + (i + 1) * k;
        const T* a2 = a + (i + 2) * k;
        const T* a3 = a + (i + 3) * k;
        std::size_t j = 0;
        for (; j + NR <= n; j += NR) {
            auto c00 = V::zero(), c01 = V::zero(), c10 = V::zero(), c11 = V::zero();
            auto c20 = V::zero(), c21 = V::zero(), c30 = V::zero(), c31 = V::zero();
            for (std::size_t p = 0; p < k; ++p) {
                const T* brow = b + p * n + j;
                const auto b0 = V::load(brow);
                const auto b1 = V::load(brow + W);
                auto av = V::set1(a0[p]);
                c00 = V::fmadd(av, b0, c00);
                c01 = V::fmadd(av, b1, c01);
                av = V::set1(a1[p]);
                c10 = V::fmadd(av, b0, c10);
                c11 = V::fmadd(av, b1, c11);
                av = V::set1(a2[p]);
                c20 = V::fmadd(av, b0, c20);
                c21 = V::fmadd(av, b1, c21);
                av = V::set1(a3[p]);
                c30 = V::fmadd(av, b0, c30);
                c31 = V::fmadd(av, b1, c31);
            }
            finish(c + (i + 0) * ldc + j, c00, alpha, beta);
            finish(c + (i + 0) * ldc + j + W, c01, alpha, beta);
            finish(c + (i + 1) * ldc + j, c10, alpha, beta);
            finish(c + (i + 1) * ldc + j + W, c11, alpha, beta);
            finish(c + (i + 2) * ldc + j, c20, alpha, beta);
            finish(c + (i + 2) * ldc + j + W, c21, alpha, beta);
            finish(c + (i + 3) * ldc + j, c30, alpha, beta);
            finish(c + (i + 3) * ldc + j + W, c31, alpha, beta);
        }
        for (; j + W <= n; j += W) {
            auto c0 = V::zero(), c1 = V::zero(), c2 = V::zero(), c3 = V::zero();
            for (std::size_t p = 0; p < k; ++p) {
                const auto bv = V::load(b + p * n + j);
                c0 = V::fmadd(V::set1(a0[p]), bv, c0);
                c1 = V::fmadd(V::set1(a1[p]), bv, c1);
                c2 = V::fmadd(V::set1(a2[p]), bv, c2);
                c3 = V::fmadd(V::set1(a3[p]), bv, c3);
            }
            finish(c + (i + 0) * ldc + j, c0, alpha, beta);
            finish(c + (i + 1) * ldc + j, c1, alpha, beta);
            finish(c + (i + 2) * ldc + j, c2, alpha, beta);
            finish(c + (i + 3) * ldc + j, c3, alpha, beta);
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < MR; ++r) {
                const T* arow = a + (i + r) * k;
                T acc = 0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
                T* out = c + (i + r) * ldc + j;
                *out = beta == T(0) ? alpha * acc : alpha * acc + beta * *out;
            }
        }
    }
    for (; i < m; ++i) {
        const T* arow = a + i * k;
        std::size_t j = 0;
        for (; j + W <= n; j += W) {
            auto acc = V::zero();
            for (std::size_t p = 0; p < k; ++p) acc = V::fmadd(V::set1(arow[p]), V::load(b + p * n + j), acc);
            finish(c + i * ldc + j, acc, alpha, beta);
        }
        for (; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
            T* out = c + i * ldc + j;
            *out = beta == T(0) ? alpha * acc : alpha * acc + beta * *out;
        }
    }
}

template <class T>
void pack(bool trans, std::size_t rows, std::size_t cols, const T* src, std::size_t ld,
          std::vector<T>& dst) {
    dst.resize(rows * cols);
    if (!trans) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q) dst[r * cols + q] = src[r * ld + q];
    } else {
        // op(src) = src^T; src is cols x rows with leading dim ld.
        for (std::size_t q = 0; q < cols; ++q)
            for (std::size_t r = 0; r < rows; ++r) dst[r * cols + q] = src[q * ld + r];
    }
}

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
    if (m == 0 || n == 0) return;
    thread_local std::vector<T> pa, pb;
    const T* ap = a;
    const T* bp = b;
    if (trans_a || lda != k) {
        pack(trans_a, m, k, a, lda, pa);
        ap = pa.data();
    }
    if (trans_b || ldb != n) {
        pack(trans_b, k, n, b, ldb, pb);
        bp = pb.data();
    }
    gemm_nn(m, n, k, alpha, ap, bp, beta, c, ldc);
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    auto acc0 = V::zero(), acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
        acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
    }
    T acc = V::hsum(V::add(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    const auto av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T squared_distance(const T* x, const T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    auto acc0 = V::zero(), acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        const auto d0 = V::sub(V::load(x + i), V::load(y + i));
        const auto d1 = V::sub(V::load(x + i + W), V::load(y + i + W));
        acc0 = V::fmadd(d0, d0, acc0);
        acc1 = V::fmadd(d1, d1, acc1);
    }
    T acc = V::hsum(V::add(acc0, acc1));
    for (; i < n; ++i) {
        const T d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

template <class T>
void sgd_momentum(T* w, const T* g, T* buf, std::size_t n, T lr, T momentum, T weight_decay,
                  bool first) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    const auto wd = V::set1(weight_decay);
    const auto mom = V::set1(momentum);
    const auto neg_lr = V::set1(-lr);
    std::size_t i = 0;
    for (; i + W <= n; i += W) {
        const auto wv = V::load(w + i);
        const auto d = V::fmadd(wd, wv, V::load(g + i));
        const auto b = first ? d : V::fmadd(mom, V::load(buf + i), d);
        V::store(buf + i, b);
        V::store(w + i, V::fmadd(neg_lr, b, wv));
    }
    for (; i < n; ++i) {
        const T d = g[i] + weight_decay * w[i];
        buf[i] = first ? d : momentum * buf[i] + d;
        w[i] -= lr * buf[i];
    }
}

template <class T>
constexpr KernelTable<T> kTable{&gemm<T>, &dot<T>, &axpy<T>, &squared_distance<T>,
                                &sgd_momentum<T>};

}  // namespace

template <class T>
const KernelTable<T>& table() {
    return kTable<T>;
}

template const KernelTable<float>& table<float>();
template const KernelTable<double>& table<double>();

}  // namespace xl::simd::avx2
