#include "xlearner/simd/kernels.hpp"

#include <vector>

namespace xl::simd::scalar {
namespace {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (beta == T(0)) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        } else if (beta != T(1)) {
            for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
            if (av == T(0)) continue;
            if (!trans_b) {
                const T* brow = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
            }
        }
    }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T squared_distance(const T* x, const T* y, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

template <class T>
void sgd_momentum(T* w, const T* g, T* buf, std::size_t n, T lr, T momentum, T weight_decay,
                  bool first) {
    for (std::size_t i = 0; i < n; ++i) {
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

}  // namespace xl::simd::scalar
