#pragma once

// Dense arithmetic kernels used by the tensor ops and optimizers.
//
// Every kernel has a portable scalar reference implementation and an AVX2+FMA
// implementation. The active table is picked once at startup from CPUID and can
// be pinned with XL_ISA=scalar|avx2 or force_isa(). Results of the two paths
// agree to rounding, not bitwise; a single process always uses one path.

#include <cstddef>
#include <string_view>

namespace xl::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// True when the CPU and the build both support `isa`.
bool isa_supported(Isa isa);

Isa detect_isa();
Isa active_isa();

// Throws std::invalid_argument if `isa` is not supported on this machine.
void force_isa(Isa isa);

template <class T>
struct KernelTable {
    // C[M,N] = alpha * op(A) * op(B) + beta * C, row-major with leading dims.
    void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
                 const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
                 std::size_t ldc);
    T (*dot)(const T* x, const T* y, std::size_t n);
    // y += alpha * x
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    // sum_i (x_i - y_i)^2
    T (*squared_distance)(const T* x, const T* y, std::size_t n);
    // d = g + wd * w; buf = momentum * buf + d (buf = d when first); w -= lr * buf
    void (*sgd_momentum)(T* w, const T* g, T* buf, std::size_t n, T lr, T momentum, T weight_decay,
                         bool first);
};

template <class T>
const KernelTable<T>& kernels(Isa isa);

template <class T>
const KernelTable<T>& active_kernels() {
    return kernels<T>(active_isa());
}

namespace scalar {
template <class T>
const KernelTable<T>& table();
}

#if defined(XL_HAVE_AVX2)
namespace avx2 {
template <class T>
const KernelTable<T>& table();
}
#endif

}  // namespace xl::simd
