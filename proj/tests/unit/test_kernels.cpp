#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "xlearner/rng.hpp"
#include "xlearner/simd/kernels.hpp"

using namespace xl;
using simd::Isa;

namespace {

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
    return v;
}

template <class T>
void check_gemm_equivalence(T tol) {
    if (!simd::isa_supported(Isa::avx2)) return;
    const auto& ref = simd::kernels<T>(Isa::scalar);
    const auto& fast = simd::kernels<T>(Isa::avx2);
    Rng rng(7);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = 1 + rng.below(23), n = 1 + rng.below(41), k = 1 + rng.below(37);
        const bool ta = rng.below(2), tb = rng.below(2);
        const T beta = trial % 3 == 0 ? T(0) : T(0.5);
        auto a = random_vec<T>(m * k, rng), b = random_vec<T>(k * n, rng), c0 = random_vec<T>(m * n, rng);
        auto c1 = c0;
        ref.gemm(ta, tb, m, n, k, T(1.5), a.data(), ta ? m : k, b.data(), tb ? k : n, beta, c0.data(), n);
        fast.gemm(ta, tb, m, n, k, T(1.5), a.data(), ta ? m : k, b.data(), tb ? k : n, beta, c1.data(), n);
        for (std::size_t i = 0; i < m * n; ++i) REQUIRE(c0[i] == doctest::Approx(c1[i]).epsilon(tol));
    }
}

}  // namespace

TEST_CASE("scalar gemm matches a triple loop") {
    const auto& k = simd::kernels<double>(Isa::scalar);
    // A 2x3, B 3x2
    const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{7, 8, 9, 10, 11, 12};
    std::vector<double> c(4, 0.0);
    k.gemm(false, false, 2, 2, 3, 1.0, a.data(), 3, b.data(), 2, 0.0, c.data(), 2);
    CHECK(c == std::vector<double>{58, 64, 139, 154});
    // A^T B^T with the same storage: (3x2)^T... use transposed views
    std::vector<double> d(9, 0.0);
    k.gemm(true, true, 3, 3, 2, 1.0, a.data(), 3, b.data(), 2, 0.0, d.data(), 3);
    // op(A) = A^T (3x2), op(B) = B^T (2x3)
    CHECK(d[0] == 1 * 7 + 4 * 8);
    CHECK(d[4] == 2 * 9 + 5 * 10);
}

TEST_CASE("avx2 gemm agrees with scalar reference") {
    check_gemm_equivalence<float>(1e-5f);
    check_gemm_equivalence<double>(1e-12);
}

TEST_CASE("avx2 reductions and updates agree with scalar reference") {
    if (!simd::isa_supported(Isa::avx2)) return;
    Rng rng(3);
    for (std::size_t n : {0u, 1u, 7u, 8u, 15u, 16u, 33u, 1000u}) {
        auto x = random_vec<double>(n, rng), y = random_vec<double>(n, rng);
        const auto& s = simd::kernels<double>(Isa::scalar);
        const auto& v = simd::kernels<double>(Isa::avx2);
        CHECK(s.dot(x.data(), y.data(), n) == doctest::Approx(v.dot(x.data(), y.data(), n)).epsilon(1e-12));
        CHECK(s.squared_distance(x.data(), y.data(), n) ==
              doctest::Approx(v.squared_distance(x.data(), y.data(), n)).epsilon(1e-12));
        auto y1 = y, y2 = y;
        s.axpy(0.3, x.data(), y1.data(), n);
        v.axpy(0.3, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

        auto w1 = x, w2 = x, b1 = y, b2 = y;
        for (bool first : {true, false}) {
            s.sgd_momentum(w1.data(), y.data(), b1.data(), n, 0.2, 0.9, 1e-4, first);
            v.sgd_momentum(w2.data(), y.data(), b2.data(), n, 0.2, 0.9, 1e-4, first);
        }
        for (std::size_t i = 0; i < n; ++i) CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-14));
    }
}

TEST_CASE("sgd kernel: zero gradient shrinks weights by exactly (1 - lr*wd)") {
    for (Isa isa : {Isa::scalar, Isa::avx2}) {
        if (!simd::isa_supported(isa)) continue;
        std::vector<double> w{1.0, -2.0, 0.5, 3.0, 4.0}, g(5, 0.0), buf(5, 0.0);
        simd::kernels<double>(isa).sgd_momentum(w.data(), g.data(), buf.data(), 5, 0.2, 0.9, 1e-4, true);
        CHECK(w[0] == 1.0 - 0.2 * 1e-4 * 1.0);
        CHECK(w[1] == -2.0 - 0.2 * 1e-4 * -2.0);
    }
}

TEST_CASE("force_isa rejects unsupported targets and round-trips") {
    const Isa before = simd::active_isa();
    simd::force_isa(Isa::scalar);
    CHECK(simd::active_isa() == Isa::scalar);
    if (simd::isa_supported(Isa::avx2)) {
        simd::force_isa(Isa::avx2);
        CHECK(simd::active_isa() == Isa::avx2);
    } else {
        CHECK_THROWS_AS(simd::force_isa(Isa::avx2), std::invalid_argument);
    }
    simd::force_isa(before);
}
