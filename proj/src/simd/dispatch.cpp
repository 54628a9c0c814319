#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "xlearner/simd/kernels.hpp"

namespace xl::simd {
namespace {

Isa initial_isa() {
    if (const char* env = std::getenv("XL_ISA")) {
        const std::string v(env);
        if (v == "scalar") return Isa::scalar;
        if (v == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
    }
    return detect_isa();
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2:
#if defined(XL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

Isa detect_isa() { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (!isa_supported(isa))
        throw std::invalid_argument("ISA not supported on this machine: " + std::string(isa_name(isa)));
    current().store(isa, std::memory_order_relaxed);
}

template <class T>
const KernelTable<T>& kernels(Isa isa) {
#if defined(XL_HAVE_AVX2)
    if (isa == Isa::avx2) return avx2::table<T>();
#else
    (void)isa;
#endif
    return scalar::table<T>();
}

template const KernelTable<float>& kernels<float>(Isa);
template const KernelTable<double>& kernels<double>(Isa);

}  // namespace xl::simd
