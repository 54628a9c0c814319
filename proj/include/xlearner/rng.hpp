#pragma once

// Portable random numbers: std::mt19937_64 has a fully specified output
// sequence, but the std distributions do not, so sampling is done here from
// raw engine bits to keep datasets and initializations identical across
// standard libraries.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace xl {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives an independent stream seed from a parent seed and a label.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, std::uint64_t index = 0) {
    return splitmix64(splitmix64(parent ^ fnv1a64(label)) + index);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_ << ' ' << has_spare_ << ' ' << std::hexfloat << spare_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_ >> has_spare_;
        std::string spare;
        is >> spare;
        spare_ = std::strtod(spare.c_str(), nullptr);
        if (!is && !is.eof()) throw std::runtime_error("Rng::set_state: malformed state");
    }

    friend bool operator==(const Rng& a, const Rng& b) {
        return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ && (!a.has_spare_ || a.spare_ == b.spare_);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace xl
