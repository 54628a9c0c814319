#include "xlearner/tensor.hpp"

#include <cmath>
#include <cstring>

namespace xl {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() &&
           (a.numel() == 0 || std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0);
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("max_abs_diff: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    T m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace xl
