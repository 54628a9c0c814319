#include "xlearner/nn.hpp"

#include <cmath>

namespace xl::nn {

template <class T>
Tensor<T> glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <class T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride_,
                  std::size_t padding_, bool with_bias, Rng& rng)
    : in_channels(in), out_channels(out), kernel(kernel_size), stride(stride_), padding(padding_) {
    const std::size_t rf = kernel * kernel;
    weight = Var<T>::parameter(glorot_uniform<T>({out, in, kernel, kernel}, in * rf, out * rf, rng));
    if (with_bias) bias = Var<T>::parameter(Tensor<T>({out}, T(0)));
}

template <class T>
void Conv2d<T>::collect(ParamList<T>& list, const std::string& prefix) const {
    list.add(prefix + ".weight", weight, ParamRole::weight);
    if (bias.defined()) list.add(prefix + ".bias", bias, ParamRole::bias);
}

template <class T>
Conv2d<T> Conv2d<T>::clone() const {
    Conv2d c;
    c.in_channels = in_channels;
    c.out_channels = out_channels;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = padding;
    c.weight = clone_param(weight);
    c.bias = clone_param(bias);
    return c;
}

template <class T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : gamma(Var<T>::parameter(Tensor<T>({channels}, T(1)))),
      beta(Var<T>::parameter(Tensor<T>({channels}, T(0)))),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)) {}

template <class T>
void BatchNorm2d<T>::collect(ParamList<T>& list, const std::string& prefix) {
    list.add(prefix + ".weight", gamma, ParamRole::norm);
    list.add(prefix + ".bias", beta, ParamRole::norm);
    list.add_buffer(prefix + ".running_mean", running_mean);
    list.add_buffer(prefix + ".running_var", running_var);
}

template <class T>
BatchNorm2d<T> BatchNorm2d<T>::clone() const {
    BatchNorm2d b;
    b.gamma = clone_param(gamma);
    b.beta = clone_param(beta);
    b.running_mean = running_mean;
    b.running_var = running_var;
    return b;
}

template <class T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng) : in_features(in), out_features(out) {
    weight = Var<T>::parameter(glorot_uniform<T>({out, in}, in, out, rng));
    bias = Var<T>::parameter(Tensor<T>({out}, T(0)));
}

template <class T>
void Linear<T>::collect(ParamList<T>& list, const std::string& prefix) const {
    list.add(prefix + ".weight", weight, ParamRole::weight);
    list.add(prefix + ".bias", bias, ParamRole::bias);
}

template <class T>
Linear<T> Linear<T>::clone() const {
    Linear l;
    l.in_features = in_features;
    l.out_features = out_features;
    l.weight = clone_param(weight);
    l.bias = clone_param(bias);
    return l;
}

template Tensor<float> glorot_uniform<float>(const Shape&, std::size_t, std::size_t, Rng&);
template Tensor<double> glorot_uniform<double>(const Shape&, std::size_t, std::size_t, Rng&);
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace xl::nn
