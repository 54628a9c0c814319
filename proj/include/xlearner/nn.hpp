#pragma once

// Parameterized layers and the named-parameter registry shared by every model.
//
// Layers hold ag::Var handles, which alias on copy; layers are therefore
// move-only and expose clone() for deep copies.

#include <cstdint>
#include <string>
#include <vector>

#include "xlearner/autograd.hpp"
#include "xlearner/ops.hpp"
#include "xlearner/rng.hpp"

namespace xl::nn {

using ag::Var;

// weight: conv/linear kernels (subject to pruning); bias and norm are exempt.
enum class ParamRole { weight, bias, norm };

template <class T>
struct ParamRef {
    std::string name;
    Var<T> var;
    ParamRole role;
};

template <class T>
struct BufferRef {
    std::string name;
    Tensor<T>* tensor;
};

template <class T>
struct ParamList {
    std::vector<ParamRef<T>> params;
    std::vector<BufferRef<T>> buffers;

    void add(std::string name, const Var<T>& v, ParamRole role) { params.push_back({std::move(name), v, role}); }
    void add_buffer(std::string name, Tensor<T>& t) { buffers.push_back({std::move(name), &t}); }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.var.numel();
        return n;
    }
    void append(ParamList&& other) {
        for (auto& p : other.params) params.push_back(std::move(p));
        for (auto& b : other.buffers) buffers.push_back(std::move(b));
    }
};

template <class T>
void zero_grads(ParamList<T>& list) {
    for (auto& p : list.params) p.var.zero_grad();
}

// BatchNorm behaviour for one forward pass.
struct Mode {
    bool training = true;
    bool track_stats = true;  // update running statistics when training

    static constexpr Mode train() { return {true, true}; }
    static constexpr Mode eval() { return {false, false}; }
};

template <class T>
Var<T> clone_param(const Var<T>& v) {
    return v.defined() ? Var<T>::parameter(v.value()) : Var<T>();
}

template <class T>
Tensor<T> glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, bool bias,
           Rng& rng);
    Conv2d(Conv2d&&) noexcept = default;
    Conv2d& operator=(Conv2d&&) noexcept = default;

    Var<T> forward(const Var<T>& x) const {
        return ops::conv2d(x, weight, bias, {stride, padding});
    }
    void collect(ParamList<T>& list, const std::string& prefix) const;
    Conv2d clone() const;

    std::size_t in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;
    Var<T> weight, bias;
};

template <class T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels);
    BatchNorm2d(BatchNorm2d&&) noexcept = default;
    BatchNorm2d& operator=(BatchNorm2d&&) noexcept = default;

    Var<T> forward(const Var<T>& x, Mode mode) {
        return ops::batch_norm(x, gamma, beta, mode.track_stats ? &running_mean : nullptr,
                               mode.track_stats ? &running_var : nullptr, {mode.training, 0.1, 1e-5});
    }
    // Inference mode needs the buffers even when not tracking.
    Var<T> forward_eval(const Var<T>& x) {
        return ops::batch_norm(x, gamma, beta, &running_mean, &running_var, {false, 0.1, 1e-5});
    }
    void collect(ParamList<T>& list, const std::string& prefix);
    BatchNorm2d clone() const;

    Var<T> gamma, beta;
    Tensor<T> running_mean, running_var;
};

template <class T>
Var<T> apply_norm(BatchNorm2d<T>& bn, const Var<T>& x, Mode mode) {
    return mode.training ? bn.forward(x, mode) : bn.forward_eval(x);
}

template <class T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);
    Linear(Linear&&) noexcept = default;
    Linear& operator=(Linear&&) noexcept = default;

    Var<T> forward(const Var<T>& x) const { return ops::linear(x, weight, bias); }
    void collect(ParamList<T>& list, const std::string& prefix) const;
    Linear clone() const;

    std::size_t in_features = 0, out_features = 0;
    Var<T> weight, bias;
};

// conv -> batch norm -> optional ReLU
template <class T>
class ConvBnAct {
public:
    ConvBnAct() = default;
    ConvBnAct(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, bool relu,
              Rng& rng)
        : conv(in, out, kernel, stride, padding, false, rng), bn(out), relu(relu) {}
    ConvBnAct(ConvBnAct&&) noexcept = default;
    ConvBnAct& operator=(ConvBnAct&&) noexcept = default;

    Var<T> forward(const Var<T>& x, Mode mode) {
        auto y = apply_norm(bn, conv.forward(x), mode);
        return relu ? ops::relu(y) : y;
    }
    void collect(ParamList<T>& list, const std::string& prefix) {
        conv.collect(list, prefix + ".conv");
        bn.collect(list, prefix + ".bn");
    }
    ConvBnAct clone() const {
        ConvBnAct c;
        c.conv = conv.clone();
        c.bn = bn.clone();
        c.relu = relu;
        return c;
    }

    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    bool relu = true;
};

}  // namespace xl::nn
