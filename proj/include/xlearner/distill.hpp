#pragma once

// Hint-distillation building blocks: guidance layers projecting a student
// feature into a teacher's feature space, and the squared-error hint losses.

#include <span>
#include <string>
#include <vector>

#include "xlearner/nn.hpp"

namespace xl {

// 1x1 conv (no bias) followed by batch norm.
template <class T>
class GuidanceLayer {
public:
    GuidanceLayer() = default;
    GuidanceLayer(std::size_t student_channels, std::size_t teacher_channels, Rng& rng);
    GuidanceLayer(GuidanceLayer&&) noexcept = default;
    GuidanceLayer& operator=(GuidanceLayer&&) noexcept = default;
    GuidanceLayer clone() const;

    void collect(nn::ParamList<T>& list, const std::string& prefix);

    std::size_t in_channels() const { return conv.in_channels; }
    std::size_t out_channels() const { return conv.out_channels; }

    nn::Conv2d<T> conv;
    nn::BatchNorm2d<T> norm;
};

// Norm(Conv(student)). Throws ShapeError on a channel mismatch.
template <class T>
ag::Var<T> guidance_forward(GuidanceLayer<T>& g, const ag::Var<T>& student, nn::Mode mode);

// sum_t |teacher_t - G_t(student)|^2 over every element, with one guidance
// layer per teacher. Teachers enter as constants.
template <class T>
ag::Var<T> squeeze_loss(std::span<const Tensor<T>> teachers, const ag::Var<T>& student,
                        std::span<GuidanceLayer<T>> guidance, nn::Mode mode);

// Same terms, each divided by its element count, for optimization at a
// scale independent of feature size. `raw` receives the unnormalized sum.
template <class T>
ag::Var<T> squeeze_loss_normalized(std::span<const Tensor<T>> teachers, const ag::Var<T>& student,
                                   std::span<GuidanceLayer<T>> guidance, nn::Mode mode, double* raw = nullptr);

// Single-teacher hint term: |teacher - G(student)|^2.
template <class T>
ag::Var<T> pre_distill_hint_loss(const ag::Var<T>& student, const Tensor<T>& teacher, GuidanceLayer<T>& guidance,
                                 nn::Mode mode);

}  // namespace xl
