#include "xlearner/distill.hpp"

#include "xlearner/errors.hpp"

namespace xl {

template <class T>
GuidanceLayer<T>::GuidanceLayer(std::size_t student_channels, std::size_t teacher_channels, Rng& rng)
    : conv(student_channels, teacher_channels, 1, 1, 0, false, rng), norm(teacher_channels) {}

template <class T>
GuidanceLayer<T> GuidanceLayer<T>::clone() const {
    GuidanceLayer g;
    g.conv = conv.clone();
    g.norm = norm.clone();
    return g;
}

template <class T>
void GuidanceLayer<T>::collect(nn::ParamList<T>& list, const std::string& prefix) {
    conv.collect(list, prefix + ".conv");
    norm.collect(list, prefix + ".norm");
}

template <class T>
ag::Var<T> guidance_forward(GuidanceLayer<T>& g, const ag::Var<T>& student, nn::Mode mode) {
    if (student.shape().size() != 4 || student.shape()[1] != g.in_channels())
        throw ShapeError("guidance layer expects " + std::to_string(g.in_channels()) + " channels, got " +
                         shape_str(student.shape()));
    return nn::apply_norm(g.norm, g.conv.forward(student), mode);
}

namespace {

template <class T>
std::vector<ag::Var<T>> hint_terms(std::span<const Tensor<T>> teachers, const ag::Var<T>& student,
                                   std::span<GuidanceLayer<T>> guidance, nn::Mode mode) {
    if (teachers.size() != guidance.size())
        throw ShapeError("squeeze loss: " + std::to_string(teachers.size()) + " teachers but " +
                         std::to_string(guidance.size()) + " guidance layers");
    if (teachers.empty()) throw ShapeError("squeeze loss: no teacher features");
    std::vector<ag::Var<T>> terms;
    for (std::size_t t = 0; t < teachers.size(); ++t) {
        if (teachers[t].empty()) throw ShapeError("squeeze loss: missing teacher feature " + std::to_string(t));
        auto projected = guidance_forward(guidance[t], student, mode);
        if (projected.shape() != teachers[t].shape())
            throw ShapeError("squeeze loss: guided student " + shape_str(projected.shape()) + " vs teacher " +
                             shape_str(teachers[t].shape()));
        terms.push_back(ops::sum_squared_diff(projected, ag::Var<T>(teachers[t])));
    }
    return terms;
}

}  // namespace

template <class T>
ag::Var<T> squeeze_loss(std::span<const Tensor<T>> teachers, const ag::Var<T>& student,
                        std::span<GuidanceLayer<T>> guidance, nn::Mode mode) {
    auto terms = hint_terms(teachers, student, guidance, mode);
    return ops::scalar_sum<T>(terms);
}

template <class T>
ag::Var<T> squeeze_loss_normalized(std::span<const Tensor<T>> teachers, const ag::Var<T>& student,
                                   std::span<GuidanceLayer<T>> guidance, nn::Mode mode, double* raw) {
    auto terms = hint_terms(teachers, student, guidance, mode);
    double total = 0;
    for (std::size_t t = 0; t < terms.size(); ++t) {
        total += static_cast<double>(terms[t].item());
        terms[t] = ops::scale(terms[t], T(1) / static_cast<T>(teachers[t].numel()));
    }
    if (raw) *raw = total;
    return ops::scalar_sum<T>(terms);
}

template <class T>
ag::Var<T> pre_distill_hint_loss(const ag::Var<T>& student, const Tensor<T>& teacher, GuidanceLayer<T>& guidance,
                                 nn::Mode mode) {
    auto projected = guidance_forward(guidance, student, mode);
    if (projected.shape() != teacher.shape())
        throw ShapeError("hint loss: guided student " + shape_str(projected.shape()) + " vs teacher " +
                         shape_str(teacher.shape()));
    return ops::sum_squared_diff(projected, ag::Var<T>(teacher));
}

#define XL_INSTANTIATE(T)                                                                                    \
    template class GuidanceLayer<T>;                                                                         \
    template ag::Var<T> guidance_forward(GuidanceLayer<T>&, const ag::Var<T>&, nn::Mode);                   \
    template ag::Var<T> squeeze_loss(std::span<const Tensor<T>>, const ag::Var<T>&,                         \
                                     std::span<GuidanceLayer<T>>, nn::Mode);                                 \
    template ag::Var<T> squeeze_loss_normalized(std::span<const Tensor<T>>, const ag::Var<T>&,              \
                                                std::span<GuidanceLayer<T>>, nn::Mode, double*);             \
    template ag::Var<T> pre_distill_hint_loss(const ag::Var<T>&, const Tensor<T>&, GuidanceLayer<T>&, nn::Mode);
XL_INSTANTIATE(float)
XL_INSTANTIATE(double)
#undef XL_INSTANTIATE

}  // namespace xl
