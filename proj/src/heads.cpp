#include "xlearner/heads.hpp"

#include "xlearner/errors.hpp"

namespace xl {

std::string_view to_string(LossKind k) { return k == LossKind::multiclass_ce ? "multiclass-ce" : "per-pixel-ce"; }

LossKind loss_kind_from_string(std::string_view s) {
    if (s == "multiclass-ce") return LossKind::multiclass_ce;
    if (s == "per-pixel-ce") return LossKind::per_pixel_ce;
    throw ValidationError("unknown loss kind '" + std::string(s) + "'");
}

template <class T>
Head<T>::Head(const HeadSpec& spec, std::size_t in_channels, std::size_t out_h, std::size_t out_w, std::uint64_t seed)
    : spec_(spec), out_h_(out_h), out_w_(out_w) {
    Rng rng(derive_seed(seed, "head"));
    if (spec.kind == LossKind::multiclass_ce)
        linear_ = nn::Linear<T>(in_channels, spec.num_classes, rng);
    else
        conv_ = nn::Conv2d<T>(in_channels, spec.num_classes, 1, 1, 0, true, rng);
}

template <class T>
Head<T> Head<T>::clone() const {
    Head h;
    h.spec_ = spec_;
    h.out_h_ = out_h_;
    h.out_w_ = out_w_;
    h.linear_ = linear_.clone();
    h.conv_ = conv_.clone();
    return h;
}

template <class T>
ag::Var<T> Head<T>::forward(const ag::Var<T>& feature) const {
    if (spec_.kind == LossKind::multiclass_ce) return linear_.forward(ops::global_avg_pool(feature));
    return ops::upsample_bilinear(conv_.forward(feature), out_h_, out_w_);
}

template <class T>
void Head<T>::collect(nn::ParamList<T>& list, const std::string& prefix) const {
    if (spec_.kind == LossKind::multiclass_ce)
        linear_.collect(list, prefix + ".linear");
    else
        conv_.collect(list, prefix + ".conv");
}

template <class T>
ag::Var<T> task_loss(LossKind kind, const ag::Var<T>& predictions, std::span<const std::int32_t> labels) {
    return kind == LossKind::multiclass_ce ? ops::cross_entropy(predictions, labels)
                                           : ops::pixel_cross_entropy(predictions, labels);
}

template class Head<float>;
template class Head<double>;
template ag::Var<float> task_loss(LossKind, const ag::Var<float>&, std::span<const std::int32_t>);
template ag::Var<double> task_loss(LossKind, const ag::Var<double>&, std::span<const std::int32_t>);

}  // namespace xl
