#pragma once

// Task-specific prediction heads and per-task losses.

#include <cstdint>
#include <span>
#include <string>

#include "xlearner/nn.hpp"

namespace xl {

enum class LossKind { multiclass_ce, per_pixel_ce };

std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

struct HeadSpec {
    LossKind kind = LossKind::multiclass_ce;
    std::size_t num_classes = 4;
    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

// Classification: global average pool + linear.
// Segmentation: 1x1 conv + bilinear upsample to the input resolution.
template <class T>
class Head {
public:
    Head() = default;
    Head(const HeadSpec& spec, std::size_t in_channels, std::size_t out_h, std::size_t out_w, std::uint64_t seed);
    Head(Head&&) noexcept = default;
    Head& operator=(Head&&) noexcept = default;
    Head clone() const;

    ag::Var<T> forward(const ag::Var<T>& feature) const;
    void collect(nn::ParamList<T>& list, const std::string& prefix) const;
    const HeadSpec& spec() const { return spec_; }

private:
    HeadSpec spec_;
    std::size_t out_h_ = 0, out_w_ = 0;
    nn::Linear<T> linear_;
    nn::Conv2d<T> conv_;
};

// Mean cross-entropy (over batch, or over batch and pixels).
template <class T>
ag::Var<T> task_loss(LossKind kind, const ag::Var<T>& predictions, std::span<const std::int32_t> labels);

}  // namespace xl
