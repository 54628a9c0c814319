#pragma once

// D-stage feature extractors: a small toy-conv family for training runs and
// the ResNet-50 bottleneck family for parameter-count verification.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xlearner/nn.hpp"

namespace xl {

enum class BackboneFamily { toy_conv, resnet50 };

std::string_view to_string(BackboneFamily f);
BackboneFamily backbone_family_from_string(std::string_view s);

struct SubBackboneSpec {
    BackboneFamily family = BackboneFamily::toy_conv;
    // Nominal stage output widths before width scaling.
    std::vector<std::size_t> stage_channels{8, 16, 32, 64};
    double width_scale = 1.0;
    std::size_t channel_multiple = 4;
    std::array<std::size_t, 3> input_shape{3, 64, 64};

    std::size_t depth() const { return stage_channels.size(); }
    // Stage widths actually built: scale_channels(stage_channels, width_scale, channel_multiple).
    std::vector<std::size_t> effective_channels() const;
    // Input-to-stage downsampling factor: 4 at stage 1, doubling per stage.
    std::vector<std::size_t> stage_strides() const;

    friend bool operator==(const SubBackboneSpec&, const SubBackboneSpec&) = default;
};

// floor(width * factor / multiple) * multiple per entry. Throws ShapeError when
// an entry falls below `multiple` and std::invalid_argument on bad factor/multiple.
std::vector<std::size_t> scale_channels(std::span<const std::size_t> widths, double factor, std::size_t multiple);

// Throws ShapeError describing the first violated constraint.
void validate_spec(const SubBackboneSpec& spec);

// Standard ResNet-50 layout: stage outputs (256, 512, 1024, 2048), input 3x224x224.
SubBackboneSpec resnet50_spec(double width_scale = 1.0);

namespace detail {

template <class T>
struct Bottleneck {
    nn::ConvBnAct<T> reduce, spatial, expand;
    nn::ConvBnAct<T> shortcut;  // only when has_shortcut
    bool has_shortcut = false;

    ag::Var<T> forward(const ag::Var<T>& x, nn::Mode mode);
    void collect(nn::ParamList<T>& list, const std::string& prefix);
    Bottleneck clone() const;
};

template <class T>
using Block = std::variant<nn::ConvBnAct<T>, Bottleneck<T>>;

}  // namespace detail

template <class T>
class SubBackbone {
public:
    // Deterministic in (spec, seed). Throws ShapeError for invalid specs,
    // including inputs too small for the stage strides.
    static SubBackbone build(const SubBackboneSpec& spec, std::uint64_t seed);

    SubBackbone(SubBackbone&&) noexcept = default;
    SubBackbone& operator=(SubBackbone&&) noexcept = default;
    SubBackbone clone() const;

    const SubBackboneSpec& spec() const { return spec_; }
    std::size_t depth() const { return stages_.size(); }
    const std::vector<std::size_t>& channels() const { return channels_; }
    std::vector<std::size_t> stage_strides() const { return spec_.stage_strides(); }
    // [batch, C_i, H_i, W_i] for the declared input shape.
    Shape stage_shape(std::size_t stage, std::size_t batch) const;

    ag::Var<T> stem(const ag::Var<T>& x, nn::Mode mode);
    ag::Var<T> stage(std::size_t index, const ag::Var<T>& x, nn::Mode mode);
    // Stem followed by all stages; returns the D stage outputs.
    std::vector<ag::Var<T>> forward(const ag::Var<T>& x, nn::Mode mode);

    void collect(nn::ParamList<T>& list, const std::string& prefix = "");
    nn::ParamList<T> parameters(const std::string& prefix = "") {
        nn::ParamList<T> l;
        collect(l, prefix);
        return l;
    }

private:
    SubBackbone() = default;

    SubBackboneSpec spec_;
    std::vector<std::size_t> channels_;
    nn::ConvBnAct<T> stem_conv_;
    std::size_t pool_kernel_ = 2, pool_padding_ = 0;
    std::vector<std::vector<detail::Block<T>>> stages_;
};

template <class T>
std::size_t count_parameters(SubBackbone<T>& backbone) {
    return backbone.parameters().count();
}

}  // namespace xl
