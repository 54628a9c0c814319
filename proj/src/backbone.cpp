#include "xlearner/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "xlearner/errors.hpp"

namespace xl {

std::string_view to_string(BackboneFamily f) {
    return f == BackboneFamily::toy_conv ? "toy-conv" : "resnet50";
}

BackboneFamily backbone_family_from_string(std::string_view s) {
    if (s == "toy-conv") return BackboneFamily::toy_conv;
    if (s == "resnet50") return BackboneFamily::resnet50;
    throw ValidationError("unknown backbone family '" + std::string(s) + "'");
}

std::vector<std::size_t> scale_channels(std::span<const std::size_t> widths, double factor, std::size_t multiple) {
    if (!(factor > 0.0) || !std::isfinite(factor)) throw std::invalid_argument("scale_channels: factor must be > 0");
    if (multiple < 1) throw std::invalid_argument("scale_channels: multiple must be >= 1");
    std::vector<std::size_t> out;
    out.reserve(widths.size());
    for (std::size_t w : widths) {
        const auto units = static_cast<std::size_t>(std::floor(static_cast<double>(w) * factor / static_cast<double>(multiple)));
        const std::size_t scaled = units * multiple;
        if (scaled < multiple)
            throw ShapeError("scale_channels: width " + std::to_string(w) + " x " + std::to_string(factor) +
                             " is narrower than the channel multiple " + std::to_string(multiple));
        out.push_back(scaled);
    }
    return out;
}

std::vector<std::size_t> SubBackboneSpec::effective_channels() const {
    if (width_scale == 1.0) return stage_channels;
    return scale_channels(stage_channels, width_scale, channel_multiple);
}

std::vector<std::size_t> SubBackboneSpec::stage_strides() const {
    std::vector<std::size_t> s(depth());
    std::size_t f = 4;
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = f;
        f *= 2;
    }
    return s;
}

SubBackboneSpec resnet50_spec(double width_scale) {
    SubBackboneSpec s;
    s.family = BackboneFamily::resnet50;
    s.stage_channels = {256, 512, 1024, 2048};
    s.width_scale = width_scale;
    s.channel_multiple = 4;
    s.input_shape = {3, 224, 224};
    return s;
}

void validate_spec(const SubBackboneSpec& spec) {
    if (spec.depth() < 2) throw ShapeError("backbone needs at least 2 stages, got " + std::to_string(spec.depth()));
    for (std::size_t i = 1; i < spec.depth(); ++i)
        if (spec.stage_channels[i] <= spec.stage_channels[i - 1])
            throw ShapeError("stage_channels must be strictly increasing");
    if (spec.family == BackboneFamily::resnet50 && spec.depth() != 4)
        throw ShapeError("resnet50 family has exactly 4 stages");
    if (spec.input_shape[0] == 0) throw ShapeError("input needs at least one channel");
    const auto ch = spec.effective_channels();
    for (std::size_t c : ch)
        if (c < spec.channel_multiple) throw ShapeError("scaled stage width below channel multiple");
    const std::size_t last = spec.stage_strides().back();
    if (spec.input_shape[1] < last || spec.input_shape[2] < last || spec.input_shape[1] % last != 0 ||
        spec.input_shape[2] % last != 0)
        throw ShapeError("input " + std::to_string(spec.input_shape[1]) + "x" + std::to_string(spec.input_shape[2]) +
                         " too small or not divisible for " + std::to_string(spec.depth()) +
                         " stages (total stride " + std::to_string(last) + ")");
}

namespace detail {

template <class T>
ag::Var<T> Bottleneck<T>::forward(const ag::Var<T>& x, nn::Mode mode) {
    auto y = expand.forward(spatial.forward(reduce.forward(x, mode), mode), mode);
    auto skip = has_shortcut ? shortcut.forward(x, mode) : x;
    return ops::relu(ops::add(y, skip));
}

template <class T>
void Bottleneck<T>::collect(nn::ParamList<T>& list, const std::string& prefix) {
    reduce.collect(list, prefix + ".reduce");
    spatial.collect(list, prefix + ".spatial");
    expand.collect(list, prefix + ".expand");
    if (has_shortcut) shortcut.collect(list, prefix + ".shortcut");
}

template <class T>
Bottleneck<T> Bottleneck<T>::clone() const {
    Bottleneck b;
    b.reduce = reduce.clone();
    b.spatial = spatial.clone();
    b.expand = expand.clone();
    if (has_shortcut) b.shortcut = shortcut.clone();
    b.has_shortcut = has_shortcut;
    return b;
}

}  // namespace detail

template <class T>
SubBackbone<T> SubBackbone<T>::build(const SubBackboneSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    SubBackbone b;
    b.spec_ = spec;
    b.channels_ = spec.effective_channels();
    Rng rng(derive_seed(seed, "sub-backbone"));
    const std::size_t in_ch = spec.input_shape[0];

    if (spec.family == BackboneFamily::toy_conv) {
        // stem: 3x3/2 conv + 2x2/2 max pool; stage i: two 3x3 conv-norm-relu, stride 2 entering stages 2..D
        b.stem_conv_ = nn::ConvBnAct<T>(in_ch, b.channels_[0], 3, 2, 1, true, rng);
        b.pool_kernel_ = 2;
        b.pool_padding_ = 0;
        std::size_t prev = b.channels_[0];
        for (std::size_t i = 0; i < b.channels_.size(); ++i) {
            std::vector<detail::Block<T>> stage;
            const std::size_t c = b.channels_[i];
            stage.emplace_back(nn::ConvBnAct<T>(prev, c, 3, i == 0 ? 1 : 2, 1, true, rng));
            stage.emplace_back(nn::ConvBnAct<T>(c, c, 3, 1, 1, true, rng));
            b.stages_.push_back(std::move(stage));
            prev = c;
        }
    } else {
        // Torchvision-style bottlenecks (stride on the 3x3 conv). The 64-wide stem is
        // never scaled; the bottleneck inner width is a quarter of the stage output.
        constexpr std::array<std::size_t, 4> kBlocks{3, 4, 6, 3};
        constexpr std::size_t kStem = 64;
        b.stem_conv_ = nn::ConvBnAct<T>(in_ch, kStem, 7, 2, 3, true, rng);
        b.pool_kernel_ = 3;
        b.pool_padding_ = 1;
        std::size_t prev = kStem;
        for (std::size_t i = 0; i < 4; ++i) {
            const std::size_t out = b.channels_[i], mid = out / 4;
            std::vector<detail::Block<T>> stage;
            for (std::size_t blk = 0; blk < kBlocks[i]; ++blk) {
                const std::size_t stride = (blk == 0 && i > 0) ? 2 : 1;
                detail::Bottleneck<T> bn;
                bn.reduce = nn::ConvBnAct<T>(prev, mid, 1, 1, 0, true, rng);
                bn.spatial = nn::ConvBnAct<T>(mid, mid, 3, stride, 1, true, rng);
                bn.expand = nn::ConvBnAct<T>(mid, out, 1, 1, 0, false, rng);
                if (blk == 0) {
                    bn.shortcut = nn::ConvBnAct<T>(prev, out, 1, stride, 0, false, rng);
                    bn.has_shortcut = true;
                }
                stage.emplace_back(std::move(bn));
                prev = out;
            }
            b.stages_.push_back(std::move(stage));
        }
    }
    return b;
}

template <class T>
SubBackbone<T> SubBackbone<T>::clone() const {
    SubBackbone b;
    b.spec_ = spec_;
    b.channels_ = channels_;
    b.stem_conv_ = stem_conv_.clone();
    b.pool_kernel_ = pool_kernel_;
    b.pool_padding_ = pool_padding_;
    for (const auto& stage : stages_) {
        std::vector<detail::Block<T>> s;
        for (const auto& blk : stage)
            std::visit([&](const auto& v) { s.emplace_back(v.clone()); }, blk);
        b.stages_.push_back(std::move(s));
    }
    return b;
}

template <class T>
Shape SubBackbone<T>::stage_shape(std::size_t stage, std::size_t batch) const {
    const std::size_t f = spec_.stage_strides().at(stage);
    return {batch, channels_.at(stage), spec_.input_shape[1] / f, spec_.input_shape[2] / f};
}

template <class T>
ag::Var<T> SubBackbone<T>::stem(const ag::Var<T>& x, nn::Mode mode) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != spec_.input_shape[0] || s[2] != spec_.input_shape[1] || s[3] != spec_.input_shape[2])
        throw ShapeError("backbone input " + shape_str(s) + " does not match declared input shape (" +
                         std::to_string(spec_.input_shape[0]) + "," + std::to_string(spec_.input_shape[1]) + "," +
                         std::to_string(spec_.input_shape[2]) + ")");
    return ops::max_pool2d(stem_conv_.forward(x, mode), pool_kernel_, 2, pool_padding_);
}

template <class T>
ag::Var<T> SubBackbone<T>::stage(std::size_t index, const ag::Var<T>& x, nn::Mode mode) {
    ag::Var<T> y = x;
    for (auto& blk : stages_.at(index)) y = std::visit([&](auto& b) { return b.forward(y, mode); }, blk);
    return y;
}

template <class T>
std::vector<ag::Var<T>> SubBackbone<T>::forward(const ag::Var<T>& x, nn::Mode mode) {
    std::vector<ag::Var<T>> feats;
    feats.reserve(depth());
    ag::Var<T> y = stem(x, mode);
    for (std::size_t i = 0; i < depth(); ++i) {
        y = stage(i, y, mode);
        feats.push_back(y);
    }
    return feats;
}

template <class T>
void SubBackbone<T>::collect(nn::ParamList<T>& list, const std::string& prefix) {
    stem_conv_.collect(list, prefix + "stem");
    for (std::size_t i = 0; i < stages_.size(); ++i)
        for (std::size_t j = 0; j < stages_[i].size(); ++j) {
            const std::string p = prefix + "stage" + std::to_string(i + 1) + "." + std::to_string(j);
            std::visit([&](auto& b) { b.collect(list, p); }, stages_[i][j]);
        }
}

template class SubBackbone<float>;
template class SubBackbone<double>;

}  // namespace xl
