#include "xlearner/reconciliation.hpp"

#include <algorithm>
#include <sstream>

#include "xlearner/errors.hpp"

namespace xl {

std::string_view to_string(Topology t) {
    switch (t) {
        case Topology::shallow_to_deep: return "shallow-to-deep";
        case Topology::deep_to_shallow: return "deep-to-shallow";
        case Topology::none: return "none";
    }
    return "?";
}

Topology topology_from_string(std::string_view s) {
    if (s == "shallow-to-deep") return Topology::shallow_to_deep;
    if (s == "deep-to-shallow") return Topology::deep_to_shallow;
    if (s == "none") return Topology::none;
    throw ValidationError("unknown reconciliation topology '" + std::string(s) + "'");
}

std::string_view to_string(GammaKind k) {
    switch (k) {
        case GammaKind::gamma_a: return "gamma_a";
        case GammaKind::gamma_b: return "gamma_b";
        case GammaKind::gamma_c: return "gamma_c";
    }
    return "?";
}

std::uint64_t task_backbone_seed(std::uint64_t seed, std::string_view task_id) {
    return derive_seed(seed, std::string("backbone:") + std::string(task_id));
}

template <class T>
GammaTransform<T>::GammaTransform(GammaKind k, std::size_t in, std::size_t out, Rng& rng)
    : kind(k), in_channels(in), out_channels(out) {
    switch (kind) {
        case GammaKind::gamma_a:
            conv_ = nn::Conv2d<T>(in, out, 3, 2, 1, false, rng);
            norm_ = nn::BatchNorm2d<T>(out);
            has_norm_ = true;
            break;
        case GammaKind::gamma_b:
            conv_ = nn::Conv2d<T>(in, out, 1, 1, 0, false, rng);
            norm_ = nn::BatchNorm2d<T>(out);
            has_norm_ = true;
            break;
        case GammaKind::gamma_c:
            conv_ = nn::Conv2d<T>(in, out, 3, 1, 1, true, rng);
            break;
    }
}

template <class T>
GammaTransform<T> GammaTransform<T>::clone() const {
    GammaTransform g;
    g.kind = kind;
    g.in_channels = in_channels;
    g.out_channels = out_channels;
    g.conv_ = conv_.clone();
    g.norm_ = norm_.clone();
    g.has_norm_ = has_norm_;
    return g;
}

template <class T>
ag::Var<T> GammaTransform<T>::forward(const ag::Var<T>& x, nn::Mode mode) {
    if (x.shape().size() != 4 || x.shape()[1] != in_channels)
        throw ShapeError(std::string(to_string(kind)) + ": expected " + std::to_string(in_channels) +
                         " input channels, got " + shape_str(x.shape()));
    switch (kind) {
        case GammaKind::gamma_a: return ops::relu(nn::apply_norm(norm_, conv_.forward(x), mode));
        case GammaKind::gamma_b: return nn::apply_norm(norm_, conv_.forward(x), mode);
        case GammaKind::gamma_c: return conv_.forward(ops::upsample_nearest2x(x));
    }
    return x;
}

template <class T>
void GammaTransform<T>::zero_output() {
    if (has_norm_) {
        norm_.gamma.mutable_value().fill(T(0));
        norm_.beta.mutable_value().fill(T(0));
    } else {
        conv_.weight.mutable_value().fill(T(0));
        if (conv_.bias.defined()) conv_.bias.mutable_value().fill(T(0));
    }
}

template <class T>
void GammaTransform<T>::collect(nn::ParamList<T>& list, const std::string& prefix) {
    conv_.collect(list, prefix + ".conv");
    if (has_norm_) norm_.collect(list, prefix + ".norm");
}

template <class T>
Shape GammaTransform<T>::output_shape(const Shape& in) const {
    if (in.size() != 4 || in[1] != in_channels)
        throw ShapeError(std::string(to_string(kind)) + ": input " + shape_str(in) + " has wrong channel count");
    switch (kind) {
        case GammaKind::gamma_a: return {in[0], out_channels, (in[2] + 1) / 2, (in[3] + 1) / 2};
        case GammaKind::gamma_b: return {in[0], out_channels, in[2], in[3]};
        case GammaKind::gamma_c: return {in[0], out_channels, 2 * in[2], 2 * in[3]};
    }
    return in;
}

std::vector<GammaKind> chain_kinds(Topology topology, std::size_t j, std::size_t i) {
    std::vector<GammaKind> kinds;
    if (topology == Topology::shallow_to_deep) {
        if (j > i) throw ShapeError("shallow-to-deep links need source stage <= target stage");
        kinds.assign(i - j, GammaKind::gamma_a);
    } else if (topology == Topology::deep_to_shallow) {
        if (j < i) throw ShapeError("deep-to-shallow links need source stage >= target stage");
        kinds.assign(j - i, GammaKind::gamma_c);
    } else {
        throw ShapeError("topology 'none' has no links");
    }
    kinds.push_back(GammaKind::gamma_b);
    return kinds;
}

std::vector<LinkIndex> enumerate_links(Topology topology, std::size_t tasks, std::size_t depth) {
    std::vector<LinkIndex> out;
    if (topology == Topology::none) return out;
    for (std::size_t t = 0; t < tasks; ++t)
        for (std::size_t k = 0; k < tasks; ++k) {
            if (k == t) continue;
            for (std::size_t i = 0; i < depth; ++i) {
                if (topology == Topology::shallow_to_deep)
                    for (std::size_t j = 0; j <= i; ++j) out.push_back({k, t, j, i});
                else
                    for (std::size_t j = i; j < depth; ++j) out.push_back({k, t, j, i});
            }
        }
    return out;
}

template <class T>
std::string ReconciliationLink<T>::name() const {
    return std::to_string(source_task) + "->" + std::to_string(target_task) + ".s" + std::to_string(source_stage + 1) +
           "->s" + std::to_string(target_stage + 1);
}

template <class T>
ExpandedBackbone<T> ExpandedBackbone<T>::build(std::vector<std::string> task_ids,
                                               std::span<const SubBackboneSpec> specs, Topology topology,
                                               std::uint64_t seed) {
    if (specs.size() != task_ids.size())
        throw ShapeError("expanded backbone: " + std::to_string(task_ids.size()) + " tasks but " +
                         std::to_string(specs.size()) + " backbone specs");
    std::vector<SubBackbone<T>> backbones;
    for (std::size_t t = 0; t < task_ids.size(); ++t)
        backbones.push_back(SubBackbone<T>::build(specs[t], task_backbone_seed(seed, task_ids[t])));
    return join(std::move(task_ids), std::move(backbones), topology, seed);
}

template <class T>
ExpandedBackbone<T> ExpandedBackbone<T>::shared(std::vector<std::string> task_ids, const SubBackboneSpec& spec,
                                                std::uint64_t seed) {
    if (task_ids.empty()) throw ShapeError("expanded backbone needs at least one task");
    ExpandedBackbone e;
    e.task_ids_ = std::move(task_ids);
    e.backbones_.push_back(SubBackbone<T>::build(spec, task_backbone_seed(seed, "shared")));
    e.topology_ = Topology::none;
    e.shared_ = true;
    return e;
}

template <class T>
ExpandedBackbone<T> ExpandedBackbone<T>::join(std::vector<std::string> task_ids, std::vector<SubBackbone<T>> backbones,
                                              Topology topology, std::uint64_t seed) {
    if (task_ids.empty()) throw ShapeError("expanded backbone needs at least one task");
    if (backbones.size() != task_ids.size()) throw ShapeError("expanded backbone: one sub-backbone per task required");
    const std::size_t depth = backbones.front().depth();
    for (std::size_t t = 0; t < backbones.size(); ++t) {
        if (backbones[t].depth() != depth) throw ShapeError("sub-backbones must share the stage count D");
        for (std::size_t i = 0; i < depth; ++i) {
            const Shape a = backbones[t].stage_shape(i, 1), b = backbones.front().stage_shape(i, 1);
            if (a[2] != b[2] || a[3] != b[3])
                throw ShapeError("sub-backbone of task '" + task_ids[t] + "' has stage " + std::to_string(i + 1) +
                                 " resolution " + shape_str(a) + ", expected " + shape_str(b));
        }
    }
    ExpandedBackbone e;
    e.task_ids_ = std::move(task_ids);
    e.backbones_ = std::move(backbones);
    e.topology_ = e.task_ids_.size() > 1 ? topology : Topology::none;
    e.build_links(seed);
    return e;
}

template <class T>
void ExpandedBackbone<T>::build_links(std::uint64_t seed) {
    for (const LinkIndex& idx : enumerate_links(topology_, task_ids_.size(), depth())) {
        ReconciliationLink<T> link;
        link.source_task = idx.source_task;
        link.target_task = idx.target_task;
        link.source_stage = idx.source_stage;
        link.target_stage = idx.target_stage;
        Rng rng(derive_seed(seed, "link:" + link.name()));
        const auto& src = backbones_[idx.source_task];
        const auto& dst = backbones_[idx.target_task];
        std::size_t stage = idx.source_stage;
        Shape shape = src.stage_shape(stage, 1);
        for (GammaKind kind : chain_kinds(topology_, idx.source_stage, idx.target_stage)) {
            std::size_t out_ch;
            if (kind == GammaKind::gamma_a) {
                ++stage;
                out_ch = src.channels()[stage];
            } else if (kind == GammaKind::gamma_c) {
                --stage;
                out_ch = src.channels()[stage];
            } else {
                out_ch = dst.channels()[idx.target_stage];
            }
            link.chain.emplace_back(kind, shape[1], out_ch, rng);
            shape = link.chain.back().output_shape(shape);
        }
        const Shape expected = dst.stage_shape(idx.target_stage, 1);
        if (shape != expected)
            throw ShapeError("link (k=" + std::to_string(idx.source_task + 1) + ", t=" +
                             std::to_string(idx.target_task + 1) + ", j=" + std::to_string(idx.source_stage + 1) +
                             ", i=" + std::to_string(idx.target_stage + 1) + ") produces " + shape_str(shape) +
                             " but target stage is " + shape_str(expected));
        link.chain.back().zero_output();
        links_.push_back(std::move(link));
    }
}

template <class T>
ExpandedBackbone<T> ExpandedBackbone<T>::clone() const {
    ExpandedBackbone e;
    e.task_ids_ = task_ids_;
    for (const auto& b : backbones_) e.backbones_.push_back(b.clone());
    for (const auto& l : links_) {
        ReconciliationLink<T> c;
        c.source_task = l.source_task;
        c.target_task = l.target_task;
        c.source_stage = l.source_stage;
        c.target_stage = l.target_stage;
        for (const auto& g : l.chain) c.chain.push_back(g.clone());
        e.links_.push_back(std::move(c));
    }
    e.topology_ = topology_;
    e.shared_ = shared_;
    return e;
}

template <class T>
ReconciliationLink<T>* ExpandedBackbone<T>::find_link(std::size_t k, std::size_t t, std::size_t j, std::size_t i) {
    for (auto& l : links_)
        if (l.source_task == k && l.target_task == t && l.source_stage == j && l.target_stage == i) return &l;
    return nullptr;
}

template <class T>
FusedFeatures<T> ExpandedBackbone<T>::fused_forward(std::span<const ag::Var<T>> inputs, nn::Mode mode) {
    const std::size_t n_tasks = num_tasks(), d = depth();
    if (inputs.size() != n_tasks)
        throw ShapeError("fused_forward: expected one batch per task (" + std::to_string(n_tasks) + "), got " +
                         std::to_string(inputs.size()));
    for (std::size_t t = 0; t < n_tasks; ++t)
        if (!inputs[t].defined()) throw ShapeError("fused_forward: missing batch for task '" + task_ids_[t] + "'");

    FusedFeatures<T> out;
    out.raw.assign(n_tasks, std::vector<ag::Var<T>>(d));
    out.fused.assign(n_tasks, std::vector<ag::Var<T>>(d));

    // Link inputs, detached from the source sub-backbone's graph.
    std::vector<std::vector<ag::Var<T>>> sources(n_tasks, std::vector<ag::Var<T>>(d));
    if (topology_ == Topology::deep_to_shallow) {
        // Deeper source stages are not available yet in the joint pass; take them
        // from a separate pass of each (unfused) sub-backbone.
        ag::NoGradGuard no_grad;
        for (std::size_t k = 0; k < n_tasks; ++k) {
            auto feats = sub_backbone(k).forward(inputs[k], {mode.training, false});
            for (std::size_t j = 0; j < d; ++j) sources[k][j] = ag::detach(feats[j]);
        }
    }

    std::vector<ag::Var<T>> x(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) x[t] = sub_backbone(t).stem(inputs[t], mode);

    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t t = 0; t < n_tasks; ++t) {
            out.raw[t][i] = sub_backbone(t).stage(i, x[t], mode);
            if (topology_ == Topology::shallow_to_deep) sources[t][i] = ag::detach(out.raw[t][i]);
        }
        for (std::size_t t = 0; t < n_tasks; ++t) {
            std::vector<ag::Var<T>> terms{out.raw[t][i]};
            for (auto& link : links_)
                if (link.target_task == t && link.target_stage == i)
                    terms.push_back(link.apply(sources[link.source_task][link.source_stage], mode));
            out.fused[t][i] = terms.size() == 1 ? terms.front() : ops::sum<T>(terms);
            x[t] = out.fused[t][i];
        }
    }
    return out;
}

template <class T>
void ExpandedBackbone<T>::collect(nn::ParamList<T>& list) {
    if (shared_) {
        backbones_.front().collect(list, "backbone.shared.");
    } else {
        for (std::size_t t = 0; t < backbones_.size(); ++t) backbones_[t].collect(list, "backbone." + task_ids_[t] + ".");
    }
    for (auto& l : links_) {
        const std::string p = "link." + task_ids_[l.source_task] + "->" + task_ids_[l.target_task] + ".s" +
                              std::to_string(l.source_stage + 1) + "->s" + std::to_string(l.target_stage + 1);
        for (std::size_t g = 0; g < l.chain.size(); ++g) l.chain[g].collect(list, p + "." + std::to_string(g));
    }
}

template <class T>
nn::ParamList<T> ExpandedBackbone<T>::backbone_parameters(std::size_t task) {
    nn::ParamList<T> l;
    if (shared_)
        backbones_.front().collect(l, "backbone.shared.");
    else
        backbones_.at(task).collect(l, "backbone." + task_ids_.at(task) + ".");
    return l;
}

template <class T>
nn::ParamList<T> ExpandedBackbone<T>::link_parameters() {
    nn::ParamList<T> all = parameters(), out;
    for (auto& p : all.params)
        if (p.name.rfind("link.", 0) == 0) out.params.push_back(p);
    for (auto& b : all.buffers)
        if (b.name.rfind("link.", 0) == 0) out.buffers.push_back(b);
    return out;
}

template <class T>
std::string ExpandedBackbone<T>::describe(std::size_t batch) const {
    std::ostringstream os;
    os << "expanded_backbone tasks=" << num_tasks() << " depth=" << depth() << " topology=" << to_string(topology_)
       << " shared=" << (shared_ ? "true" : "false") << " links=" << links_.size() << "\n";
    for (std::size_t t = 0; t < backbones_.size(); ++t) {
        os << "sub_backbone " << (shared_ ? std::string("shared") : task_ids_[t]) << " channels=(";
        const auto& ch = backbones_[t].channels();
        for (std::size_t i = 0; i < ch.size(); ++i) os << (i ? "," : "") << ch[i];
        os << ")\n";
    }
    for (const auto& l : links_) {
        Shape in = backbones_[l.source_task].stage_shape(l.source_stage, batch);
        os << "link k=" << task_ids_[l.source_task] << " t=" << task_ids_[l.target_task] << " j=" << l.source_stage + 1
           << " i=" << l.target_stage + 1 << " chain=";
        Shape s = in;
        for (std::size_t g = 0; g < l.chain.size(); ++g) {
            os << (g ? "," : "") << to_string(l.chain[g].kind);
            s = l.chain[g].output_shape(s);
        }
        os << " in=" << shape_str(in) << " out=" << shape_str(s) << "\n";
    }
    return os.str();
}

template class GammaTransform<float>;
template class GammaTransform<double>;
template struct ReconciliationLink<float>;
template struct ReconciliationLink<double>;
template class ExpandedBackbone<float>;
template class ExpandedBackbone<double>;

}  // namespace xl
