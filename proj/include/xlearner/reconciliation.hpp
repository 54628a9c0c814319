#pragma once

// Cross-task, cross-layer reconciliation links and the expanded backbone.
//
// The fused feature of task t at stage i is
//     F[t][i] = E[t][i] + sum_{k != t} sum_{j in links(k->t, ->i)} chain(stopgrad(E[k][j]))
// and F[t][i] (not E[t][i]) feeds stage i+1 of task t. Link inputs are
// detached, so no loss ever reaches another task's sub-backbone.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xlearner/backbone.hpp"

namespace xl {

enum class Topology { shallow_to_deep, deep_to_shallow, none };

std::string_view to_string(Topology t);
Topology topology_from_string(std::string_view s);

enum class GammaKind {
    gamma_a,  // 3x3 stride-2 conv + norm + ReLU: halves resolution
    gamma_b,  // 1x1 conv + norm: keeps resolution, maps channels
    gamma_c,  // nearest 2x upsample + 3x3 conv: doubles resolution
};

std::string_view to_string(GammaKind k);

template <class T>
class GammaTransform {
public:
    GammaTransform() = default;
    GammaTransform(GammaKind kind, std::size_t in_channels, std::size_t out_channels, Rng& rng);
    GammaTransform(GammaTransform&&) noexcept = default;
    GammaTransform& operator=(GammaTransform&&) noexcept = default;
    GammaTransform clone() const;

    ag::Var<T> forward(const ag::Var<T>& x, nn::Mode mode);
    // Makes the transform output exactly zero while keeping it trainable.
    void zero_output();
    void collect(nn::ParamList<T>& list, const std::string& prefix);

    // Output shape for an input shape.
    Shape output_shape(const Shape& in) const;

    GammaKind kind = GammaKind::gamma_b;
    std::size_t in_channels = 0, out_channels = 0;

private:
    nn::Conv2d<T> conv_;
    nn::BatchNorm2d<T> norm_;
    bool has_norm_ = false;
};

template <class T>
struct ReconciliationLink {
    std::size_t source_task = 0, target_task = 0;  // k, t
    std::size_t source_stage = 0, target_stage = 0;  // j, i (0-based)
    std::vector<GammaTransform<T>> chain;

    ag::Var<T> apply(const ag::Var<T>& x, nn::Mode mode) {
        ag::Var<T> y = x;
        for (auto& g : chain) y = g.forward(y, mode);
        return y;
    }
    std::string name() const;
};

// Expected chain kinds for a link: resolution steps first, channel map last.
std::vector<GammaKind> chain_kinds(Topology topology, std::size_t source_stage, std::size_t target_stage);

// All (k, t, j, i) index tuples of a topology, in construction order.
struct LinkIndex {
    std::size_t source_task, target_task, source_stage, target_stage;
    friend bool operator==(const LinkIndex&, const LinkIndex&) = default;
};
std::vector<LinkIndex> enumerate_links(Topology topology, std::size_t tasks, std::size_t depth);

template <class T>
struct FusedFeatures {
    std::vector<std::vector<ag::Var<T>>> raw;    // E[t][i]
    std::vector<std::vector<ag::Var<T>>> fused;  // F[t][i]
};

template <class T>
class ExpandedBackbone {
public:
    // One sub-backbone per task, joined per `topology`. With `shared` a single
    // backbone serves every task and there are no links (hard-sharing).
    static ExpandedBackbone build(std::vector<std::string> task_ids, std::span<const SubBackboneSpec> specs,
                                  Topology topology, std::uint64_t seed);
    static ExpandedBackbone shared(std::vector<std::string> task_ids, const SubBackboneSpec& spec, std::uint64_t seed);
    // Joins existing sub-backbones (taking ownership).
    static ExpandedBackbone join(std::vector<std::string> task_ids, std::vector<SubBackbone<T>> backbones,
                                 Topology topology, std::uint64_t seed);

    ExpandedBackbone(ExpandedBackbone&&) noexcept = default;
    ExpandedBackbone& operator=(ExpandedBackbone&&) noexcept = default;
    ExpandedBackbone clone() const;

    std::size_t num_tasks() const { return task_ids_.size(); }
    std::size_t depth() const { return backbones_.front().depth(); }
    const std::vector<std::string>& task_ids() const { return task_ids_; }
    Topology topology() const { return topology_; }
    bool is_shared() const { return shared_; }

    SubBackbone<T>& sub_backbone(std::size_t task) { return backbones_.at(shared_ ? 0 : task); }
    std::size_t num_backbones() const { return backbones_.size(); }
    SubBackbone<T>& backbone_at(std::size_t index) { return backbones_.at(index); }
    std::vector<ReconciliationLink<T>>& links() { return links_; }
    const std::vector<ReconciliationLink<T>>& links() const { return links_; }
    ReconciliationLink<T>* find_link(std::size_t k, std::size_t t, std::size_t j, std::size_t i);

    // One input batch per task. Throws ShapeError on a missing batch.
    FusedFeatures<T> fused_forward(std::span<const ag::Var<T>> inputs, nn::Mode mode);

    void collect(nn::ParamList<T>& list);
    nn::ParamList<T> parameters() {
        nn::ParamList<T> l;
        collect(l);
        return l;
    }
    // Parameters of one task's sub-backbone, named as in parameters().
    nn::ParamList<T> backbone_parameters(std::size_t task);
    nn::ParamList<T> link_parameters();

    // Structured text: one line per link with indices, chain kinds and shapes.
    std::string describe(std::size_t batch = 1) const;

private:
    ExpandedBackbone() = default;
    void build_links(std::uint64_t seed);

    std::vector<std::string> task_ids_;
    std::vector<SubBackbone<T>> backbones_;
    std::vector<ReconciliationLink<T>> links_;
    Topology topology_ = Topology::none;
    bool shared_ = false;
};

}  // namespace xl

namespace xl {
// Seed used for a task's sub-backbone inside an expanded backbone built from `seed`.
std::uint64_t task_backbone_seed(std::uint64_t seed, std::string_view task_id);
}  // namespace xl
