#pragma once

// Squeeze stage: condense an expanded backbone into one sub-backbone-sized
// student by multi-teacher hint distillation, or prune it in place
// (X-Learner_p). Also the reversed squeeze-then-expand order (X-Learner_r).

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xlearner/expansion.hpp"

namespace xl {

struct SqueezePlan {
    SqueezeMode mode = SqueezeMode::distill;
    SubBackboneSpec student_spec;
    std::vector<std::size_t> distill_stages;  // 0-based student/teacher stages
    double prune_sparsity = 0.5;
    ScheduleConfig schedule;
    std::string student_init = "fresh";
};

SqueezePlan make_squeeze_plan(const ExperimentConfig& config);

// Frozen teacher features for a normalized image batch, one per target.
using TeacherFn = std::function<std::vector<Tensor<float>>(const Tensor<float>& images)>;

struct DistillTarget {
    std::size_t stage = 0;     // student stage whose feature is projected
    std::size_t channels = 0;  // teacher feature channels
};

struct DistillRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;      // per-element normalized objective that is optimized
    double raw_loss = 0.0;  // sum of squared errors over all elements and teachers
};

struct DistillResult {
    SubBackbone<float> student;
    double initial_loss = 0.0, final_loss = 0.0;
};

// Batch from the union of all tasks' sources: task chosen proportionally to
// its total size, then source proportionally within the task.
Batch sample_union_batch(std::span<const TaskData> data, std::size_t batch_size, Rng& rng);

// Trains `student` and fresh guidance layers to match `teacher` on batches
// drawn by `sample`. Guidance layers are discarded afterwards.
DistillResult distill_student(const TeacherFn& teacher, std::span<const DistillTarget> targets,
                              SubBackbone<float> student, const std::function<Batch(Rng&)>& sample,
                              const ScheduleConfig& schedule, std::uint64_t seed,
                              const std::function<void(const DistillRecord&)>& on_step = {});

// Teacher features of an expanded backbone: every branch sees the same batch,
// normalization in inference mode, no graph recorded.
TeacherFn expanded_teacher(ExpandedBackbone<float>& teacher, std::span<const std::size_t> stages);

DistillResult distill_squeeze(ExpandedBackbone<float>& expanded, const SqueezePlan& plan,
                              std::span<const TaskData> data, std::uint64_t seed,
                              const std::function<void(const DistillRecord&)>& on_step = {});

// Keep flags per prunable tensor (conv/linear weights), keyed by parameter name.
struct PruneMask {
    std::map<std::string, std::vector<std::uint8_t>> keep;
    std::size_t prunable = 0;
    std::size_t pruned = 0;
};

// Global magnitude pruning over the weight-role parameters of `params`: zeroes
// exactly ceil(sparsity * n) weights of smallest |w| (ties by position).
// Throws std::invalid_argument unless 0 < sparsity < 1.
PruneMask magnitude_prune(nn::ParamList<float>& params, double sparsity);
void apply_mask(nn::ParamList<float>& params, const PruneMask& mask);
std::size_t count_nonzero_prunable(const nn::ParamList<float>& params);

struct PrunedModel {
    ExpandedBackbone<float> model;
    std::vector<Head<float>> heads;
    PruneMask mask;
};

// Prunes the expanded backbone (heads exempt) and fine-tunes everything on the
// multi-source objective with the mask re-applied after every update.
PrunedModel prune_and_finetune(const ExperimentConfig& config, const std::vector<TaskData>& data,
                               ExpandedBackbone<float> expanded, std::vector<Head<float>> heads,
                               const SqueezePlan& plan, TrainerOptions options = {});

struct ReversedOptions {
    std::size_t jobs = 1;
    std::function<void(const StepRecord&)> on_expansion_step;
    std::function<void(std::size_t task, const DistillRecord&)> on_distill_step;
};

struct ReversedResult {
    ExpandedBackbone<float> model;
    std::vector<Head<float>> heads;
    std::vector<std::size_t> student_channels;  // stage widths of each light sub-backbone
    std::vector<double> distill_final_losses;
};

// X-Learner_r: phase-1 teachers, per-task distillation into width-scaled
// sub-backbones, then joining them with links and joint training to step K.
ReversedResult run_reversed_pipeline(const ExperimentConfig& config, const std::vector<TaskData>& data,
                                     const ReversedOptions& options = {});

// The width-scaled sub-backbone spec used by X-Learner_r.
SubBackboneSpec reversed_student_spec(const ExperimentConfig& config);

}  // namespace xl
