#pragma once

// Expansion stage: phase 1 trains every sub-backbone (and head) on its own
// task; phase 2 trains the expanded backbone, links and heads jointly on the
// mean of the per-(task, source) losses.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xlearner/checkpoint.hpp"
#include "xlearner/config.hpp"
#include "xlearner/distill.hpp"

namespace xl {

// A task's sources, generated from their specs.
struct TaskData {
    std::string task_id;
    LossKind loss_kind = LossKind::multiclass_ce;
    std::vector<SyntheticSource> sources;

    std::size_t total_size() const;
};

std::vector<TaskData> build_task_data(const ExperimentConfig& config);

// Index of a source drawn with probability proportional to its size.
std::size_t pick_source(std::span<const std::size_t> sizes, Rng& rng);

// One batch from one of the task's sources (chosen proportionally to size),
// indices drawn uniformly with replacement. Throws ValidationError for an
// empty task.
Batch sample_task_batch(const TaskData& task, std::size_t batch_size, Rng& rng);

// Plain mean of the per-(task, source) losses. Throws std::invalid_argument when empty.
template <class T>
ag::Var<T> average_multi_source_loss(std::span<const ag::Var<T>> losses);
double average_multi_source_loss(std::span<const double> losses);

struct SourceLoss {
    std::string task_id;
    std::string source_id;
    double loss = 0.0;
    double hint = 0.0;  // raw pre-distillation hint (X-Learner++ phase 1)
};

struct StepRecord {
    std::size_t step = 0;  // 0-based step that was just taken
    int phase = 1;
    double lr = 0.0;
    double loss = 0.0;  // averaged objective
    std::vector<SourceLoss> per_source;
};

// Frozen single-task single-source teacher used by X-Learner++.
struct HintTeacher {
    std::string source_id;
    std::unique_ptr<SubBackbone<float>> backbone;
    GuidanceLayer<float> guidance;
};

struct TrainerOptions {
    std::size_t jobs = 1;
    // Train every step jointly (hard-sharing, pruning fine-tune).
    bool joint_only = false;
    std::function<void(const StepRecord&)> on_step;
    // Runs after every optimizer update (pruning masks).
    std::function<void()> after_update;
};

class ExpansionTrainer {
public:
    ExpansionTrainer(const ExperimentConfig& config, const std::vector<TaskData>& data, ExpandedBackbone<float> model,
                     std::vector<Head<float>> heads, ScheduleConfig schedule, TrainerOptions options = {});

    std::size_t step() const { return step_; }
    std::size_t total_steps() const { return schedule_.total_steps; }
    bool done() const { return step_ >= schedule_.total_steps; }
    bool in_phase_one() const { return !options_.joint_only && step_ < schedule_.phase_threshold; }

    // One optimizer step. Throws TrainingError on a non-finite loss.
    StepRecord step_once();
    void run_until(std::size_t step);

    ExpandedBackbone<float>& model() { return model_; }
    std::vector<Head<float>>& heads() { return heads_; }
    // Phase-1 hint teachers per task (X-Learner++).
    void set_hint_teachers(std::vector<std::vector<HintTeacher>> teachers, double hint_weight);

    // Trainable parameters: model, heads and guidance layers.
    nn::ParamList<float> parameters();
    std::vector<Rng>& task_rngs() { return rngs_; }
    void set_step(std::size_t step) { step_ = step; }

    void export_state(CheckpointBundle& bundle);
    void import_state(const CheckpointBundle& bundle);

private:
    StepRecord phase_one_step(double lr);
    StepRecord joint_step(double lr);
    nn::ParamList<float> task_parameters(std::size_t task);
    nn::ParamList<float> common_parameters();

    const ExperimentConfig& config_;
    const std::vector<TaskData>& data_;
    ExpandedBackbone<float> model_;
    std::vector<Head<float>> heads_;
    ScheduleConfig schedule_;
    TrainerOptions options_;
    std::size_t step_ = 0;
    std::vector<Rng> rngs_;
    std::vector<Sgd<float>> task_opt_;
    Sgd<float> common_opt_;
    std::vector<std::vector<HintTeacher>> teachers_;
    double hint_weight_ = 0.0;
};

std::uint64_t head_seed(std::uint64_t global_seed, const std::string& task_id);
std::uint64_t batch_stream_seed(std::uint64_t global_seed, const std::string& task_id);

// Fresh heads for each task on top of the given stage-D widths and input size.
std::vector<Head<float>> make_heads(const ExperimentConfig& config, std::span<const std::size_t> final_channels,
                                    std::uint64_t seed);

// The model a variant starts its expansion stage from (shared for hard-sharing).
ExpandedBackbone<float> make_expanded(const ExperimentConfig& config);

// Trains one frozen-teacher sub-backbone on a single source (X-Learner++).
SubBackbone<float> train_ssst_teacher(const ExperimentConfig& config, const std::string& task_id,
                                      const std::string& source_id, std::size_t steps);

// Builds the ++ teachers of every task and their guidance layers.
// With `train` false the teachers are left at initialization (to be loaded from a checkpoint).
std::vector<std::vector<HintTeacher>> make_hint_teachers(const ExperimentConfig& config, std::size_t jobs = 1,
                                                         bool train = true);

}  // namespace xl
