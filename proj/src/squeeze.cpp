#include "xlearner/squeeze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xlearner/errors.hpp"

namespace xl {

SqueezePlan make_squeeze_plan(const ExperimentConfig& config) {
    SqueezePlan p;
    p.mode = config.squeeze_mode();
    p.student_spec = config.backbone;
    p.distill_stages = config.distill_stages();
    p.prune_sparsity = config.prune_sparsity();
    p.schedule = config.squeeze_schedule;
    p.student_init = config.squeeze.student_init;
    return p;
}

Batch sample_union_batch(std::span<const TaskData> data, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> sizes;
    for (const auto& t : data) sizes.push_back(t.total_size());
    return sample_task_batch(data[pick_source(sizes, rng)], batch_size, rng);
}

DistillResult distill_student(const TeacherFn& teacher, std::span<const DistillTarget> targets,
                              SubBackbone<float> student, const std::function<Batch(Rng&)>& sample,
                              const ScheduleConfig& schedule, std::uint64_t seed,
                              const std::function<void(const DistillRecord&)>& on_step) {
    if (targets.empty()) throw ValidationError("distillation needs at least one teacher target");
    Rng init_rng(derive_seed(seed, "guidance"));
    std::vector<GuidanceLayer<float>> guidance;
    for (const auto& t : targets) {
        if (t.stage >= student.depth()) throw ShapeError("distillation stage beyond the student's depth");
        guidance.emplace_back(student.channels()[t.stage], t.channels, init_rng);
    }
    // Targets grouped by student stage, keeping their order.
    std::vector<std::size_t> stages;
    for (const auto& t : targets)
        if (std::find(stages.begin(), stages.end(), t.stage) == stages.end()) stages.push_back(t.stage);

    Sgd<float> opt(schedule.momentum, schedule.weight_decay);
    Rng rng(derive_seed(seed, "batches"));
    DistillResult result{std::move(student)};
    for (std::size_t step = 0; step < schedule.total_steps; ++step) {
        Batch batch = sample(rng);
        std::vector<Tensor<float>> targets_now;
        {
            ag::NoGradGuard ng;
            targets_now = teacher(batch.images);
        }
        if (targets_now.size() != targets.size())
            throw ShapeError("teacher returned " + std::to_string(targets_now.size()) + " features for " +
                             std::to_string(targets.size()) + " targets");
        auto feats = result.student.forward(ag::Var<float>(std::move(batch.images)), nn::Mode::train());

        std::vector<ag::Var<float>> terms;
        double raw = 0;
        for (std::size_t s : stages) {
            std::vector<Tensor<float>> teach;
            std::vector<GuidanceLayer<float>*> guides;
            for (std::size_t i = 0; i < targets.size(); ++i)
                if (targets[i].stage == s) {
                    teach.push_back(targets_now[i]);
                    guides.push_back(&guidance[i]);
                }
            // squeeze_loss_normalized takes a contiguous span of guidance layers.
            std::vector<GuidanceLayer<float>> group;
            for (auto* g : guides) group.push_back(std::move(*g));
            double part = 0;
            terms.push_back(squeeze_loss_normalized<float>(teach, feats[s], group, nn::Mode::train(), &part));
            raw += part;
            for (std::size_t i = 0; i < guides.size(); ++i) *guides[i] = std::move(group[i]);
        }
        auto loss = ops::scalar_sum<float>(terms);
        const double value = loss.item();
        if (!std::isfinite(value))
            throw TrainingError("non-finite distillation loss at step " + std::to_string(step));
        if (step == 0) result.initial_loss = value;
        result.final_loss = value;
        ag::backward(loss);

        const double lr = lr_at(step, schedule);
        nn::ParamList<float> params = result.student.parameters("student.");
        for (std::size_t i = 0; i < guidance.size(); ++i) guidance[i].collect(params, "guidance." + std::to_string(i));
        opt.step(params.params, lr);
        if (on_step) on_step({step, lr, value, raw});
    }
    return result;
}

TeacherFn expanded_teacher(ExpandedBackbone<float>& teacher, std::span<const std::size_t> stages) {
    std::vector<std::size_t> st(stages.begin(), stages.end());
    return [&teacher, st](const Tensor<float>& images) {
        ag::NoGradGuard ng;
        std::vector<ag::Var<float>> inputs(teacher.num_tasks(), ag::Var<float>(images));
        auto f = teacher.fused_forward(inputs, nn::Mode::eval());
        std::vector<Tensor<float>> out;
        for (std::size_t s : st)
            for (std::size_t t = 0; t < teacher.num_tasks(); ++t) out.push_back(f.fused[t][s].value());
        return out;
    };
}

DistillResult distill_squeeze(ExpandedBackbone<float>& expanded, const SqueezePlan& plan,
                              std::span<const TaskData> data, std::uint64_t seed,
                              const std::function<void(const DistillRecord&)>& on_step) {
    std::vector<DistillTarget> targets;
    for (std::size_t s : plan.distill_stages)
        for (std::size_t t = 0; t < expanded.num_tasks(); ++t)
            targets.push_back({s, expanded.sub_backbone(t).channels().at(s)});
    SubBackbone<float> student =
        plan.student_init == "warm" ? expanded.sub_backbone(0).clone()
                                    : SubBackbone<float>::build(plan.student_spec, derive_seed(seed, "student"));
    auto sample = [&](Rng& rng) { return sample_union_batch(data, plan.schedule.batch_size, rng); };
    return distill_student(expanded_teacher(expanded, plan.distill_stages), targets, std::move(student), sample,
                           plan.schedule, derive_seed(seed, "squeeze"), on_step);
}

// ---------------------------------------------------------------------------

PruneMask magnitude_prune(nn::ParamList<float>& params, double sparsity) {
    if (!(sparsity > 0.0 && sparsity < 1.0))
        throw std::invalid_argument("pruning sparsity must be in (0, 1), got " + std::to_string(sparsity));
    struct Entry {
        float magnitude;
        std::size_t tensor, index;
    };
    std::vector<nn::ParamRef<float>*> weights;
    for (auto& p : params.params)
        if (p.role == nn::ParamRole::weight) weights.push_back(&p);
    std::vector<Entry> all;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const auto& v = weights[k]->var.value();
        for (std::size_t i = 0; i < v.numel(); ++i) all.push_back({std::abs(v[i]), k, i});
    }
    PruneMask mask;
    mask.prunable = all.size();
    mask.pruned = static_cast<std::size_t>(std::ceil(sparsity * static_cast<double>(all.size())));
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.magnitude < b.magnitude; });
    for (auto* w : weights) mask.keep[w->name].assign(w->var.numel(), 1);
    for (std::size_t n = 0; n < mask.pruned; ++n) mask.keep[weights[all[n].tensor]->name][all[n].index] = 0;
    apply_mask(params, mask);
    return mask;
}

void apply_mask(nn::ParamList<float>& params, const PruneMask& mask) {
    for (auto& p : params.params) {
        auto it = mask.keep.find(p.name);
        if (it == mask.keep.end()) continue;
        auto& v = p.var.mutable_value();
        if (it->second.size() != v.numel()) throw ShapeError("prune mask size mismatch for " + p.name);
        for (std::size_t i = 0; i < v.numel(); ++i)
            if (!it->second[i]) v[i] = 0.0f;
    }
}

std::size_t count_nonzero_prunable(const nn::ParamList<float>& params) {
    std::size_t n = 0;
    for (const auto& p : params.params)
        if (p.role == nn::ParamRole::weight)
            for (float v : p.var.value().values()) n += v != 0.0f;
    return n;
}

PrunedModel prune_and_finetune(const ExperimentConfig& config, const std::vector<TaskData>& data,
                               ExpandedBackbone<float> expanded, std::vector<Head<float>> heads,
                               const SqueezePlan& plan, TrainerOptions options) {
    auto params = expanded.parameters();
    PruneMask mask = magnitude_prune(params, plan.prune_sparsity);
    options.joint_only = true;
    ScheduleConfig schedule = plan.schedule;
    schedule.phase_threshold = 0;
    // Filled once the trainer owns the model; parameter handles alias its nodes.
    nn::ParamList<float> owned;
    auto user_hook = options.after_update;
    options.after_update = [&mask, &owned, user_hook] {
        apply_mask(owned, mask);
        if (user_hook) user_hook();
    };
    ExpansionTrainer trainer(config, data, std::move(expanded), std::move(heads), schedule, options);
    owned = trainer.model().parameters();
    trainer.run_until(schedule.total_steps);
    return {std::move(trainer.model()), std::move(trainer.heads()), std::move(mask)};
}

// ---------------------------------------------------------------------------

SubBackboneSpec reversed_student_spec(const ExperimentConfig& config) {
    SubBackboneSpec s = config.backbone;
    s.width_scale = config.backbone.width_scale * config.reversed_width_factor();
    return s;
}

ReversedResult run_reversed_pipeline(const ExperimentConfig& config, const std::vector<TaskData>& data,
                                     const ReversedOptions& options) {
    const std::size_t nt = config.num_tasks();
    const std::size_t tau = config.expansion_schedule.phase_threshold;

    // Teachers: independent full-width sub-backbones after phase 1.
    auto full = make_expanded(config);
    std::vector<std::size_t> widths(nt, full.sub_backbone(0).channels().back());
    TrainerOptions opt;
    opt.jobs = options.jobs;
    opt.on_step = options.on_expansion_step;
    ExpansionTrainer teachers(config, data, std::move(full), make_heads(config, widths, config.global_seed),
                              config.expansion_schedule, opt);
    teachers.run_until(tau);

    // Squeeze: one light student per task, hinted by that task's teacher.
    const SubBackboneSpec light = reversed_student_spec(config);
    std::vector<std::string> ids;
    std::vector<SubBackbone<float>> students;
    ReversedResult result{ExpandedBackbone<float>::shared({"_"}, light, 0), {}, {}, {}};
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& id = config.tasks[t].task_id;
        ids.push_back(id);
        auto& teacher = teachers.model().sub_backbone(t);
        std::vector<DistillTarget> targets;
        for (std::size_t s : config.distill_stages()) targets.push_back({s, teacher.channels().at(s)});
        const auto stages = config.distill_stages();
        TeacherFn fn = [&teacher, stages](const Tensor<float>& images) {
            ag::NoGradGuard ng;
            auto f = teacher.forward(ag::Var<float>(images), nn::Mode::eval());
            std::vector<Tensor<float>> out;
            for (std::size_t s : stages) out.push_back(f[s].value());
            return out;
        };
        auto sample = [&](Rng& rng) { return sample_task_batch(data[t], config.squeeze_schedule.batch_size, rng); };
        std::function<void(const DistillRecord&)> hook;
        if (options.on_distill_step) hook = [&, t](const DistillRecord& r) { options.on_distill_step(t, r); };
        auto r = distill_student(fn, targets,
                                 SubBackbone<float>::build(light, derive_seed(config.global_seed, "reversed:" + id)),
                                 sample, config.squeeze_schedule, derive_seed(config.global_seed, "reversed-distill:" + id),
                                 hook);
        result.distill_final_losses.push_back(r.final_loss);
        students.push_back(std::move(r.student));
    }
    result.student_channels = students.front().channels();

    // Expansion of the light sub-backbones for the remaining steps.
    auto joined = ExpandedBackbone<float>::join(ids, std::move(students), Topology::shallow_to_deep,
                                                derive_seed(config.global_seed, "reversed-links"));
    std::vector<std::size_t> light_widths(nt, result.student_channels.back());
    TrainerOptions joint_opt;
    joint_opt.on_step = options.on_expansion_step;
    joint_opt.joint_only = true;
    ExpansionTrainer trainer(config, data, std::move(joined),
                             make_heads(config, light_widths, derive_seed(config.global_seed, "reversed")),
                             config.expansion_schedule, joint_opt);
    for (std::size_t t = 0; t < nt; ++t) trainer.task_rngs()[t] = teachers.task_rngs()[t];
    trainer.set_step(tau);
    trainer.run_until(config.expansion_schedule.total_steps);
    result.model = std::move(trainer.model());
    result.heads = std::move(trainer.heads());
    return result;
}

}  // namespace xl
