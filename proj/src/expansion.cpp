#include "xlearner/expansion.hpp"

#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include "xlearner/errors.hpp"

namespace xl {

std::size_t TaskData::total_size() const {
    std::size_t n = 0;
    for (const auto& s : sources) n += s.size();
    return n;
}

std::vector<TaskData> build_task_data(const ExperimentConfig& config) {
    std::vector<TaskData> out;
    for (const auto& t : config.tasks) {
        TaskData d;
        d.task_id = t.task_id;
        d.loss_kind = t.loss_kind;
        for (const auto& id : t.source_ids) {
            const SourceSpec* s = config.find_source(id);
            if (!s) throw ValidationError("task '" + t.task_id + "' references unknown source '" + id + "'");
            d.sources.emplace_back(s->source_id, s->generator, s->size, s->seed);
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::size_t pick_source(std::span<const std::size_t> sizes, Rng& rng) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    if (total == 0) throw ValidationError("cannot sample from empty sources");
    std::uint64_t r = rng.below(total);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (r < sizes[i]) return i;
        r -= sizes[i];
    }
    return sizes.size() - 1;
}

Batch sample_task_batch(const TaskData& task, std::size_t batch_size, Rng& rng) {
    if (task.sources.empty() || task.total_size() == 0)
        throw ValidationError("task '" + task.task_id + "' has no samples to draw from");
    std::vector<std::size_t> sizes;
    for (const auto& s : task.sources) sizes.push_back(s.size());
    const auto& source = task.sources[pick_source(sizes, rng)];
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = rng.below(source.size());
    return make_batch(source, idx, task.task_id);
}

template <class T>
ag::Var<T> average_multi_source_loss(std::span<const ag::Var<T>> losses) {
    if (losses.empty()) throw std::invalid_argument("average_multi_source_loss: no losses");
    return ops::scalar_sum<T>(losses, T(1) / static_cast<T>(losses.size()));
}
template ag::Var<float> average_multi_source_loss(std::span<const ag::Var<float>>);
template ag::Var<double> average_multi_source_loss(std::span<const ag::Var<double>>);

double average_multi_source_loss(std::span<const double> losses) {
    if (losses.empty()) throw std::invalid_argument("average_multi_source_loss: no losses");
    double s = 0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
}

std::uint64_t head_seed(std::uint64_t global_seed, const std::string& task_id) {
    return derive_seed(global_seed, "head:" + task_id);
}

std::uint64_t batch_stream_seed(std::uint64_t global_seed, const std::string& task_id) {
    return derive_seed(global_seed, "batches:" + task_id);
}

std::vector<Head<float>> make_heads(const ExperimentConfig& config, std::span<const std::size_t> final_channels,
                                    std::uint64_t seed) {
    std::vector<Head<float>> heads;
    for (std::size_t t = 0; t < config.tasks.size(); ++t)
        heads.emplace_back(config.tasks[t].head, final_channels[t], config.backbone.input_shape[1],
                           config.backbone.input_shape[2], head_seed(seed, config.tasks[t].task_id));
    return heads;
}

ExpandedBackbone<float> make_expanded(const ExperimentConfig& config) {
    std::vector<std::string> ids;
    for (const auto& t : config.tasks) ids.push_back(t.task_id);
    if (config.variant == Variant::hard_sharing)
        return ExpandedBackbone<float>::shared(std::move(ids), config.backbone, config.global_seed);
    std::vector<SubBackboneSpec> specs(config.tasks.size(), config.backbone);
    return ExpandedBackbone<float>::build(std::move(ids), specs, config.recon_topology, config.global_seed);
}

// ---------------------------------------------------------------------------

ExpansionTrainer::ExpansionTrainer(const ExperimentConfig& config, const std::vector<TaskData>& data,
                                   ExpandedBackbone<float> model, std::vector<Head<float>> heads,
                                   ScheduleConfig schedule, TrainerOptions options)
    : config_(config),
      data_(data),
      model_(std::move(model)),
      heads_(std::move(heads)),
      schedule_(std::move(schedule)),
      options_(std::move(options)),
      common_opt_(schedule_.momentum, schedule_.weight_decay) {
    if (data_.size() != model_.num_tasks() || heads_.size() != model_.num_tasks())
        throw ValidationError("trainer needs one data set and one head per task");
    if (model_.is_shared()) options_.joint_only = true;
    for (std::size_t t = 0; t < data_.size(); ++t) {
        rngs_.emplace_back(batch_stream_seed(config_.global_seed, data_[t].task_id));
        task_opt_.emplace_back(schedule_.momentum, schedule_.weight_decay);
    }
    teachers_.resize(data_.size());
}

void ExpansionTrainer::set_hint_teachers(std::vector<std::vector<HintTeacher>> teachers, double hint_weight) {
    if (teachers.size() != data_.size()) throw ValidationError("one teacher list per task required");
    teachers_ = std::move(teachers);
    hint_weight_ = hint_weight;
}

nn::ParamList<float> ExpansionTrainer::task_parameters(std::size_t t) {
    nn::ParamList<float> l;
    if (!model_.is_shared()) l = model_.backbone_parameters(t);
    heads_[t].collect(l, "head." + data_[t].task_id);
    for (auto& teacher : teachers_[t]) teacher.guidance.collect(l, "guidance." + data_[t].task_id + "." + teacher.source_id);
    return l;
}

nn::ParamList<float> ExpansionTrainer::common_parameters() {
    nn::ParamList<float> l = model_.link_parameters();
    if (model_.is_shared()) l.append(model_.backbone_parameters(0));
    return l;
}

nn::ParamList<float> ExpansionTrainer::parameters() {
    nn::ParamList<float> l = common_parameters();
    for (std::size_t t = 0; t < data_.size(); ++t) l.append(task_parameters(t));
    return l;
}

namespace {

[[noreturn]] void non_finite(std::size_t step, const std::string& task, const std::string& source, double value) {
    throw TrainingError("non-finite loss " + std::to_string(value) + " at step " + std::to_string(step) + " (task '" +
                        task + "', source '" + source + "')");
}

}  // namespace

StepRecord ExpansionTrainer::phase_one_step(double lr) {
    const std::size_t nt = data_.size();
    StepRecord rec;
    rec.phase = 1;
    rec.per_source.resize(nt);

    auto run_task = [&](std::size_t t) {
        Batch batch = sample_task_batch(data_[t], schedule_.batch_size, rngs_[t]);
        ag::Var<float> x(std::move(batch.images));
        auto feats = model_.sub_backbone(t).forward(x, nn::Mode::train());
        auto loss = task_loss(data_[t].loss_kind, heads_[t].forward(feats.back()), batch.labels);
        SourceLoss& sl = rec.per_source[t];
        sl.task_id = data_[t].task_id;
        sl.source_id = batch.source_id;
        sl.loss = loss.item();
        if (!std::isfinite(sl.loss)) non_finite(step_, sl.task_id, sl.source_id, sl.loss);
        ag::Var<float> total = loss;
        if (!teachers_[t].empty() && hint_weight_ > 0) {
            std::vector<ag::Var<float>> terms{loss};
            for (auto& teacher : teachers_[t]) {
                Tensor<float> target;
                {
                    ag::NoGradGuard ng;
                    target = teacher.backbone->forward(x, nn::Mode::eval()).back().value();
                }
                auto hint = pre_distill_hint_loss(feats.back(), target, teacher.guidance, nn::Mode::train());
                sl.hint += hint.item();
                terms.push_back(ops::scale(hint, static_cast<float>(hint_weight_ / static_cast<double>(target.numel()))));
            }
            if (!std::isfinite(sl.hint)) non_finite(step_, sl.task_id, sl.source_id, sl.hint);
            total = ops::scalar_sum<float>(terms);
        }
        ag::backward(total);
        auto params = task_parameters(t);
        task_opt_[t].step(params.params, lr);
    };

    if (options_.jobs > 1 && nt > 1) {
        std::vector<std::exception_ptr> errors(nt);
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < nt; ++t)
            threads.emplace_back([&, t] {
                try {
                    run_task(t);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        for (auto& th : threads) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (std::size_t t = 0; t < nt; ++t) run_task(t);
    }
    std::vector<double> losses;
    for (const auto& s : rec.per_source) losses.push_back(s.loss);
    rec.loss = average_multi_source_loss(losses);
    return rec;
}

StepRecord ExpansionTrainer::joint_step(double lr) {
    const std::size_t nt = data_.size();
    StepRecord rec;
    rec.phase = 2;
    std::vector<Batch> batches;
    std::vector<ag::Var<float>> inputs;
    for (std::size_t t = 0; t < nt; ++t) {
        batches.push_back(sample_task_batch(data_[t], schedule_.batch_size, rngs_[t]));
        inputs.emplace_back(batches.back().images);
    }
    auto fused = model_.fused_forward(inputs, nn::Mode::train());
    std::vector<ag::Var<float>> losses;
    for (std::size_t t = 0; t < nt; ++t) {
        auto loss = task_loss(data_[t].loss_kind, heads_[t].forward(fused.fused[t].back()), batches[t].labels);
        const double v = loss.item();
        if (!std::isfinite(v)) non_finite(step_, data_[t].task_id, batches[t].source_id, v);
        rec.per_source.push_back({data_[t].task_id, batches[t].source_id, v, 0.0});
        losses.push_back(loss);
    }
    auto L = average_multi_source_loss<float>(losses);
    rec.loss = L.item();
    ag::backward(L);
    for (std::size_t t = 0; t < nt; ++t) {
        auto params = task_parameters(t);
        task_opt_[t].step(params.params, lr);
    }
    auto common = common_parameters();
    common_opt_.step(common.params, lr);
    return rec;
}

StepRecord ExpansionTrainer::step_once() {
    if (done()) throw TrainingError("expansion stage already finished");
    const double lr = lr_at(step_, schedule_);
    StepRecord rec = in_phase_one() ? phase_one_step(lr) : joint_step(lr);
    if (options_.after_update) options_.after_update();
    rec.step = step_;
    rec.lr = lr;
    ++step_;
    if (options_.on_step) options_.on_step(rec);
    return rec;
}

void ExpansionTrainer::run_until(std::size_t step) {
    step = std::min(step, schedule_.total_steps);
    while (step_ < step) step_once();
}

void ExpansionTrainer::export_state(CheckpointBundle& bundle) {
    bundle.step = step_;
    store_parameters(bundle, parameters(), "model/");
    for (std::size_t t = 0; t < data_.size(); ++t) {
        bundle.rng_states["task:" + data_[t].task_id] = rngs_[t].state();
        for (const auto& [name, buf] : task_opt_[t].state()) bundle.tensors["optim/" + name] = buf;
        for (auto& teacher : teachers_[t])
            store_parameters(bundle, teacher.backbone->parameters(),
                             "teacher/" + data_[t].task_id + "/" + teacher.source_id + "/");
    }
    for (const auto& [name, buf] : common_opt_.state()) bundle.tensors["optim/" + name] = buf;
}

void ExpansionTrainer::import_state(const CheckpointBundle& bundle) {
    auto params = parameters();
    load_parameters(bundle, params, "model/");
    for (std::size_t t = 0; t < data_.size(); ++t) {
        auto it = bundle.rng_states.find("task:" + data_[t].task_id);
        if (it == bundle.rng_states.end()) throw IoError("checkpoint lacks the batch stream of task " + data_[t].task_id);
        rngs_[t].set_state(it->second);
        for (auto& teacher : teachers_[t]) {
            auto tp = teacher.backbone->parameters();
            load_parameters(bundle, tp, "teacher/" + data_[t].task_id + "/" + teacher.source_id + "/");
        }
    }
    std::vector<std::set<std::string>> owners;
    for (std::size_t t = 0; t < data_.size(); ++t) {
        std::set<std::string> names;
        for (const auto& p : task_parameters(t).params) names.insert(p.name);
        owners.push_back(std::move(names));
        task_opt_[t].state().clear();
    }
    common_opt_.state().clear();
    for (const auto& [key, tensor] : bundle.tensors) {
        if (key.rfind("optim/", 0) != 0) continue;
        const std::string name = key.substr(6);
        bool placed = false;
        for (std::size_t t = 0; t < owners.size() && !placed; ++t)
            if (owners[t].count(name)) {
                task_opt_[t].state()[name] = tensor;
                placed = true;
            }
        if (!placed) common_opt_.state()[name] = tensor;
    }
    step_ = bundle.step;
}

// ---------------------------------------------------------------------------

SubBackbone<float> train_ssst_teacher(const ExperimentConfig& config, const std::string& task_id,
                                      const std::string& source_id, std::size_t steps) {
    ExperimentConfig c = restrict_to_task(config, task_id);
    c.tasks[0].source_ids = {source_id};
    std::erase_if(c.sources, [&](const SourceSpec& s) { return s.source_id != source_id; });
    c.global_seed = derive_seed(config.global_seed, "ssst:" + source_id);
    c.variant = Variant::xlearner;
    c.recon_topology = Topology::shallow_to_deep;
    ScheduleConfig sched = c.expansion_schedule;
    sched.total_steps = steps;
    sched.phase_threshold = steps;
    auto data = build_task_data(c);
    auto model = make_expanded(c);
    std::vector<std::size_t> widths{model.sub_backbone(0).channels().back()};
    ExpansionTrainer trainer(c, data, std::move(model), make_heads(c, widths, c.global_seed), sched);
    trainer.run_until(steps);
    return std::move(trainer.model().sub_backbone(0));
}

std::vector<std::vector<HintTeacher>> make_hint_teachers(const ExperimentConfig& config, std::size_t jobs, bool train) {
    struct Job {
        std::size_t task;
        std::string source;
    };
    std::vector<Job> jobs_list;
    for (std::size_t t = 0; t < config.tasks.size(); ++t)
        for (const auto& s : config.tasks[t].source_ids) jobs_list.push_back({t, s});

    std::vector<std::unique_ptr<SubBackbone<float>>> trained(jobs_list.size());
    auto run = [&](std::size_t i) {
        const auto& j = jobs_list[i];
        if (train)
            trained[i] = std::make_unique<SubBackbone<float>>(
                train_ssst_teacher(config, config.tasks[j.task].task_id, j.source, config.pre_distill_teacher_steps()));
        else
            trained[i] = std::make_unique<SubBackbone<float>>(
                SubBackbone<float>::build(config.backbone, derive_seed(config.global_seed, "ssst:" + j.source)));
    };
    if (jobs > 1 && train) {
        std::vector<std::exception_ptr> errors(jobs_list.size());
        for (std::size_t start = 0; start < jobs_list.size(); start += jobs) {
            std::vector<std::thread> threads;
            for (std::size_t i = start; i < std::min(jobs_list.size(), start + jobs); ++i)
                threads.emplace_back([&, i] {
                    try {
                        run(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            for (auto& th : threads) th.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (std::size_t i = 0; i < jobs_list.size(); ++i) run(i);
    }

    std::vector<std::vector<HintTeacher>> out(config.tasks.size());
    const std::size_t width = config.backbone.effective_channels().back();
    for (std::size_t i = 0; i < jobs_list.size(); ++i) {
        HintTeacher h;
        h.source_id = jobs_list[i].source;
        h.backbone = std::move(trained[i]);
        Rng rng(derive_seed(config.global_seed, "guidance:" + h.source_id));
        h.guidance = GuidanceLayer<float>(width, h.backbone->channels().back(), rng);
        out[jobs_list[i].task].push_back(std::move(h));
    }
    return out;
}

}  // namespace xl
