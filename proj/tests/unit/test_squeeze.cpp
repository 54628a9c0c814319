#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/micro_config.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/squeeze.hpp"

using namespace xl;

namespace {

Tensor<double> random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

SubBackboneSpec tiny_spec(std::vector<std::size_t> widths = {4, 8}) {
    SubBackboneSpec s;
    s.stage_channels = std::move(widths);
    s.input_shape = {3, 16, 16};
    return s;
}

std::map<std::string, Tensor<float>> snapshot(nn::ParamList<float> l) {
    std::map<std::string, Tensor<float>> m;
    for (auto& p : l.params) m[p.name] = p.var.value();
    for (auto& b : l.buffers) m[b.name] = *b.tensor;
    return m;
}

// Identity 1x1 conv and a norm layer whose statistics and affine are neutral.
GuidanceLayer<double> identity_guidance(std::size_t c) {
    Rng rng(1);
    GuidanceLayer<double> g(c, c, rng);
    auto& w = g.conv.weight.mutable_value();
    w.fill(0.0);
    for (std::size_t i = 0; i < c; ++i) w[i * c + i] = 1.0;
    g.norm.running_mean.fill(0.0);
    g.norm.running_var.fill(1.0 - 1e-5);
    return g;
}

}  // namespace

TEST_CASE("guidance layer shape law and identity") {
    Rng rng(3);
    auto x = random_tensor({2, 4, 8, 8}, rng);
    auto g = identity_guidance(4);
    auto y = guidance_forward(g, ag::Var<double>(x), nn::Mode::eval());
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-12));

    GuidanceLayer<double> wide(4, 16, rng);
    auto z = guidance_forward(wide, ag::Var<double>(x), nn::Mode::train());
    CHECK(z.shape() == Shape{2, 16, 8, 8});
    CHECK_THROWS_AS(guidance_forward(wide, ag::Var<double>(random_tensor({2, 5, 8, 8}, rng)), nn::Mode::train()),
                    ShapeError);
}

TEST_CASE("guidance conv gradient matches finite differences") {
    Rng rng(5);
    auto x = ag::Var<double>(random_tensor({3, 4, 5, 5}, rng));
    GuidanceLayer<double> g(4, 6, rng);
    auto target = ag::Var<double>(random_tensor({3, 6, 5, 5}, rng));
    std::function<ag::Var<double>()> loss = [&] {
        return ops::sum_squared_diff(guidance_forward(g, x, nn::Mode{true, false}), target);
    };
    auto r = testing::grad_check(loss, {g.conv.weight, g.norm.gamma, g.norm.beta});
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("squeeze loss examples and brute-force oracle") {
    // T=1, F=[1,0], G(F)=[0,0] gives 1 with a zero guidance map.
    Rng rng(1);
    GuidanceLayer<double> zero(1, 1, rng);
    zero.conv.weight.mutable_value().fill(0.0);
    zero.norm.running_mean.fill(0.0);
    zero.norm.running_var.fill(1.0);
    Tensor<double> teacher({1, 1, 1, 2}, std::vector<double>{1.0, 0.0});
    auto student = ag::Var<double>(Tensor<double>({1, 1, 1, 2}, std::vector<double>{0.3, -0.7}));
    std::vector<Tensor<double>> one{teacher};
    std::span<GuidanceLayer<double>> gz(&zero, 1);
    CHECK(squeeze_loss<double>(one, student, gz, nn::Mode::eval()).item() == doctest::Approx(1.0).epsilon(1e-12));

    // Exact match gives zero.
    auto id = identity_guidance(1);
    std::vector<Tensor<double>> same{Tensor<double>({1, 1, 1, 2}, std::vector<double>{0.3, -0.7})};
    std::span<GuidanceLayer<double>> gi(&id, 1);
    CHECK(squeeze_loss<double>(same, student, gi, nn::Mode::eval()).item() == doctest::Approx(0.0).epsilon(1e-9));

    // Random instances against Σ_t Σ_elem Δ² on the guided features.
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t nt = 1 + rng.below(3), c = 1 + rng.below(3), h = 1 + rng.below(3), w = 1 + rng.below(3);
        const std::size_t b = 2 + rng.below(2);
        auto s = ag::Var<double>(random_tensor({b, c, h, w}, rng));
        std::vector<GuidanceLayer<double>> guides;
        std::vector<Tensor<double>> teachers;
        double oracle = 0, normalized = 0;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t ct = 1 + rng.below(3);
            guides.emplace_back(c, ct, rng);
            teachers.push_back(random_tensor({b, ct, h, w}, rng));
        }
        for (std::size_t t = 0; t < nt; ++t) {
            auto gf = guidance_forward(guides[t], s, nn::Mode::eval()).value();
            double part = 0;
            for (std::size_t i = 0; i < gf.numel(); ++i) part += (teachers[t][i] - gf[i]) * (teachers[t][i] - gf[i]);
            oracle += part;
            normalized += part / static_cast<double>(gf.numel());
        }
        const double got = squeeze_loss<double>(teachers, s, guides, nn::Mode::eval()).item();
        REQUIRE(std::abs(got - oracle) <= 1e-12 * std::max(1.0, oracle));
        double raw = 0;
        const double norm = squeeze_loss_normalized<double>(teachers, s, guides, nn::Mode::eval(), &raw).item();
        REQUIRE(std::abs(norm - normalized) <= 1e-12 * std::max(1.0, normalized));
        REQUIRE(std::abs(raw - oracle) <= 1e-12 * std::max(1.0, oracle));
        REQUIRE(got >= 0.0);
    }
}

TEST_CASE("squeeze loss gradient on a two-task micro instance") {
    auto spec = tiny_spec({2, 4});
    spec.channel_multiple = 1;
    spec.input_shape = {3, 8, 8};
    auto student = SubBackbone<double>::build(spec, 11);
    Rng rng(12);
    auto x = ag::Var<double>(random_tensor({3, 3, 8, 8}, rng));
    const Shape fs = student.stage_shape(1, 3);
    std::vector<Tensor<double>> teachers{random_tensor({3, 3, fs[2], fs[3]}, rng),
                                         random_tensor({3, 2, fs[2], fs[3]}, rng)};
    std::vector<GuidanceLayer<double>> guides;
    guides.emplace_back(4, 3, rng);
    guides.emplace_back(4, 2, rng);
    std::function<ag::Var<double>()> loss = [&] {
        auto f = student.forward(x, nn::Mode{true, false});
        return squeeze_loss<double>(teachers, f.back(), guides, nn::Mode{true, false});
    };
    nn::ParamList<double> params = student.parameters("student.");
    for (std::size_t t = 0; t < guides.size(); ++t) guides[t].collect(params, "g" + std::to_string(t));
    std::vector<ag::Var<double>> vars;
    for (auto& p : params.params) vars.push_back(p.var);
    auto r = testing::grad_check(loss, vars);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("distillation from an identical architecture converges") {
    auto spec = tiny_spec();
    auto teacher = SubBackbone<float>::build(spec, 21);
    const auto before = snapshot(teacher.parameters());
    SyntheticGeneratorSpec gen;
    gen.kind = GeneratorKind::shape_class;
    gen.num_classes = 4;
    gen.height = gen.width = 16;
    SyntheticSource source("probe", gen, 256, 3);
    std::vector<DistillTarget> targets{{1, teacher.channels()[1]}};
    TeacherFn fn = [&](const Tensor<float>& images) {
        auto f = teacher.forward(ag::Var<float>(images), nn::Mode::eval());
        return std::vector<Tensor<float>>{f[1].value()};
    };
    ScheduleConfig sched;
    sched.total_steps = 400;
    sched.batch_size = 16;
    sched.base_lr = 0.1;
    sched.weight_decay = 0.0;
    auto sample = [&](Rng& rng) {
        std::vector<std::size_t> idx(sched.batch_size);
        for (auto& i : idx) i = rng.below(source.size());
        return make_batch(source, idx);
    };
    auto r = distill_student(fn, targets, SubBackbone<float>::build(spec, 22), sample, sched, 4);
    MESSAGE("initial ", r.initial_loss, " final ", r.final_loss);
    CHECK(r.final_loss < 0.01 * r.initial_loss);
    CHECK(snapshot(teacher.parameters()).size() == before.size());
    for (const auto& [k, v] : snapshot(teacher.parameters())) CHECK(bitwise_equal(v, before.at(k)));
}

TEST_CASE("distill squeeze keeps the student budget and freezes teachers") {
    auto config = testing::micro_config();
    auto data = build_task_data(config);
    auto expanded = make_expanded(config);
    const auto before = snapshot(expanded.parameters());
    auto plan = make_squeeze_plan(config);
    std::vector<DistillRecord> records;
    auto r = distill_squeeze(expanded, plan, data, 5, [&](const DistillRecord& d) { records.push_back(d); });
    CHECK(records.size() == plan.schedule.total_steps);
    for (const auto& d : records) CHECK(d.raw_loss >= d.loss);
    auto standalone = SubBackbone<float>::build(config.backbone, 99);
    CHECK(count_parameters(r.student) == count_parameters(standalone));
    CHECK(expanded.parameters().count() >= config.num_tasks() * count_parameters(standalone));
    for (const auto& [k, v] : snapshot(expanded.parameters())) CHECK(bitwise_equal(v, before.at(k)));
}

TEST_CASE("magnitude pruning examples") {
    auto make = [](std::vector<float> w) {
        nn::ParamList<float> l;
        l.add("w", ag::Var<float>::parameter(Tensor<float>({w.size()}, w)), nn::ParamRole::weight);
        l.add("b", ag::Var<float>::parameter(Tensor<float>({2}, std::vector<float>{0.0f, 1e-9f})), nn::ParamRole::bias);
        return l;
    };
    auto l = make({0.1f, -0.5f, 0.3f, -0.05f});
    auto m = magnitude_prune(l, 0.5);
    const auto& w = l.params[0].var.value();
    CHECK(w[0] == 0.0f);
    CHECK(w[1] == -0.5f);
    CHECK(w[2] == 0.3f);
    CHECK(w[3] == 0.0f);
    CHECK(m.prunable == 4);
    CHECK(m.pruned == 2);
    CHECK(l.params[1].var.value()[1] == 1e-9f);  // biases are exempt

    for (double s : {0.0, 1.0, -0.2, 1.5}) {
        auto l2 = make({1, 2});
        CHECK_THROWS_AS(magnitude_prune(l2, s), std::invalid_argument);
    }

    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        if (n > 3) v[1] = v[2] = 0.25f;  // ties
        const double s = 0.01 + 0.98 * rng.uniform();
        auto lst = make(v);
        auto mask = magnitude_prune(lst, s);
        const auto zeros = n - count_nonzero_prunable(lst);
        CHECK(zeros == static_cast<std::size_t>(std::ceil(s * n)));
        CHECK(mask.pruned == zeros);
        CHECK(static_cast<double>(count_nonzero_prunable(lst)) <= (1 - s) * n + 1);

        // A larger sparsity never revives a weight pruned at the smaller one.
        auto again = make(v);
        auto wider = magnitude_prune(again, std::min(0.99, s + 0.3 * rng.uniform()));
        for (std::size_t i = 0; i < n; ++i)
            if (!mask.keep["w"][i]) CHECK(!wider.keep["w"][i]);
    }
}

TEST_CASE("pruned entries stay zero through fine-tuning") {
    auto config = testing::micro_config("xlearner_p");
    auto data = build_task_data(config);
    auto expanded = make_expanded(config);
    std::vector<std::size_t> widths(config.num_tasks(), expanded.sub_backbone(0).channels().back());
    auto heads = make_heads(config, widths, config.global_seed);
    auto plan = make_squeeze_plan(config);
    plan.schedule.total_steps = 100;
    plan.schedule.phase_threshold = 0;
    std::size_t steps = 0;
    TrainerOptions opt;
    opt.on_step = [&](const StepRecord&) { ++steps; };
    auto pruned = prune_and_finetune(config, data, std::move(expanded), std::move(heads), plan, opt);
    CHECK(steps == 100);
    auto params = pruned.model.parameters();
    std::size_t checked = 0;
    for (auto& p : params.params) {
        auto it = pruned.mask.keep.find(p.name);
        if (it == pruned.mask.keep.end()) continue;
        for (std::size_t i = 0; i < it->second.size(); ++i)
            if (!it->second[i]) {
                CHECK(p.var.value()[i] == 0.0f);
                ++checked;
            }
    }
    CHECK(checked == pruned.mask.pruned);
    CHECK(pruned.mask.pruned == static_cast<std::size_t>(std::ceil(0.5 * pruned.mask.prunable)));
    CHECK(static_cast<double>(count_nonzero_prunable(params)) <= 0.5 * pruned.mask.prunable + 1);
}

TEST_CASE("reversed pipeline uses width-scaled students") {
    auto base = testing::micro_config("xlearner_r");
    base.backbone.stage_channels = {8, 16, 32, 64};
    base.backbone.input_shape = {3, 32, 32};
    auto light = reversed_student_spec(base);
    CHECK(light.effective_channels() == std::vector<std::size_t>{4, 8, 20, 44});
    auto full = SubBackbone<float>::build(base.backbone, 1);
    auto a = SubBackbone<float>::build(light, 2);
    auto b = SubBackbone<float>::build(light, 3);
    CHECK(count_parameters(a) + count_parameters(b) < 1.1 * count_parameters(full));

    auto config = testing::micro_config("xlearner_r");
    auto data = build_task_data(config);
    std::size_t expansion_steps = 0, distill_steps = 0;
    ReversedOptions opt;
    opt.on_expansion_step = [&](const StepRecord&) { ++expansion_steps; };
    opt.on_distill_step = [&](std::size_t, const DistillRecord&) { ++distill_steps; };
    auto r = run_reversed_pipeline(config, data, opt);
    CHECK(expansion_steps == config.expansion_schedule.total_steps);
    CHECK(distill_steps == config.num_tasks() * config.squeeze_schedule.total_steps);
    CHECK(r.model.num_tasks() == 2);
    CHECK(r.model.sub_backbone(0).channels() == reversed_student_spec(config).effective_channels());
    CHECK(!r.model.links().empty());
}
