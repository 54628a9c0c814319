#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "../support/gradcheck.hpp"
#include "../support/recon_oracle.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/reconciliation.hpp"

using namespace xl;
using namespace xl::testing;

namespace {

std::size_t brute_count(Topology topo, std::size_t t, std::size_t d) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < t; ++k)
        for (std::size_t tt = 0; tt < t; ++tt)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t i = 0; i < d; ++i)
                    if (k != tt && (topo == Topology::shallow_to_deep ? j <= i : j >= i)) ++n;
    return n;
}

}  // namespace

TEST_CASE("link counts match enumeration") {
    for (auto topo : {Topology::shallow_to_deep, Topology::deep_to_shallow})
        for (std::size_t t = 1; t <= 4; ++t)
            for (std::size_t d = 2; d <= 5; ++d) CHECK(enumerate_links(topo, t, d).size() == brute_count(topo, t, d));
    CHECK(enumerate_links(Topology::shallow_to_deep, 2, 4).size() == 20);
    CHECK(enumerate_links(Topology::shallow_to_deep, 3, 2).size() == 18);
    CHECK(enumerate_links(Topology::shallow_to_deep, 1, 4).empty());
    CHECK(enumerate_links(Topology::none, 3, 4).empty());
}

TEST_CASE("chain kinds per topology") {
    using G = GammaKind;
    CHECK(chain_kinds(Topology::shallow_to_deep, 0, 2) == std::vector<G>{G::gamma_a, G::gamma_a, G::gamma_b});
    CHECK(chain_kinds(Topology::shallow_to_deep, 1, 1) == std::vector<G>{G::gamma_b});
    CHECK(chain_kinds(Topology::deep_to_shallow, 3, 1) == std::vector<G>{G::gamma_c, G::gamma_c, G::gamma_b});
    CHECK_THROWS_AS(chain_kinds(Topology::shallow_to_deep, 2, 1), ShapeError);
}

TEST_CASE("gamma transforms obey their shape laws") {
    Rng rng(1);
    ag::Var<float> x(Tensor<float>({2, 4, 8, 8}, 0.3f));
    GammaTransform<float> a(GammaKind::gamma_a, 4, 6, rng), b(GammaKind::gamma_b, 4, 6, rng),
        c(GammaKind::gamma_c, 4, 6, rng);
    CHECK(a.forward(x, nn::Mode::train()).shape() == Shape{2, 6, 4, 4});
    CHECK(b.forward(x, nn::Mode::train()).shape() == Shape{2, 6, 8, 8});
    CHECK(c.forward(x, nn::Mode::train()).shape() == Shape{2, 6, 16, 16});
    ag::Var<float> wrong(Tensor<float>({2, 5, 8, 8}, 0.3f));
    CHECK_THROWS_AS(b.forward(wrong, nn::Mode::train()), ShapeError);
}

TEST_CASE("every link output matches its target stage shape") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 2 + rng.below(3), tasks = 2 + rng.below(2);
        std::vector<SubBackboneSpec> specs;
        for (std::size_t t = 0; t < tasks; ++t) specs.push_back(micro_spec(d, 4 * (1 + rng.below(3))));
        for (auto topo : {Topology::shallow_to_deep, Topology::deep_to_shallow}) {
            std::vector<std::string> ids;
            for (std::size_t t = 0; t < tasks; ++t) ids.push_back("t" + std::to_string(t));
            auto e = ExpandedBackbone<float>::build(ids, specs, topo, trial);
            CHECK(e.links().size() == brute_count(topo, tasks, d));
            for (auto& l : e.links()) {
                Shape s = e.sub_backbone(l.source_task).stage_shape(l.source_stage, 2);
                for (auto& g : l.chain) s = g.output_shape(s);
                CHECK(s == e.sub_backbone(l.target_task).stage_shape(l.target_stage, 2));
            }
        }
    }
}

TEST_CASE("mismatched sub-backbones are rejected") {
    auto a = micro_spec(2), b = micro_spec(3);
    std::vector<SubBackboneSpec> specs{a, b};
    CHECK_THROWS_AS(ExpandedBackbone<float>::build({"x", "y"}, specs, Topology::shallow_to_deep, 0), ShapeError);
    auto c = a;
    c.input_shape = {3, 32, 32};
    std::vector<SubBackboneSpec> specs2{a, c};
    CHECK_THROWS_AS(ExpandedBackbone<float>::build({"x", "y"}, specs2, Topology::shallow_to_deep, 0), ShapeError);
}

TEST_CASE("fused forward matches the brute-force fusion sum") {
    Rng rng(2024);
    int cases = 0;
    for (std::size_t tasks = 1; tasks <= 3; ++tasks)
        for (std::size_t d = 2; d <= 3; ++d)
            for (auto topo : {Topology::shallow_to_deep, Topology::deep_to_shallow})
                for (int rep = 0; rep < 9; ++rep, ++cases) {
                    std::vector<SubBackboneSpec> specs;
                    std::vector<std::string> ids;
                    for (std::size_t t = 0; t < tasks; ++t) {
                        specs.push_back(micro_spec(d, 4 * (1 + rng.below(2))));
                        ids.push_back("task" + std::to_string(t));
                    }
                    auto e = ExpandedBackbone<float>::build(ids, specs, topo, rng.next());
                    randomize_links(e, rng);
                    auto in = random_inputs<float>(tasks, specs[0], 2, rng);
                    const nn::Mode mode{rep % 2 == 0, false};
                    auto fused = e.fused_forward(in, mode);
                    auto oracle = brute_force(e, in, mode);
                    for (std::size_t t = 0; t < tasks; ++t)
                        for (std::size_t i = 0; i < d; ++i) {
                            REQUIRE(fused.fused[t][i].shape() == oracle[t][i].shape());
                            CHECK(max_abs_diff(fused.fused[t][i].value(), oracle[t][i]) <= 1e-5f);
                        }
                }
    CHECK(cases >= 100);
}

TEST_CASE("zero-initialized links make fusion the identity") {
    std::vector<SubBackboneSpec> specs{micro_spec(3), micro_spec(3, 8)};
    for (auto topo : {Topology::shallow_to_deep, Topology::deep_to_shallow}) {
        auto e = ExpandedBackbone<float>::build({"a", "b"}, specs, topo, 3);
        Rng rng(1);
        auto in = random_inputs<float>(2, specs[0], 2, rng);
        auto f = e.fused_forward(in, nn::Mode{true, false});
        for (std::size_t t = 0; t < 2; ++t) {
            auto standalone = SubBackbone<float>::build(specs[t], task_backbone_seed(3, t == 0 ? "a" : "b"));
            auto ref = standalone.forward(in[t], nn::Mode{true, false});
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK(bitwise_equal(f.fused[t][i].value(), f.raw[t][i].value()));
                CHECK(bitwise_equal(f.fused[t][i].value(), ref[i].value()));
            }
        }
    }
}

TEST_CASE("single task has no links") {
    std::vector<SubBackboneSpec> specs{micro_spec(2)};
    auto e = ExpandedBackbone<float>::build({"only"}, specs, Topology::shallow_to_deep, 1);
    CHECK(e.links().empty());
    Rng rng(2);
    auto in = random_inputs<float>(1, specs[0], 1, rng);
    auto f = e.fused_forward(in, nn::Mode::train());
    CHECK(bitwise_equal(f.fused[0][1].value(), f.raw[0][1].value()));
}

TEST_CASE("a missing task batch is an error") {
    std::vector<SubBackboneSpec> specs{micro_spec(2), micro_spec(2)};
    auto e = ExpandedBackbone<float>::build({"a", "b"}, specs, Topology::shallow_to_deep, 1);
    Rng rng(2);
    auto in = random_inputs<float>(1, specs[0], 1, rng);
    CHECK_THROWS_AS(e.fused_forward(in, nn::Mode::train()), ShapeError);
    in.push_back(ag::Var<float>());
    CHECK_THROWS_AS(e.fused_forward(in, nn::Mode::train()), ShapeError);
}


TEST_CASE("gradients never cross a link into another sub-backbone") {
    for (auto topo : {Topology::shallow_to_deep, Topology::deep_to_shallow}) {
        std::vector<SubBackboneSpec> specs{micro_spec(2), micro_spec(2, 8)};
        auto e = ExpandedBackbone<double>::build({"a", "b"}, specs, topo, 9);
        Rng rng(4);
        randomize_links(e, rng);
        auto in = random_inputs<double>(2, specs[0], 2, rng);
        const nn::Mode mode{true, false};
        auto all = e.parameters();

        // Task-2 loss only.
        nn::zero_grads(all);
        ag::backward(task_objective(e.fused_forward(in, mode), 1, 77));
        for (auto& p : e.backbone_parameters(0).params) {
            const bool zero = !p.var.has_grad() ||
                              std::all_of(p.var.grad().values().begin(), p.var.grad().values().end(),
                                          [](double g) { return g == 0.0; });
            CHECK_MESSAGE(zero, p.name);
        }
        double link_norm = 0;
        for (auto& p : e.link_parameters().params)
            if (p.name.find("a->b") != std::string::npos && p.var.has_grad())
                for (double g : p.var.grad().values()) link_norm += g * g;
        CHECK(link_norm > 0);
        auto g2_alone = grads_of(e.backbone_parameters(1));

        // Both losses: sub-backbone grads depend only on their own task's loss.
        nn::zero_grads(all);
        auto f = e.fused_forward(in, mode);
        std::vector<ag::Var<double>> both{task_objective(f, 0, 76), task_objective(f, 1, 77)};
        ag::backward(ops::scalar_sum<double>(both));
        auto g2_both = grads_of(e.backbone_parameters(1));
        for (std::size_t i = 0; i < g2_both.size(); ++i) CHECK(bitwise_equal(g2_both[i], g2_alone[i]));

        nn::zero_grads(all);
        ag::backward(task_objective(e.fused_forward(in, mode), 0, 76));
        auto g1_alone = grads_of(e.backbone_parameters(0));
        auto g1_both = grads_of(e.backbone_parameters(0));
        nn::zero_grads(all);
        {
            auto f2 = e.fused_forward(in, mode);
            std::vector<ag::Var<double>> b2{task_objective(f2, 0, 76), task_objective(f2, 1, 77)};
            ag::backward(ops::scalar_sum<double>(b2));
            g1_both = grads_of(e.backbone_parameters(0));
        }
        for (std::size_t i = 0; i < g1_both.size(); ++i) CHECK(bitwise_equal(g1_both[i], g1_alone[i]));
    }
}

TEST_CASE("zero-init expanded gradients equal standalone single-task gradients") {
    std::vector<SubBackboneSpec> specs{micro_spec(2), micro_spec(2)};
    auto e = ExpandedBackbone<double>::build({"a", "b"}, specs, Topology::shallow_to_deep, 5);
    auto standalone = SubBackbone<double>::build(specs[1], task_backbone_seed(5, "b"));
    Rng rng(8);
    auto in = random_inputs<double>(2, specs[0], 2, rng);
    const nn::Mode mode{true, false};
    ag::backward(task_objective(e.fused_forward(in, mode), 1, 3));
    auto feats = standalone.forward(in[1], mode);
    FusedFeatures<double> fake;
    fake.fused = {{}, feats};
    ag::backward(task_objective(fake, 1, 3));
    auto ge = grads_of(e.backbone_parameters(1));
    auto gs = grads_of(standalone.parameters());
    REQUIRE(ge.size() == gs.size());
    for (std::size_t i = 0; i < ge.size(); ++i) CHECK(bitwise_equal(ge[i], gs[i]));
}

TEST_CASE("link gradients match finite differences") {
    std::vector<SubBackboneSpec> specs{micro_spec(2), micro_spec(2)};
    auto e = ExpandedBackbone<double>::build({"a", "b"}, specs, Topology::shallow_to_deep, 12);
    Rng rng(6);
    randomize_links(e, rng);
    auto in = random_inputs<double>(2, specs[0], 2, rng);
    auto* link = e.find_link(0, 1, 0, 1);
    REQUIRE(link != nullptr);
    nn::ParamList<double> lp;
    link->chain.front().collect(lp, "g");
    std::vector<ag::Var<double>> vars;
    for (auto& p : lp.params) vars.push_back(p.var);
    auto r = testing::grad_check([&] { return task_objective(e.fused_forward(in, {true, false}), 1, 21); }, vars);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("parameters are the disjoint union of backbones and links") {
    std::vector<SubBackboneSpec> specs{micro_spec(3), micro_spec(3)};
    auto e = ExpandedBackbone<float>::build({"a", "b"}, specs, Topology::shallow_to_deep, 1);
    const std::size_t total = e.parameters().count();
    CHECK(total == e.backbone_parameters(0).count() + e.backbone_parameters(1).count() + e.link_parameters().count());
    std::set<std::string> names;
    for (auto& p : e.parameters().params) CHECK(names.insert(p.name).second);
    CHECK(total >= 2 * e.backbone_parameters(0).count());
    auto c = e.clone();
    CHECK(c.parameters().count() == total);
    CHECK(e.describe(2).find("chain=gamma_a,gamma_b") != std::string::npos);
}

TEST_CASE("hard sharing uses one backbone for every task") {
    auto e = ExpandedBackbone<float>::shared({"a", "b"}, micro_spec(2), 1);
    CHECK(e.num_backbones() == 1);
    CHECK(e.links().empty());
    CHECK(&e.sub_backbone(0) == &e.sub_backbone(1));
    Rng rng(1);
    auto in = random_inputs<float>(2, micro_spec(2), 1, rng);
    auto f = e.fused_forward(in, nn::Mode::eval());
    CHECK(f.fused.size() == 2);
}
