#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xlearner/backbone.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/probe.hpp"

using namespace xl;

namespace {

FeatureMatrix blobs(std::size_t per_class, std::size_t classes, std::size_t cols, double spread, Rng& rng) {
    FeatureMatrix m;
    m.cols = cols;
    std::vector<std::vector<double>> centers(classes, std::vector<double>(cols));
    for (auto& c : centers)
        for (auto& v : c) v = 4.0 * rng.normal();
    for (std::size_t i = 0; i < per_class * classes; ++i) {
        const std::size_t k = i % classes;
        for (std::size_t j = 0; j < cols; ++j) m.data.push_back(centers[k][j] + spread * rng.normal());
        m.labels.push_back(static_cast<std::int32_t>(k));
        ++m.rows;
    }
    return m;
}

FeatureMatrix duplicate_columns(const FeatureMatrix& m) {
    FeatureMatrix d;
    d.rows = m.rows;
    d.cols = 2 * m.cols;
    d.labels = m.labels;
    for (std::size_t r = 0; r < m.rows; ++r) {
        d.data.insert(d.data.end(), m.row(r), m.row(r) + m.cols);
        d.data.insert(d.data.end(), m.row(r), m.row(r) + m.cols);
    }
    return d;
}

SyntheticGeneratorSpec cls_gen(std::uint64_t palette = 5) {
    SyntheticGeneratorSpec g;
    g.kind = GeneratorKind::shape_class;
    g.num_classes = 4;
    g.height = g.width = 16;
    g.palette_seed = palette;
    return g;
}

FeatureMapFn backbone_features(SubBackbone<float>& b) {
    return [&b](const Tensor<float>& images) {
        ag::NoGradGuard ng;
        return b.forward(ag::Var<float>(images), nn::Mode::eval()).back().value();
    };
}

}  // namespace

TEST_CASE("separable blobs are classified perfectly") {
    Rng rng(1);
    FeatureMatrix all = blobs(60, 2, 2, 0.3, rng);
    FeatureMatrix train, test;
    train.cols = test.cols = 2;
    for (std::size_t r = 0; r < all.rows; ++r) {
        auto& dst = r < 80 ? train : test;
        dst.data.insert(dst.data.end(), all.row(r), all.row(r) + 2);
        dst.labels.push_back(all.labels[r]);
        ++dst.rows;
    }
    ProbeConfig cfg;
    auto res = linear_probe(train, test, cfg, 3);
    CHECK(res.accuracy == 1.0);
    CHECK(res.train_accuracy == 1.0);
    CHECK(res.validation_accuracy.size() == cfg.lambda_grid.size());
    CHECK(res.max_iterations_used <= cfg.max_iterations);
}

TEST_CASE("shuffled labels give chance accuracy") {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        FeatureMatrix train, test;
        for (auto* m : {&train, &test}) {
            m->cols = 16;
            m->rows = 400;
            for (std::size_t r = 0; r < m->rows; ++r) {
                for (std::size_t j = 0; j < 16; ++j) m->data.push_back(rng.normal());
                m->labels.push_back(static_cast<std::int32_t>(rng.below(4)));
            }
        }
        auto res = linear_probe(train, test, ProbeConfig{}, seed);
        sum += res.accuracy;
    }
    const double mean = sum / 5;
    MESSAGE("mean shuffled accuracy ", mean);
    CHECK(std::abs(mean - 0.25) <= 0.05);
}

TEST_CASE("duplicated feature columns keep predictions") {
    Rng rng(7);
    FeatureMatrix train = blobs(50, 4, 6, 1.0, rng);
    FeatureMatrix test;
    // Test rows drawn around the same centers as the training rows.
    Rng rng_test(7);
    FeatureMatrix both = blobs(75, 4, 6, 1.0, rng_test);
    test.cols = both.cols;
    for (std::size_t r = 200; r < both.rows; ++r) {
        test.data.insert(test.data.end(), both.row(r), both.row(r) + both.cols);
        test.labels.push_back(both.labels[r]);
        ++test.rows;
    }
    for (double lambda : ProbeConfig{}.lambda_grid) {
        auto a = fit_logistic(train, 4, lambda, 1000, 1e-8);
        auto b = fit_logistic(duplicate_columns(train), 4, lambda, 1000, 1e-8);
        const auto dup = duplicate_columns(test);
        std::size_t differ = 0;
        for (std::size_t r = 0; r < test.rows; ++r) differ += a.predict(test.row(r)) != b.predict(dup.row(r));
        CHECK(differ == 0);
    }
}

TEST_CASE("probe determinism and degenerate input") {
    Rng rng(9);
    auto train = blobs(40, 3, 5, 2.5, rng);
    auto test = blobs(20, 3, 5, 2.5, rng);
    auto a = linear_probe(train, test, ProbeConfig{}, 4);
    auto b = linear_probe(train, test, ProbeConfig{}, 4);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.best_lambda == b.best_lambda);
    CHECK(a.test_predictions == b.test_predictions);

    FeatureMatrix single = train;
    std::fill(single.labels.begin(), single.labels.end(), 1);
    CHECK_THROWS_AS(linear_probe(single, test, ProbeConfig{}, 0), ValidationError);
}

TEST_CASE("ties on validation pick the larger lambda") {
    // Perfectly separable with a wide margin: every lambda validates at 100%.
    Rng rng(2);
    auto train = blobs(30, 2, 3, 0.01, rng);
    auto res = linear_probe(train, train, ProbeConfig{}, 1);
    for (double v : res.validation_accuracy) CHECK(v == 1.0);
    CHECK(res.best_lambda == 1e-1);
}

TEST_CASE("feature extraction shapes and zero features") {
    SyntheticSource src("probe", cls_gen(), 10, 3);
    SubBackboneSpec spec;
    spec.stage_channels = {16, 64};
    spec.input_shape = {3, 16, 16};
    auto b = SubBackbone<float>::build(spec, 5);
    auto m = extract_features(backbone_features(b), src, {0, 10}, 4);
    CHECK(m.rows == 10);
    CHECK(m.cols == 64);
    CHECK(m.data.size() == 640);
    for (std::size_t i = 0; i < 10; ++i) CHECK(m.labels[i] == src.class_of(i));
    auto again = extract_features(backbone_features(b), src, {0, 10}, 3);
    CHECK(again.data == m.data);

    FeatureMapFn zero = [](const Tensor<float>& images) {
        return Tensor<float>({images.shape()[0], 8, 2, 2}, 0.0f);
    };
    auto z = extract_features(zero, src, {0, 10});
    for (double v : z.data) CHECK(v == 0.0);
    // A probe on constant features still runs and predicts one class.
    auto res = linear_probe(z, z, ProbeConfig{}, 0);
    CHECK(res.accuracy >= 0.0);
}

TEST_CASE("transfer report averages datasets and is reproducible") {
    SubBackboneSpec spec;
    spec.stage_channels = {8, 16};
    spec.input_shape = {3, 16, 16};
    auto b = SubBackbone<float>::build(spec, 5);
    ProbeConfig cfg;
    cfg.max_iterations = 200;
    for (int i = 0; i < 3; ++i) {
        auto g = cls_gen(20 + i);
        if (i == 1) g.kind = GeneratorKind::texture_class;
        cfg.transfer_datasets.push_back({"set" + std::to_string(i), g, 80, 40, static_cast<std::uint64_t>(i)});
    }
    SegFinetuneSpec seg;
    seg.generator.height = seg.generator.width = 16;
    seg.generator.num_classes = 3;
    seg.train_size = 16;
    seg.test_size = 8;
    seg.steps = 10;
    seg.batch_size = 4;
    cfg.seg_finetune = seg;
    auto r1 = evaluate_transfer(backbone_features(b), 16, cfg, 11, 1, "random");
    auto r2 = evaluate_transfer(backbone_features(b), 16, cfg, 11, 3, "random");
    REQUIRE(r1.datasets.size() == 3);
    double mean = 0;
    for (const auto& d : r1.datasets) mean += d.accuracy / 3;
    CHECK(std::abs(r1.avg_cls - mean) <= 1e-12);
    CHECK(r1.avg_cls == r2.avg_cls);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r1.datasets[i].accuracy == r2.datasets[i].accuracy);
        // Training-set accuracy is not below test accuracy beyond a small band.
        CHECK(r1.datasets[i].train_accuracy + 0.02 >= r1.datasets[i].accuracy);
    }
    REQUIRE(r1.seg_miou.has_value());
    CHECK(*r1.seg_miou == *r2.seg_miou);
    CHECK(*r1.seg_miou >= 0.0);
    CHECK(*r1.seg_miou <= 1.0);
}
