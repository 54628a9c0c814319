#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "xlearner/data.hpp"
#include "xlearner/errors.hpp"
#include "xlearner/heads.hpp"

using namespace xl;

TEST_CASE("classification sources are exactly balanced") {
    for (auto kind : {GeneratorKind::shape_class, GeneratorKind::texture_class}) {
        SyntheticGeneratorSpec spec;
        spec.kind = kind;
        spec.num_classes = 4;
        auto src = make_synthetic_source(spec, 400, 5);
        std::vector<int> counts(4, 0);
        for (std::size_t i = 0; i < src.size(); ++i) {
            auto s = src.get(i);
            REQUIRE(s.label.size() == 1);
            CHECK(s.label[0] == src.class_of(i));
            ++counts[s.label[0]];
        }
        for (int c : counts) CHECK(c == 100);
    }
}

TEST_CASE("samples are a pure function of spec, seed and index") {
    SyntheticGeneratorSpec spec;
    spec.kind = GeneratorKind::shape_seg;
    spec.num_classes = 4;
    auto a = make_synthetic_source(spec, 50, 11);
    auto b = make_synthetic_source(spec, 50, 11);
    auto c = make_synthetic_source(spec, 50, 12);
    CHECK(a.get(17).pixels == b.get(17).pixels);
    CHECK(a.get(17).label == b.get(17).label);
    CHECK(a.get(17).pixels != c.get(17).pixels);
    // Same index queried out of order.
    auto first = a.get(3);
    (void)a.get(40);
    CHECK(a.get(3).pixels == first.pixels);
}

TEST_CASE("segmentation background fraction stays in range") {
    SyntheticGeneratorSpec spec;
    spec.kind = GeneratorKind::shape_seg;
    spec.num_classes = 4;
    auto src = make_synthetic_source(spec, 1000, 21);
    std::size_t bg = 0, total = 0;
    std::vector<std::size_t> seen(4, 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto s = src.get(i);
        REQUIRE(s.label.size() == spec.height * spec.width);
        for (auto l : s.label) {
            REQUIRE(l >= 0);
            REQUIRE(l < 4);
            ++seen[l];
            bg += l == 0;
        }
        total += s.label.size();
    }
    const double frac = double(bg) / double(total);
    MESSAGE("background fraction " << frac);
    CHECK(frac > 0.3);
    CHECK(frac < 0.9);
    for (auto n : seen) CHECK(n > 0);
}

TEST_CASE("splits do not overlap") {
    auto [train, test] = split_indices(100, 0.2);
    CHECK(train.begin == 0);
    CHECK(train.end == test.begin);
    CHECK(test.end == 100);
    CHECK(test.size() == 20);
}

TEST_CASE("invalid generator specs are rejected") {
    SyntheticGeneratorSpec spec;
    spec.num_classes = 1;
    CHECK_THROWS_AS(validate_generator(spec), ValidationError);
    spec.num_classes = kMaxShapeClasses + 1;
    CHECK_THROWS_AS(validate_generator(spec), ValidationError);
}

TEST_CASE("batches carry provenance and normalized pixels") {
    SyntheticGeneratorSpec spec;
    auto src = make_synthetic_source(spec, 20, 1, "blob");
    std::vector<std::size_t> idx{3, 5, 7};
    auto b = make_batch(src, idx, "cls");
    CHECK(b.images.shape() == Shape{3, 3, 64, 64});
    CHECK(b.labels.size() == 3);
    CHECK(b.source_id == "blob");
    CHECK(b.task_id == "cls");
    CHECK(b.images[0] == normalize_pixel(src.get(3).pixels[0]));
}

TEST_CASE("source cache round trip") {
    SyntheticGeneratorSpec spec;
    spec.kind = GeneratorKind::texture_class;
    auto src = make_synthetic_source(spec, 12, 4);
    auto path = std::filesystem::temp_directory_path() / "xl_test_cache.bin";
    write_source_cache(src, path);
    auto samples = read_source_cache(path);
    REQUIRE(samples.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(samples[i].pixels == src.get(i).pixels);
        CHECK(samples[i].label == src.get(i).label);
    }
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
    CHECK_THROWS(read_source_cache(path));
    std::filesystem::remove(path);
}

TEST_CASE("uniform logits give ln C") {
    for (std::size_t c : {2u, 4u, 8u}) {
        ag::Var<double> logits(Tensor<double>({3, c}, 0.7));
        std::vector<std::int32_t> labels{0, 1, 1};
        CHECK(task_loss(LossKind::multiclass_ce, logits, labels).item() == doctest::Approx(std::log(double(c))).epsilon(1e-12));
        ag::Var<double> dense(Tensor<double>({1, c, 2, 2}, -0.3));
        std::vector<std::int32_t> px{0, 1, 0, 1};
        CHECK(task_loss(LossKind::per_pixel_ce, dense, px).item() == doctest::Approx(std::log(double(c))).epsilon(1e-12));
    }
}

TEST_CASE("cross-entropy matches a hand-rolled log-softmax oracle") {
    Rng rng(3);
    Tensor<double> l({5, 6});
    for (auto& v : l.values()) v = rng.uniform(-3, 3);
    std::vector<std::int32_t> labels{0, 5, 2, 2, 3};
    double oracle = 0;
    for (std::size_t n = 0; n < 5; ++n) {
        double m = -1e300, z = 0;
        for (std::size_t c = 0; c < 6; ++c) m = std::max(m, l[n * 6 + c]);
        for (std::size_t c = 0; c < 6; ++c) z += std::exp(l[n * 6 + c] - m);
        oracle += -(l[n * 6 + labels[n]] - m - std::log(z));
    }
    oracle /= 5;
    CHECK(std::abs(task_loss(LossKind::multiclass_ce, ag::Var<double>(l), labels).item() - oracle) < 1e-6);

    Tensor<double> sharp({1, 3}, 0.0);
    sharp[1] = 200.0;
    std::vector<std::int32_t> one{1};
    CHECK(task_loss(LossKind::multiclass_ce, ag::Var<double>(sharp), one).item() < 1e-12);
    std::vector<std::int32_t> bad{3};
    CHECK_THROWS(task_loss(LossKind::multiclass_ce, ag::Var<double>(sharp), bad));
}

TEST_CASE("heads produce label-shaped predictions") {
    Head<float> cls({LossKind::multiclass_ce, 5}, 16, 64, 64, 1);
    Head<float> seg({LossKind::per_pixel_ce, 4}, 16, 64, 64, 1);
    ag::Var<float> f(Tensor<float>({2, 16, 2, 2}, 0.1f));
    CHECK(cls.forward(f).shape() == Shape{2, 5});
    CHECK(seg.forward(f).shape() == Shape{2, 4, 64, 64});
}
