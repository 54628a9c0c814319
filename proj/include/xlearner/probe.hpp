#pragma once

// Frozen-feature transfer evaluation: multinomial logistic-regression probes
// with an L2 grid search, and a head-only fine-tune for the dense task.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xlearner/data.hpp"

namespace xl {

struct TransferDatasetSpec {
    std::string name;
    SyntheticGeneratorSpec generator;
    std::size_t train_size = 400;
    std::size_t test_size = 200;
    std::uint64_t seed = 0;
    friend bool operator==(const TransferDatasetSpec&, const TransferDatasetSpec&) = default;
};

struct SegFinetuneSpec {
    SyntheticGeneratorSpec generator{GeneratorKind::shape_seg, 4};
    std::size_t train_size = 256;
    std::size_t test_size = 64;
    std::uint64_t seed = 0;
    std::size_t steps = 100;
    std::size_t batch_size = 16;
    double lr = 0.1;
    friend bool operator==(const SegFinetuneSpec&, const SegFinetuneSpec&) = default;
};

struct ProbeConfig {
    std::vector<double> lambda_grid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
    std::size_t max_iterations = 1000;
    // 1-based stage index; 0 selects the last stage.
    std::size_t feature_stage = 0;
    double validation_fraction = 0.2;
    double tolerance = 1e-6;
    std::vector<TransferDatasetSpec> transfer_datasets;
    std::optional<SegFinetuneSpec> seg_finetune;
    friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

// Problems with a probe configuration, empty when valid.
std::vector<std::string> probe_config_issues(const ProbeConfig& c);

// Row-major [rows x cols] feature matrix with one label per row.
struct FeatureMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;
    std::vector<std::int32_t> labels;

    const double* row(std::size_t r) const { return data.data() + r * cols; }
};

// Maps a normalized image batch [B, 3, H, W] to a frozen feature map [B, C, h, w].
using FeatureMapFn = std::function<Tensor<float>(const Tensor<float>& images)>;

// Global-average-pooled features of `count` samples starting at `first`.
FeatureMatrix extract_features(const FeatureMapFn& model, const SyntheticSource& source, IndexRange range,
                               std::size_t batch_size = 64);

struct LbfgsResult {
    std::size_t iterations = 0;
    double loss = 0.0;
    bool converged = false;
};

// Multinomial logistic regression weights [classes x (cols + 1)], bias last.
struct LogisticModel {
    std::size_t classes = 0, cols = 0;
    std::vector<double> weights;
    std::vector<double> mean, inv_std;  // feature standardization from training rows

    std::int32_t predict(const double* x) const;
    double accuracy(const FeatureMatrix& m) const;
};

// Mean cross-entropy plus lambda/2 * |W|^2 (bias unregularized), minimized by L-BFGS.
LogisticModel fit_logistic(const FeatureMatrix& train, std::size_t classes, double lambda, std::size_t max_iterations,
                           double tolerance, LbfgsResult* info = nullptr);

struct ProbeResult {
    double accuracy = 0.0;        // test accuracy in [0, 1]
    double train_accuracy = 0.0;  // accuracy of the final model on its own training rows
    double best_lambda = 0.0;
    std::vector<double> validation_accuracy;  // aligned with the lambda grid
    std::size_t max_iterations_used = 0;
    std::vector<std::int32_t> test_predictions;
};

// Picks lambda on a validation split of `train` (ties toward larger lambda),
// refits on all of `train` and scores `test`. Throws ValidationError when the
// training labels hold fewer than two classes.
ProbeResult linear_probe(const FeatureMatrix& train, const FeatureMatrix& test, const ProbeConfig& config,
                         std::uint64_t seed = 0);

struct DatasetScore {
    std::string name;
    double accuracy = 0.0;
    double train_accuracy = 0.0;
    double best_lambda = 0.0;
};

struct TransferReport {
    static constexpr int kSchemaVersion = 1;
    std::string model;
    std::vector<DatasetScore> datasets;
    double avg_cls = 0.0;  // macro average of dataset accuracies
    std::optional<double> seg_miou;
};

// Probes every transfer dataset (optionally in parallel) and runs the seg fine-tune.
TransferReport evaluate_transfer(const FeatureMapFn& model, std::size_t feature_channels, const ProbeConfig& config,
                                 std::uint64_t seed, std::size_t jobs = 1, std::string model_name = "model");

// Head-only fine-tune of a fresh 1x1 conv + upsample head on frozen features; returns test mIoU.
double seg_finetune_miou(const FeatureMapFn& model, std::size_t feature_channels, const SegFinetuneSpec& spec,
                         std::uint64_t seed);

}  // namespace xl
