#pragma once

// Experiment configuration: task/source registry, backbone, variant,
// schedules and evaluation suite, loaded from a versioned JSON file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xlearner/backbone.hpp"
#include "xlearner/data.hpp"
#include "xlearner/heads.hpp"
#include "xlearner/probe.hpp"
#include "xlearner/reconciliation.hpp"
#include "xlearner/schedule.hpp"

namespace xl {

inline constexpr int kConfigVersion = 1;

enum class Variant { xlearner, xlearner_r, xlearner_t, xlearner_p, xlearner_pp, hard_sharing };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);
const std::vector<Variant>& all_variants();
// Topology a variant uses when the config leaves it unset.
Topology default_topology(Variant v);

struct TaskSpec {
    std::string task_id;
    LossKind loss_kind = LossKind::multiclass_ce;
    HeadSpec head;
    std::vector<std::string> source_ids;
    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct SourceSpec {
    std::string source_id;
    std::string task_id;
    SyntheticGeneratorSpec generator;
    std::size_t size = 0;
    std::uint64_t seed = 0;
    friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

enum class SqueezeMode { distill, prune };
std::string_view to_string(SqueezeMode m);

struct SqueezeConfig {
    // 1-based stages whose features are matched; empty means the last stage.
    std::vector<std::size_t> distill_stages;
    // Pruning sparsity; unset means 1 - 1/T.
    std::optional<double> prune_sparsity;
    // "fresh" (Glorot) or "warm" (copy of the first task's sub-backbone).
    std::string student_init = "fresh";
    // Width factor of X-Learner_r sub-backbones; unset means 1/sqrt(T).
    std::optional<double> reversed_width_factor;
    friend bool operator==(const SqueezeConfig&, const SqueezeConfig&) = default;
};

struct PreDistillConfig {
    double hint_weight = 1.0;
    // Steps per single-task single-source teacher; unset means tau.
    std::optional<std::size_t> teacher_steps;
    friend bool operator==(const PreDistillConfig&, const PreDistillConfig&) = default;
};

struct ExperimentConfig {
    int version = kConfigVersion;
    std::vector<TaskSpec> tasks;
    std::vector<SourceSpec> sources;
    SubBackboneSpec backbone;
    Variant variant = Variant::xlearner;
    Topology recon_topology = Topology::shallow_to_deep;
    ScheduleConfig expansion_schedule;
    ScheduleConfig squeeze_schedule{1000, 1000};
    SqueezeConfig squeeze;
    PreDistillConfig pre_distill;
    ProbeConfig eval;
    std::filesystem::path output_dir = "runs/default";
    std::uint64_t global_seed = 0;
    std::size_t checkpoint_every = 500;
    std::vector<Variant> compare_variants{Variant::hard_sharing, Variant::xlearner};

    std::size_t num_tasks() const { return tasks.size(); }
    const SourceSpec* find_source(const std::string& id) const;
    std::size_t task_index(const std::string& id) const;
    SqueezeMode squeeze_mode() const { return variant == Variant::xlearner_p ? SqueezeMode::prune : SqueezeMode::distill; }
    double prune_sparsity() const;
    double reversed_width_factor() const;
    std::vector<std::size_t> distill_stages() const;  // 0-based
    std::size_t pre_distill_teacher_steps() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct ValidationIssue {
    std::string path;  // JSON-style field path, e.g. tasks[1].source_ids[0]
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string to_text() const;
    std::string to_json() const;
};

ValidationReport validate_registry(const ExperimentConfig& config);

// Parses JSON text; fills defaults, then validates. Throws ConfigParseError on
// malformed input and ValidationError (listing every issue) on invalid content.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string to_json_text(const ExperimentConfig& config);

// Stable hash of everything that affects results (output_dir excluded).
std::string config_hash(const ExperimentConfig& config);

// Same config with a single task kept (its sources only), for standalone runs.
ExperimentConfig restrict_to_task(const ExperimentConfig& config, const std::string& task_id);

}  // namespace xl
