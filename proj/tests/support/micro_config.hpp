#pragma once

// Tiny configurations (16x16 images, 2-stage backbones) for fast trainer tests.

#include <string>

#include <json.hpp>

#include "xlearner/config.hpp"

namespace xl::testing {

inline nlohmann::json micro_config_json(const std::string& variant = "xlearner", std::size_t steps = 8,
                                        std::size_t tau = 4) {
    auto gen = [](const char* kind, int classes, int palette) {
        return nlohmann::json{{"kind", kind}, {"num_classes", classes}, {"height", 16}, {"width", 16},
                              {"noise_level", 0.1}, {"palette_seed", palette}};
    };
    nlohmann::json j{
        {"version", 1},
        {"global_seed", 1234},
        {"variant", variant},
        {"backbone", {{"stage_channels", {4, 8}}, {"input_shape", {3, 16, 16}}}},
        {"tasks",
         {{{"task_id", "cls"}, {"loss_kind", "multiclass-ce"}, {"source_ids", {"cls_a", "cls_b"}}},
          {{"task_id", "seg"}, {"loss_kind", "per-pixel-ce"}, {"source_ids", {"seg_a"}}}}},
        {"sources",
         {{{"source_id", "cls_a"}, {"task_id", "cls"}, {"size", 40}, {"seed", 1}, {"generator", gen("shape-class", 4, 1)}},
          {{"source_id", "cls_b"}, {"task_id", "cls"}, {"size", 24}, {"seed", 2}, {"generator", gen("texture-class", 4, 2)}},
          {{"source_id", "seg_a"}, {"task_id", "seg"}, {"size", 32}, {"seed", 3}, {"generator", gen("shape-seg", 3, 3)}}}},
        {"expansion_schedule", {{"total_steps", steps}, {"phase_threshold", tau}, {"batch_size", 4}}},
        {"squeeze_schedule", {{"total_steps", 6}, {"batch_size", 4}}},
        {"pre_distill", {{"teacher_steps", 3}}},
        {"checkpoint_every", 3},
        {"eval",
         {{"max_iterations", 50},
          {"transfer_datasets",
           {{{"name", "probe_shapes"}, {"train_size", 32}, {"test_size", 16}, {"seed", 9}, {"generator", gen("shape-class", 4, 7)}}}},
          {"seg_finetune",
           {{"generator", gen("shape-seg", 3, 8)}, {"train_size", 8}, {"test_size", 4}, {"steps", 2}, {"batch_size", 4}}}}}};
    if (variant == "xlearner_p") j["squeeze"] = {{"prune_sparsity", 0.5}};
    if (variant == "xlearner_r") j["backbone"]["stage_channels"] = {8, 16};
    return j;
}

inline ExperimentConfig micro_config(const std::string& variant = "xlearner", std::size_t steps = 8,
                                     std::size_t tau = 4) {
    return parse_experiment_config(micro_config_json(variant, steps, tau).dump());
}

}  // namespace xl::testing
