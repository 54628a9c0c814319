#pragma once

// Optimization schedule and SGD with momentum / weight decay.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xlearner/nn.hpp"

namespace xl {

struct ScheduleConfig {
    std::size_t total_steps = 2000;
    std::size_t phase_threshold = 1000;
    std::size_t batch_size = 32;
    double base_lr = 0.2;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<double> decay_factors{0.5, 0.2, 0.1};
    std::vector<double> decay_milestones{0.5, 0.7, 0.9};

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

// Problems with the schedule, empty when valid.
std::vector<std::string> schedule_issues(const ScheduleConfig& s);

// base_lr times the factor of the last milestone reached (step >= fraction * K).
double lr_at(std::size_t step, const ScheduleConfig& schedule);

template <class T>
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    // Updates every parameter that holds a gradient; parameters without one are
    // left untouched (no decay either). Gradients are cleared afterwards.
    void step(std::span<nn::ParamRef<T>> params, double lr);

    // Momentum buffers by parameter name, for checkpointing.
    std::map<std::string, Tensor<T>>& state() { return buffers_; }
    const std::map<std::string, Tensor<T>>& state() const { return buffers_; }

private:
    double momentum_, weight_decay_;
    std::map<std::string, Tensor<T>> buffers_;
};

}  // namespace xl
