#include "xlearner/schedule.hpp"

#include <cmath>

#include "xlearner/simd/kernels.hpp"

namespace xl {

std::vector<std::string> schedule_issues(const ScheduleConfig& s) {
    std::vector<std::string> out;
    if (s.total_steps == 0) out.emplace_back("total_steps must be positive");
    if (s.phase_threshold > s.total_steps) out.emplace_back("phase_threshold must satisfy 0 <= tau <= K");
    if (s.batch_size == 0) out.emplace_back("batch_size must be positive");
    if (!(s.base_lr > 0)) out.emplace_back("base_lr must be positive");
    if (s.momentum < 0 || s.momentum >= 1) out.emplace_back("momentum must be in [0, 1)");
    if (s.weight_decay < 0) out.emplace_back("weight_decay must be non-negative");
    if (s.decay_factors.size() != s.decay_milestones.size())
        out.emplace_back("decay_factors and decay_milestones must have equal length");
    for (std::size_t i = 0; i < s.decay_milestones.size(); ++i) {
        const double m = s.decay_milestones[i];
        if (!(m > 0 && m < 1)) out.emplace_back("decay milestones must lie in (0, 1)");
        if (i > 0 && !(m > s.decay_milestones[i - 1])) out.emplace_back("decay milestones must be strictly increasing");
    }
    return out;
}

double lr_at(std::size_t step, const ScheduleConfig& schedule) {
    double factor = 1.0;
    const double k = static_cast<double>(schedule.total_steps);
    for (std::size_t i = 0; i < schedule.decay_milestones.size() && i < schedule.decay_factors.size(); ++i) {
        // Milestone step is the first integer step at or past fraction * K.
        const auto milestone = static_cast<std::size_t>(std::ceil(schedule.decay_milestones[i] * k - 1e-9));
        if (step >= milestone) factor = schedule.decay_factors[i];
    }
    return schedule.base_lr * factor;
}

template <class T>
void Sgd<T>::step(std::span<nn::ParamRef<T>> params, double lr) {
    const auto& kern = simd::active_kernels<T>();
    for (auto& p : params) {
        if (!p.var.has_grad()) continue;
        auto& w = p.var.mutable_value();
        auto [it, inserted] = buffers_.try_emplace(p.name, w.shape());
        kern.sgd_momentum(w.data(), p.var.grad().data(), it->second.data(), w.numel(), static_cast<T>(lr),
                          static_cast<T>(momentum_), static_cast<T>(weight_decay_), inserted);
        p.var.zero_grad();
    }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace xl
