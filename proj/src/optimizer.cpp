#include "syntaxlm/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

void TrainSchedule::validate() const {
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
        throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") must be below total_steps (" +
                          std::to_string(total_steps) + ")");
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

double TrainSchedule::learning_rate(int step) const {
    if (step < 0 || step >= total_steps) throw std::out_of_range("step outside the schedule");
    if (step < warmup_steps) return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

Adam::Adam(const ParamStore& layout, AdamConfig config)
    : config_(config),
      slots_(layout.slots()),
      frozen_(layout.slot_count(), 0),
      m_(layout.size(), 0.0),
      v_(layout.size(), 0.0) {}

void Adam::freeze(std::size_t slot) { frozen_.at(slot) = 1; }

void Adam::step(ParamStore& params, const ParamStore& grads, double learning_rate) {
    if (params.size() != m_.size() || !grads.same_layout(params))
        throw std::invalid_argument("Adam::step() called with a different parameter layout");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto p = params.values();
    const auto g = grads.values();
    for (std::size_t s = 0; s < slots_.size(); ++s) {
        if (frozen_[s]) continue;
        const auto& slot = slots_[s];
        const double decay = slot.decays() ? config_.weight_decay : 0.0;
        for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
            m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g[i];
            v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            p[i] -= learning_rate * (mhat / (std::sqrt(vhat) + config_.epsilon) + decay * p[i]);
        }
    }
}

}  // namespace syntaxlm
