#pragma once

#include <cstdint>
#include <vector>

#include "syntaxlm/tensor.hpp"

namespace syntaxlm {

// Linear warm-up to peak_lr over warmup_steps, then linear decay to 0 at total_steps.
struct TrainSchedule {
    int total_steps = 2000;
    int warmup_steps = 120;
    double peak_lr = 3e-4;
    int batch_size = 16;
    std::uint64_t seed = 42;

    void validate() const;
    // step is 0-based: lr(0) = peak / warmup, lr(warmup) = peak.
    double learning_rate(int step) const;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;  // decoupled; only ParamKind::weight tensors decay
};

class Adam {
public:
    Adam(const ParamStore& layout, AdamConfig config = {});

    // Frozen tensors keep their values regardless of gradients and decay.
    void freeze(std::size_t slot);
    bool frozen(std::size_t slot) const { return frozen_.at(slot) != 0; }

    void step(ParamStore& params, const ParamStore& grads, double learning_rate);
    long steps_taken() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return config_; }

private:
    AdamConfig config_;
    std::vector<TensorSlot> slots_;
    std::vector<char> frozen_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

}  // namespace syntaxlm
