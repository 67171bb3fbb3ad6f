#pragma once

#include <cstdint>
#include <vector>

#include "strep/nn.hpp"

namespace strep {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias correction. Zeroes gradients after each step.
template <typename T>
class AdamW {
   public:
    AdamW(ParamList<T> params, AdamWConfig cfg);

    void step();

    std::int64_t step_count() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return cfg_; }
    void set_lr(double lr) noexcept { cfg_.lr = lr; }

   private:
    ParamList<T> params_;
    AdamWConfig cfg_;
    std::vector<Tensor<T>> first_;
    std::vector<Tensor<T>> second_;
    std::int64_t step_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm);

}  // namespace strep
