#include "strep/adamw.hpp"

#include <cmath>

namespace strep {

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    require(cfg_.lr >= 0 && cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 && cfg_.beta2 < 1 &&
                cfg_.eps > 0 && cfg_.weight_decay >= 0,
            ErrorKind::Config, "AdamW: invalid hyperparameters");
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (auto* p : params_) {
        first_.emplace_back(p->value.shape());
        second_.emplace_back(p->value.shape());
    }
}

template <typename T>
void AdamW<T>::step() {
    bool any = false;
    for (auto* p : params_) any = any || p->grad_populated;
    require(any, ErrorKind::State, "AdamW step called before any backward pass");

    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter<T>& p = *params_[i];
        if (p.requires_update) {
            T* w = p.value.ptr();
            const T* g = p.grad.ptr();
            T* m = first_[i].ptr();
            T* v = second_[i].ptr();
            for (std::size_t k = 0; k < p.value.size(); ++k) {
                const double gk = g[k];
                const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
                const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                const double update = (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps);
                w[k] = static_cast<T>(w[k] * decay - cfg_.lr * update);
            }
        }
        p.zero_grad();
    }
}

template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (auto g : p->grad.data()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto* p : params)
            for (auto& g : p->grad.data()) g *= s;
    }
    return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(const ParamList<float>&, double);
template double clip_grad_norm<double>(const ParamList<double>&, double);

}  // namespace strep
