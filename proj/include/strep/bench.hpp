#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/downstream.hpp"
#include "strep/model.hpp"
#include "strep/trainer.hpp"

namespace strep {

struct BenchConfig {
    ModelConfig model;  // model.nodes is overridden per point
    std::vector<std::size_t> nodes{128, 256, 512, 1024, 2048};
    std::size_t batch = 8;
    std::size_t repeats = 5;
    std::size_t warmup = 1;
    double min_seconds = 1e-4;  // medians below this are rejected as timer noise
    std::uint64_t seed = 0;

    void validate() const;
};

struct ScalingPoint {
    std::size_t nodes = 0;
    double t_fwd = 0, t_fwd_bwd = 0;          // encoder, median seconds
    double naive_fwd = 0, naive_fwd_bwd = 0;  // all-pairs attention reference
    std::size_t parameters = 0;               // full model at this N
    std::size_t activation_bytes = 0;         // estimate, see activation_estimate
};

struct ScalingReport {
    std::vector<ScalingPoint> points;
    double slope_fwd = 0, slope_fwd_bwd = 0;
    double naive_slope_fwd = 0, naive_slope_fwd_bwd = 0;

    /// N,t_fwd,t_fwd_bwd,naive_fwd,naive_fwd_bwd,parameters,activation_bytes
    std::string csv() const;
    nlohmann::json to_json() const;
};

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Median wall time of `fn` over `repeats` runs after `warmup` discarded runs, monotonic clock.
double median_seconds(const std::function<void()>& fn, std::size_t repeats, std::size_t warmup);

/// Bytes of float32 op results retained by the autodiff graph for one training forward on `batch` windows.
/// An estimate of training activation memory; allocator overhead and gradient buffers are not counted.
std::size_t activation_estimate(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed = 0);

/// Encoder forward and forward+backward times per N, plus a dense O(N^2) spatial attention reference.
ScalingReport complexity_bench(const BenchConfig& cfg);

inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> tags{"full", "no_encoder", "no_pred", "no_recon", "no_ms"};
    return tags;
}

/// Config of one variant; removed loss terms get weight 0 and the survivors are rescaled to sum to 1.
TrainConfig ablation_config(const TrainConfig& base, const std::string& tag);

struct AblationRow {
    std::string variant;
    TrainHistory history;
    EvalReport report;
};

struct AblationResult {
    std::vector<AblationRow> rows;

    double mse(const std::string& variant, std::size_t horizon) const;
    /// variant,horizon,mse,mae
    std::string csv() const;
};

using VariantCallback = std::function<void(const std::string& variant, const PretrainResult& run)>;

/// Trains each listed variant on `raw` and evaluates it with the same protocol. `full`, when given, is reused as the
/// full-model run.
AblationResult ablation_run(const SeriesTensor& raw, const TrainConfig& base, const EvalConfig& eval,
                            const PretrainResult* full = nullptr, const VariantCallback& on_variant = {},
                            const std::vector<std::string>& variants = ablation_variants());

}  // namespace strep
