#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/adamw.hpp"
#include "strep/data.hpp"
#include "strep/model.hpp"

namespace strep {

struct TrainConfig {
    ModelConfig model;  // model.nodes and model.steps_per_day are taken from the data when 0
    LossConfig loss;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::size_t max_epochs = 100;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    double grad_clip = 5.0;
    std::size_t train_stride = 1;  // window stride inside the training split
    std::size_t val_stride = 1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    LossValues train;       // window-weighted means over the epoch
    double val_total = 0;
    double wall_seconds = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val = 0;
    bool early_stopped = false;

    /// epoch,L_recon,L_pred,L_MS,total,val_total,wall_seconds
    std::string csv() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    TrainConfig config;  // with model.nodes / steps_per_day resolved
    NormStats norm;
    std::uint64_t config_hash = 0;
    std::vector<std::pair<std::string, Tensor<float>>> params;

    Model<float> instantiate() const;
    static Checkpoint capture(Model<float>& model, const TrainConfig& cfg, const NormStats& norm);
    /// FNV-1a over parameter names and bytes.
    std::uint64_t parameter_hash() const;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
/// With `expected`, the stored config hash must match expected->hash().
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

struct PretrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Normalizes with training-split statistics, trains on training windows, selects on validation loss.
PretrainResult pretrain(const SeriesTensor& raw, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Fills unresolved data-dependent fields of `cfg` from the series.
TrainConfig resolve_config(const TrainConfig& cfg, const SeriesTensor& s);

/// Last-step representations of every input window in one split.
struct RepresentationStore {
    std::size_t nodes = 0;
    std::size_t width = 0;
    std::size_t input_len = 0;
    std::vector<std::size_t> window_end;  // absolute index of each window's last input step
    Tensor<float> reps;                   // [W, N, d]

    std::size_t size() const noexcept { return window_end.size(); }
    const float* row(std::size_t i) const { return reps.ptr() + i * nodes * width; }
};

RepresentationStore encode_dataset(const Checkpoint& ckpt, const SeriesTensor& raw, Range split,
                                   std::size_t batch_size = 32, std::size_t workers = 1);

void save_store(const RepresentationStore& s, const std::string& path);
RepresentationStore load_store(const std::string& path);

struct GridPoint {
    double alpha = 0, beta = 0;
    double best_val = 0;
};

struct GridResult {
    std::vector<GridPoint> points;
    std::size_t best = 0;
    PretrainResult best_run;
};

/// One pretraining run per (alpha, beta) with alpha + beta <= 1; lowest validation loss wins.
GridResult grid_search(const SeriesTensor& raw, const TrainConfig& base, const std::vector<double>& alphas,
                       const std::vector<double>& betas);

}  // namespace strep
