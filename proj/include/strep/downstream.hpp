#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "strep/data.hpp"
#include "strep/trainer.hpp"

namespace strep {

/// Regression rows: one (node, window end) pair each, targets on the normalized scale.
struct RowSet {
    Eigen::MatrixXd X;                // [n, features]
    Eigen::MatrixXd Y;                // [n, horizon * C], step-major then feature
    std::vector<std::uint32_t> node;  // per row
    std::vector<std::size_t> time;    // absolute window end per row

    std::size_t size() const noexcept { return static_cast<std::size_t>(X.rows()); }
};

/// Window ends in `split` with T inputs behind and H targets ahead, all inside the split.
std::vector<std::size_t> eligible_ends(Range split, std::size_t T, std::size_t H);

/// Sorted row picks: all of them when fraction == 1, else floor(fraction * total) (at least 1) drawn uniformly.
std::vector<std::size_t> subsample(std::size_t total, double fraction, std::uint64_t seed);

/// Representation features. `data` must be normalized with the statistics used to encode `store`.
RowSet build_rows(const RepresentationStore& store, const SeriesTensor& data, Range split, std::size_t H,
                  double fraction = 1.0, std::uint64_t seed = 0);

/// Raw features: the last T normalized observations of the node (T * C values).
RowSet build_raw_rows(const SeriesTensor& data, Range split, std::size_t T, std::size_t H, double fraction = 1.0,
                      std::uint64_t seed = 0);

struct RidgeModel {
    Eigen::MatrixXd W;  // [features + 1, q], last row is the bias
    double lambda = 0;
    std::size_t horizon = 0;

    Eigen::MatrixXd predict(const Eigen::MatrixXd& X) const;
};

/// W = (X~'X~ + lambda I)^-1 X~'Y with an unregularized bias column, via Cholesky.
RidgeModel ridge_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda);

/// 0.5 * ||X~ W - Y||^2 + 0.5 * lambda * ||W without bias row||^2
double ridge_objective(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& W, double lambda);

const std::vector<double>& default_lambda_grid();

struct GridFit {
    RidgeModel model;
    std::vector<double> val_mse;  // per grid entry, in grid order
};

/// Fits every lambda on `train`, keeps the lowest validation MSE; ties go to the larger lambda.
GridFit ridge_grid_search(const RowSet& train, const RowSet& val, const std::vector<double>& grid);

struct Metrics {
    double mse = 0;
    double mae = 0;
};

Metrics metrics(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
Metrics evaluate(const RidgeModel& m, const RowSet& test);

/// Last input value repeated over the horizon, on the rows of build_raw_rows.
Metrics hl_baseline(const SeriesTensor& data, Range split, std::size_t T, std::size_t H);

struct EvalConfig {
    std::vector<std::size_t> horizons{12, 24, 48, 96};
    double fraction = 0.05;
    std::size_t repetitions = 10;
    std::vector<double> grid = default_lambda_grid();
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static EvalConfig from_json(const nlohmann::json& j);
};

struct EvalEntry {
    std::string method;  // "ST-ReP", "HL", "RidgeRaw"
    std::size_t horizon = 0;
    double mse = 0, mae = 0;          // mean over repetitions
    double mse_std = 0, mae_std = 0;  // population std over repetitions
    double lambda = 0;                // most frequent choice, larger on ties; 0 for HL
    double fraction = 0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
};

struct EvalTimings {
    double rows_seconds = 0;
    double fit_seconds = 0;
    double baseline_seconds = 0;
    nlohmann::json to_json() const;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    EvalTimings timings;  // kept out of csv() and to_json() so reports stay reproducible

    const EvalEntry& find(const std::string& method, std::size_t horizon) const;
    std::string csv() const;
    nlohmann::json to_json() const;
};

/// Stores for the three splits of `split`, encoded with the normalization of `data`.
struct SplitStores {
    RepresentationStore train, val, test;
};

SplitStores encode_splits(const Checkpoint& ckpt, const SeriesTensor& raw, const SplitSpec& split,
                          std::size_t workers = 1);

/// Full protocol on raw data: representation ridge plus HL and raw-ridge baselines per horizon.
EvalReport evaluate_protocol(const Checkpoint& ckpt, const SplitStores& stores, const SeriesTensor& raw,
                             const SplitSpec& split, const EvalConfig& cfg);

void write_report(const EvalReport& r, const std::string& dir);

}  // namespace strep
