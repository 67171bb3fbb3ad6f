#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "strep/tensor.hpp"

namespace strep {

/// Raw spatiotemporal values, node-major: values[(n * steps + t) * features + c].
struct SeriesTensor {
    std::size_t nodes = 0;     // N
    std::size_t steps = 0;     // T_total
    std::size_t features = 1;  // C
    std::vector<float> values;
    int steps_per_day = 288;
    int start_tod = 0;  // time-of-day slot of step 0, in [0, steps_per_day)
    int start_dow = 0;  // day of week of step 0, in [0, 7)
    int interval_seconds = 300;

    float at(std::size_t n, std::size_t t, std::size_t c = 0) const { return values[(n * steps + t) * features + c]; }
    float& at(std::size_t n, std::size_t t, std::size_t c = 0) { return values[(n * steps + t) * features + c]; }

    int tod(std::size_t t) const { return static_cast<int>((static_cast<std::size_t>(start_tod) + t) % steps_per_day); }
    int dow(std::size_t t) const {
        return static_cast<int>((static_cast<std::size_t>(start_dow) + (static_cast<std::size_t>(start_tod) + t) / steps_per_day) % 7);
    }

    /// Checks extents, calendar metadata and finiteness; throws Data errors.
    void validate() const;
};

// --- container format -------------------------------------------------------
// 16-byte header: "STRP", u16 version, u16 C, u32 N, u32 T_total (little-endian),
// then N*T_total*C little-endian float32 values. Calendar metadata lives in a JSON
// sidecar at <path>.json.

inline constexpr std::uint16_t kContainerVersion = 1;

void save_container(const SeriesTensor& s, const std::string& path);
SeriesTensor load_container(const std::string& path);
std::string sidecar_path(const std::string& path);

struct CsvImportOptions {
    int steps_per_day = 288;
    int start_tod = 0;
    int start_dow = 0;
};

/// Rows are time steps, columns are nodes, one feature. An optional non-numeric header row is skipped.
SeriesTensor import_csv(const std::string& path, const CsvImportOptions& opts = {});

// --- normalization and splitting -------------------------------------------

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const noexcept { return end - begin; }
    bool operator==(const Range&) const = default;
};

struct SplitSpec {
    Range train, val, test;
};

/// One pooled mean/std for every variable.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
    bool operator==(const NormStats&) const = default;
};

NormStats zscore_fit(const SeriesTensor& s, Range train);
SeriesTensor zscore_apply(const SeriesTensor& s, const NormStats& stats);
SeriesTensor zscore_invert(const SeriesTensor& s, const NormStats& stats);

/// Chronological 6:2:2 split; each part must hold at least `min_length` steps.
SplitSpec split_622(std::size_t total_steps, std::size_t min_length);

// --- windows -----------------------------------------------------------------

struct WindowSample {
    Tensor<float> x_curr;  // [N, T, C]
    Tensor<float> x_tgt;   // [N, F, C]
    std::vector<std::int32_t> tod_idx;  // length T
    std::vector<std::int32_t> dow_idx;  // length T
    std::size_t window_end = 0;         // absolute index of the last input step
};

/// Start indices of every window whose input (T) and target (F) lie inside `split`.
std::vector<std::size_t> window_starts(Range split, std::size_t T, std::size_t F, std::size_t stride = 1);

WindowSample make_window(const SeriesTensor& s, std::size_t start, std::size_t T, std::size_t F);

/// Lazily materialized sequence of windows over one split.
class WindowStream {
   public:
    WindowStream(const SeriesTensor& s, Range split, std::size_t T, std::size_t F, std::size_t stride = 1);

    std::optional<WindowSample> next();
    std::size_t size() const noexcept { return starts_.size(); }

   private:
    const SeriesTensor* series_;
    std::vector<std::size_t> starts_;
    std::size_t T_, F_, cursor_ = 0;
};

// --- synthetic data ------------------------------------------------------------

struct SynthConfig {
    std::size_t nodes = 64;
    std::size_t days = 14;
    int steps_per_day = 288;
    std::size_t graph_degree = 4;    // nearest neighbours per node in the geometric graph
    double diffusion_weight = 0.5;   // share of the AR(1) state pulled from neighbours
    double noise_sigma = 3.0;
    double ar_coefficient = 0.9;
    double base_level = 100.0;
    double daily_amplitude = 40.0;
    double weekly_modulation = 0.2;  // relative amplitude swing across the week
    std::uint64_t seed = 0;
};

struct SynthResult {
    SeriesTensor series;
    std::vector<std::uint8_t> adjacency;  // [N, N] symmetric, zero diagonal
    Tensor<float> noise;                  // [N, T_total] diffused AR(1) component
};

/// x[n,t] = level_n + amp_n * week(t) * sin(2 pi tod(t)/steps_per_day + phase_n) + z[n,t],
/// z_t = ar * ((1 - w) z_{t-1} + w * A_rownorm z_{t-1}) + sigma * eps_t.
SynthResult synth_generate(const SynthConfig& cfg);

// --- dataset statistics --------------------------------------------------------

struct CvResult {
    double cv_percent = 0.0;                // mean of 100 * std_i / mean_i over kept variables
    std::vector<std::size_t> excluded;      // variable indices (n * C + c) with zero mean
};

CvResult compute_cv(const SeriesTensor& s);

struct StrengthResult {
    double trend = 0.0;
    double seasonality = 0.0;
};

/// Moving-average decomposition per variable, variance-ratio strengths averaged over variables.
StrengthResult trend_seasonality_strength(const SeriesTensor& s, std::size_t period);

/// Single-series variant used by the per-variable average.
StrengthResult series_strength(std::span<const double> x, std::size_t period);

}  // namespace strep
