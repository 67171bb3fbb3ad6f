#include "strep/downstream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "strep/byteio.hpp"
#include "strep/seed.hpp"

namespace strep {

using nlohmann::json;
using Eigen::MatrixXd;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void fill_targets(RowSet& rows, const SeriesTensor& data, std::size_t H) {
    const std::size_t C = data.features;
    rows.Y.resize(static_cast<Eigen::Index>(rows.node.size()), static_cast<Eigen::Index>(H * C));
    for (std::size_t i = 0; i < rows.node.size(); ++i)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t c = 0; c < C; ++c)
                rows.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h * C + c)) =
                    data.at(rows.node[i], rows.time[i] + 1 + h, c);
}

// Row picks over eligible (end, node) pairs, end-major.
void pick_rows(RowSet& rows, const std::vector<std::size_t>& ends, std::size_t N, double fraction,
               std::uint64_t seed) {
    const auto picks = subsample(ends.size() * N, fraction, seed);
    rows.node.resize(picks.size());
    rows.time.resize(picks.size());
    for (std::size_t i = 0; i < picks.size(); ++i) {
        rows.time[i] = ends[picks[i] / N];
        rows.node[i] = static_cast<std::uint32_t>(picks[i] % N);
    }
}

MatrixXd augment(const MatrixXd& X) {
    MatrixXd Xa(X.rows(), X.cols() + 1);
    Xa.leftCols(X.cols()) = X;
    Xa.col(X.cols()).setOnes();
    return Xa;
}

// Solves (G + lambda * diag(1..1, 0)) W = B.
MatrixXd ridge_solve(const MatrixXd& G, const MatrixXd& B, double lambda) {
    MatrixXd A = G;
    A.diagonal().head(A.rows() - 1).array() += lambda;
    Eigen::LLT<MatrixXd> llt(A);
    const auto diag = llt.matrixLLT().diagonal().cwiseAbs();
    require(llt.info() == Eigen::Success && diag.minCoeff() > 1e-10 * std::max(1.0, diag.maxCoeff()),
            ErrorKind::Numeric,
            "ridge: singular normal equations at lambda=" + std::to_string(lambda) + " (rank-deficient features)");
    return llt.solve(B);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double pstd(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

double lambda_mode(const std::vector<double>& picks) {
    std::map<double, std::size_t> count;
    for (double l : picks) ++count[l];
    double best = 0;
    std::size_t best_n = 0;
    for (const auto& [l, n] : count)
        if (n >= best_n) best = l, best_n = n;
    return best;
}

}  // namespace

std::vector<std::size_t> eligible_ends(Range split, std::size_t T, std::size_t H) {
    std::vector<std::size_t> ends;
    require(T >= 1 && H >= 1, ErrorKind::Config, "rows: input length and horizon must be positive");
    if (split.size() < T + H) return ends;
    for (std::size_t e = split.begin + T - 1; e + H < split.end; ++e) ends.push_back(e);
    return ends;
}

std::vector<std::size_t> subsample(std::size_t total, double fraction, std::uint64_t seed) {
    require(fraction > 0 && fraction <= 1, ErrorKind::Config, "sample fraction must lie in (0, 1]");
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (fraction == 1.0 || total == 0) return idx;
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total))));
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

RowSet build_rows(const RepresentationStore& store, const SeriesTensor& data, Range split, std::size_t H,
                  double fraction, std::uint64_t seed) {
    require(store.nodes == data.nodes, ErrorKind::Config,
            "rows: store has " + std::to_string(store.nodes) + " nodes, data has " + std::to_string(data.nodes));
    require(store.size() > 0, ErrorKind::Data, "rows: empty representation store");
    const std::size_t first = store.window_end.front();
    require(store.input_len >= 1 && first == split.begin + store.input_len - 1 && store.window_end.back() + 1 == split.end &&
                store.window_end.back() - first + 1 == store.size(),
            ErrorKind::Data, "rows: representation store does not cover the split");
    const auto ends = eligible_ends(split, store.input_len, H);
    require(!ends.empty(), ErrorKind::Data, "rows: no window in the split leaves " + std::to_string(H) + " target steps");

    RowSet rows;
    pick_rows(rows, ends, store.nodes, fraction, seed);
    const std::size_t d = store.width;
    rows.X.resize(static_cast<Eigen::Index>(rows.node.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.node.size(); ++i) {
        const float* r = store.row(rows.time[i] - first) + rows.node[i] * d;
        for (std::size_t k = 0; k < d; ++k) rows.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[k];
    }
    fill_targets(rows, data, H);
    return rows;
}

RowSet build_raw_rows(const SeriesTensor& data, Range split, std::size_t T, std::size_t H, double fraction,
                      std::uint64_t seed) {
    const auto ends = eligible_ends(split, T, H);
    require(!ends.empty(), ErrorKind::Data, "rows: no window in the split leaves " + std::to_string(H) + " target steps");
    const std::size_t C = data.features;
    RowSet rows;
    pick_rows(rows, ends, data.nodes, fraction, seed);
    rows.X.resize(static_cast<Eigen::Index>(rows.node.size()), static_cast<Eigen::Index>(T * C));
    for (std::size_t i = 0; i < rows.node.size(); ++i)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c)
                rows.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t * C + c)) =
                    data.at(rows.node[i], rows.time[i] + 1 - T + t, c);
    fill_targets(rows, data, H);
    return rows;
}

MatrixXd RidgeModel::predict(const MatrixXd& X) const {
    require(X.cols() + 1 == W.rows(), ErrorKind::Shape, "ridge: feature width does not match the model");
    return (X * W.topRows(X.cols())).rowwise() + W.row(X.cols());
}

RidgeModel ridge_fit(const MatrixXd& X, const MatrixXd& Y, double lambda) {
    require(X.rows() >= 1 && X.rows() == Y.rows(), ErrorKind::Shape, "ridge: need matching, non-empty X and Y");
    require(lambda >= 0 && std::isfinite(lambda), ErrorKind::Config, "ridge: lambda must be finite and >= 0");
    const MatrixXd Xa = augment(X);
    RidgeModel m;
    m.W = ridge_solve(Xa.transpose() * Xa, Xa.transpose() * Y, lambda);
    m.lambda = lambda;
    require(m.W.allFinite(), ErrorKind::Numeric, "ridge: non-finite weights");
    return m;
}

double ridge_objective(const MatrixXd& X, const MatrixXd& Y, const MatrixXd& W, double lambda) {
    const MatrixXd r = augment(X) * W - Y;
    return 0.5 * r.squaredNorm() + 0.5 * lambda * W.topRows(W.rows() - 1).squaredNorm();
}

const std::vector<double>& default_lambda_grid() {
    static const std::vector<double> grid{0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
    return grid;
}

GridFit ridge_grid_search(const RowSet& train, const RowSet& val, const std::vector<double>& grid) {
    require(!grid.empty(), ErrorKind::Config, "ridge: empty lambda grid");
    require(val.size() > 0, ErrorKind::Data, "ridge: empty validation rows");
    require(train.size() > 0, ErrorKind::Data, "ridge: empty training rows");
    const MatrixXd Xt = augment(train.X), Xv = augment(val.X);
    const MatrixXd G = Xt.transpose() * Xt, B = Xt.transpose() * train.Y;
    const MatrixXd Gv = Xv.transpose() * Xv, Bv = Xv.transpose() * val.Y;
    const double yy = val.Y.squaredNorm();
    const double count = static_cast<double>(val.Y.size());

    GridFit out;
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] >= 0, ErrorKind::Config, "ridge: negative lambda in grid");
        const MatrixXd W = ridge_solve(G, B, grid[i]);
        // ||Xv W - Yv||^2 expanded through the validation Gram matrices
        const double sse = yy - 2.0 * (W.array() * Bv.array()).sum() + (W.array() * (Gv * W).array()).sum();
        out.val_mse.push_back(std::max(0.0, sse) / count);
        const bool better = out.val_mse[i] < out.val_mse[best] ||
                            (out.val_mse[i] == out.val_mse[best] && grid[i] > grid[best]);
        if (i == 0 || better) {
            best = i;
            out.model.W = W;
        }
    }
    out.model.lambda = grid[best];
    return out;
}

Metrics metrics(const MatrixXd& pred, const MatrixXd& target) {
    require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorKind::Shape,
            "metrics: prediction and target shapes differ");
    require(target.size() > 0, ErrorKind::Data, "metrics: empty test set");
    const auto diff = (pred - target).array();
    const double n = static_cast<double>(target.size());
    return {diff.square().sum() / n, diff.abs().sum() / n};
}

Metrics evaluate(const RidgeModel& m, const RowSet& test) { return metrics(m.predict(test.X), test.Y); }

Metrics hl_baseline(const SeriesTensor& data, Range split, std::size_t T, std::size_t H) {
    const auto ends = eligible_ends(split, T, H);
    require(!ends.empty(), ErrorKind::Data, "HL: no window in the split leaves " + std::to_string(H) + " target steps");
    double se = 0, ae = 0;
    for (std::size_t n = 0; n < data.nodes; ++n)
        for (auto e : ends)
            for (std::size_t c = 0; c < data.features; ++c) {
                const double last = data.at(n, e, c);
                for (std::size_t h = 1; h <= H; ++h) {
                    const double d = data.at(n, e + h, c) - last;
                    se += d * d;
                    ae += std::abs(d);
                }
            }
    const double count = static_cast<double>(data.nodes * ends.size() * data.features * H);
    return {se / count, ae / count};
}

void EvalConfig::validate() const {
    require(!horizons.empty(), ErrorKind::Config, "eval: no horizons");
    for (auto h : horizons) require(h >= 1, ErrorKind::Config, "eval: horizons must be positive");
    require(fraction > 0 && fraction <= 1, ErrorKind::Config, "eval: fraction must lie in (0, 1]");
    require(repetitions >= 1, ErrorKind::Config, "eval: repetitions must be >= 1");
    require(!grid.empty(), ErrorKind::Config, "eval: empty lambda grid");
    for (double l : grid) require(l >= 0 && std::isfinite(l), ErrorKind::Config, "eval: lambda values must be >= 0");
}

json EvalConfig::to_json() const {
    return {{"horizons", horizons}, {"fraction", fraction}, {"repetitions", repetitions}, {"grid", grid}, {"seed", seed}};
}

EvalConfig EvalConfig::from_json(const json& j) {
    EvalConfig c;
    try {
        c.horizons = j.at("horizons").get<std::vector<std::size_t>>();
        c.fraction = j.at("fraction");
        c.repetitions = j.at("repetitions");
        c.grid = j.at("grid").get<std::vector<double>>();
        c.seed = j.at("seed");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("eval config: ") + e.what());
    }
    return c;
}

json EvalTimings::to_json() const {
    return {{"rows_seconds", rows_seconds}, {"fit_seconds", fit_seconds}, {"baseline_seconds", baseline_seconds}};
}

const EvalEntry& EvalReport::find(const std::string& method, std::size_t horizon) const {
    for (const auto& e : entries)
        if (e.method == method && e.horizon == horizon) return e;
    fail(ErrorKind::State, "report has no " + method + " entry at horizon " + std::to_string(horizon));
}

std::string EvalReport::csv() const {
    std::ostringstream out;
    out << "method,horizon,mse,mae,mse_std,mae_std,lambda,fraction,train_rows,test_rows\n";
    char buf[512];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g,%.9g,%g,%g,%zu,%zu\n", e.method.c_str(), e.horizon, e.mse,
                      e.mae, e.mse_std, e.mae_std, e.lambda, e.fraction, e.train_rows, e.test_rows);
        out << buf;
    }
    return out.str();
}

json EvalReport::to_json() const {
    json rows = json::array();
    for (const auto& e : entries)
        rows.push_back({{"method", e.method},
                        {"horizon", e.horizon},
                        {"mse", e.mse},
                        {"mae", e.mae},
                        {"mse_std", e.mse_std},
                        {"mae_std", e.mae_std},
                        {"lambda", e.lambda},
                        {"fraction", e.fraction},
                        {"train_rows", e.train_rows},
                        {"test_rows", e.test_rows}});
    return {{"entries", rows}};
}

SplitStores encode_splits(const Checkpoint& ckpt, const SeriesTensor& raw, const SplitSpec& split,
                          std::size_t workers) {
    return {encode_dataset(ckpt, raw, split.train, 32, workers), encode_dataset(ckpt, raw, split.val, 32, workers),
            encode_dataset(ckpt, raw, split.test, 32, workers)};
}

EvalReport evaluate_protocol(const Checkpoint& ckpt, const SplitStores& stores, const SeriesTensor& raw,
                             const SplitSpec& split, const EvalConfig& cfg) {
    cfg.validate();
    const auto data = zscore_apply(raw, ckpt.norm);
    const std::size_t T = ckpt.config.model.input_len;
    EvalReport report;
    for (auto H : cfg.horizons) {
        auto t0 = std::chrono::steady_clock::now();
        const auto val = build_rows(stores.val, data, split.val, H);
        const auto test = build_rows(stores.test, data, split.test, H);
        const auto raw_val = build_raw_rows(data, split.val, T, H);
        const auto raw_test = build_raw_rows(data, split.test, T, H);
        report.timings.rows_seconds += seconds_since(t0);

        EvalEntry rep{"ST-ReP", H}, ridge{"RidgeRaw", H};
        std::vector<double> rep_mse, rep_mae, rep_lambda, raw_mse, raw_mae, raw_lambda;
        for (std::size_t r = 0; r < cfg.repetitions; ++r) {
            const auto seed = derive_seed(derive_seed(cfg.seed, H), r);
            t0 = std::chrono::steady_clock::now();
            const auto train = build_rows(stores.train, data, split.train, H, cfg.fraction, seed);
            report.timings.rows_seconds += seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const auto fit = ridge_grid_search(train, val, cfg.grid);
            const auto m = evaluate(fit.model, test);
            report.timings.fit_seconds += seconds_since(t0);
            rep_mse.push_back(m.mse), rep_mae.push_back(m.mae), rep_lambda.push_back(fit.model.lambda);
            rep.train_rows = train.size();

            t0 = std::chrono::steady_clock::now();
            const auto raw_train = build_raw_rows(data, split.train, T, H, cfg.fraction, seed);
            const auto raw_fit = ridge_grid_search(raw_train, raw_val, cfg.grid);
            const auto rm = evaluate(raw_fit.model, raw_test);
            report.timings.baseline_seconds += seconds_since(t0);
            raw_mse.push_back(rm.mse), raw_mae.push_back(rm.mae), raw_lambda.push_back(raw_fit.model.lambda);
            ridge.train_rows = raw_train.size();
        }
        for (auto* e : {&rep, &ridge}) {
            const bool is_rep = e == &rep;
            const auto& mse = is_rep ? rep_mse : raw_mse;
            const auto& mae = is_rep ? rep_mae : raw_mae;
            e->mse = mean(mse), e->mae = mean(mae);
            e->mse_std = pstd(mse), e->mae_std = pstd(mae);
            e->lambda = lambda_mode(is_rep ? rep_lambda : raw_lambda);
            e->fraction = cfg.fraction;
            e->test_rows = test.size();
        }

        t0 = std::chrono::steady_clock::now();
        const auto hm = hl_baseline(data, split.test, T, H);
        report.timings.baseline_seconds += seconds_since(t0);
        EvalEntry hl{"HL", H, hm.mse, hm.mae};
        hl.fraction = 1.0;
        hl.test_rows = test.size();

        report.entries.push_back(rep);
        report.entries.push_back(hl);
        report.entries.push_back(ridge);
    }
    return report;
}

void write_report(const EvalReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    io::write_text((base / "report.csv").string(), r.csv());
    io::write_text((base / "report.json").string(), r.to_json().dump(2) + "\n");
    io::write_text((base / "timings.json").string(), r.timings.to_json().dump(2) + "\n");
}

}  // namespace strep
