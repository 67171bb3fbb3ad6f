#include <doctest.h>

#include <cmath>
#include <random>

#include "strep/downstream.hpp"

using namespace strep;
using Eigen::MatrixXd;

namespace {

MatrixXd randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

// Plain gradient descent on the ridge objective, step 1/L.
MatrixXd descend(const MatrixXd& X, const MatrixXd& Y, double lambda) {
    MatrixXd Xa(X.rows(), X.cols() + 1);
    Xa << X, MatrixXd::Ones(X.rows(), 1);
    MatrixXd reg = MatrixXd::Identity(Xa.cols(), Xa.cols()) * lambda;
    reg(X.cols(), X.cols()) = 0;
    const MatrixXd H = Xa.transpose() * Xa + reg;
    const double L = Eigen::SelfAdjointEigenSolver<MatrixXd>(H).eigenvalues().maxCoeff();
    MatrixXd W = MatrixXd::Zero(Xa.cols(), Y.cols());
    for (int it = 0; it < 200000; ++it) {
        const MatrixXd g = Xa.transpose() * (Xa * W - Y) + reg * W;
        W -= g / L;
        if (g.norm() < 1e-13) break;
    }
    return W;
}

MatrixXd centered(MatrixXd m) {
    m.rowwise() -= m.colwise().mean();
    return m;
}

SeriesTensor series_from(std::size_t N, std::size_t steps, const std::function<float(std::size_t, std::size_t)>& f) {
    SeriesTensor s;
    s.nodes = N;
    s.steps = steps;
    s.steps_per_day = 24;
    s.values.resize(N * steps);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < steps; ++t) s.at(n, t) = f(n, t);
    return s;
}

}  // namespace

TEST_CASE("ridge closed form") {
    SUBCASE("exact interpolation") {
        MatrixXd X(2, 1), Y(2, 1);
        X << 1, 2;
        Y << 2, 4;
        auto m = ridge_fit(X, Y, 0.0);
        CHECK(m.W(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(std::abs(m.W(1, 0)) < 1e-12);
    }
    SUBCASE("rank deficiency at lambda 0") {
        MatrixXd X(3, 2), Y(3, 1);
        X << 1, 2, 2, 4, 3, 6;
        Y << 1, 2, 3;
        try {
            ridge_fit(X, Y, 0.0);
            FAIL("singular system accepted");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Numeric);
        }
        CHECK_NOTHROW(ridge_fit(X, Y, 0.1));
    }
    SUBCASE("heavy regularization shrinks toward zero") {
        std::mt19937_64 rng(3);
        const MatrixXd X = centered(randn(40, 5, rng)), Y = centered(randn(40, 2, rng));
        const auto w0 = ridge_fit(X, Y, 0).W.topRows(5).norm();
        const auto w1 = ridge_fit(X, Y, 1e6).W.topRows(5).norm();
        CHECK(w1 < 1e-3 * w0);
    }
}

TEST_CASE("ridge matches an iterative oracle, shrinks monotonically and is optimal") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    const std::vector<double> lambdas{0.0, 0.1, 1.0, 10.0};
    for (int sys = 0; sys < 20; ++sys) {
        const MatrixXd X = randn(50, 8, rng);
        const MatrixXd Y = X * randn(8, 3, rng) + randn(50, 3, rng) * 0.5 + MatrixXd::Constant(50, 3, 1.5);
        const double lambda = lambdas[sys % lambdas.size()];
        const auto m = ridge_fit(X, Y, lambda);
        const MatrixXd oracle = descend(X, Y, lambda);
        CHECK((m.W - oracle).cwiseAbs().maxCoeff() < 1e-8);

        const MatrixXd Xc = centered(X), Yc = centered(Y);
        double prev = INFINITY;
        for (double l : default_lambda_grid()) {
            const double norm = ridge_fit(Xc, Yc, l).W.topRows(8).norm();
            CHECK(norm <= prev);
            prev = norm;
        }

        const double best = ridge_objective(X, Y, m.W, lambda);
        int worse = 0;
        for (int k = 0; k < 1000; ++k) {
            MatrixXd P = m.W;
            const double scale = std::pow(10.0, -1 - k % 5);
            for (Eigen::Index i = 0; i < P.size(); ++i) P.data()[i] += scale * nd(rng);
            worse += ridge_objective(X, Y, P, lambda) >= best;
        }
        CHECK(worse == 1000);
    }
}

TEST_CASE("lambda grid search") {
    CHECK(default_lambda_grid().size() == 13);
    std::mt19937_64 rng(5);
    RowSet train, val;
    const MatrixXd beta = randn(6, 2, rng);
    train.X = randn(200, 6, rng);
    train.Y = train.X * beta;
    val.X = randn(80, 6, rng);
    val.Y = val.X * beta;

    auto one = ridge_grid_search(train, val, {7.0});
    CHECK(one.model.lambda == 7.0);

    auto full = ridge_grid_search(train, val, default_lambda_grid());
    REQUIRE(full.val_mse.size() == 13);
    CHECK(full.val_mse[0] == *std::min_element(full.val_mse.begin(), full.val_mse.end()));
    CHECK(full.model.lambda == 0.1);
    // the selected model is the one ridge_fit gives at that lambda
    CHECK((full.model.W - ridge_fit(train.X, train.Y, 0.1).W).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(full.val_mse[0] == doctest::Approx(metrics(full.model.predict(val.X), val.Y).mse).epsilon(1e-6));

    // all-zero targets: every lambda ties, the largest wins
    train.Y.setZero();
    val.Y.setZero();
    CHECK(ridge_grid_search(train, val, default_lambda_grid()).model.lambda == 1000);

    RowSet empty;
    empty.X.resize(0, 6);
    empty.Y.resize(0, 2);
    CHECK_THROWS_AS(ridge_grid_search(train, empty, {1.0}), Error);
}

TEST_CASE("metrics") {
    MatrixXd t(2, 1), p = MatrixXd::Zero(2, 1);
    t << -1, 1;
    auto m = metrics(t, t);
    CHECK(m.mse == 0);
    CHECK(m.mae == 0);
    m = metrics(p, t);
    CHECK(m.mse == 1);
    CHECK(m.mae == 1);
    std::mt19937_64 rng(9);
    for (int i = 0; i < 10; ++i) {
        auto a = randn(7, 3, rng), b = randn(7, 3, rng);
        auto r = metrics(a, b);
        CHECK(r.mse >= r.mae * r.mae);
    }
    CHECK_THROWS_AS(metrics(MatrixXd(0, 1), MatrixXd(0, 1)), Error);
}

TEST_CASE("row construction") {
    CHECK(subsample(10000, 0.05, 1).size() == 500);
    CHECK(subsample(10000, 0.05, 1) == subsample(10000, 0.05, 1));
    CHECK(subsample(10000, 0.05, 1) != subsample(10000, 0.05, 2));
    CHECK(subsample(10, 0.01, 1).size() == 1);
    CHECK(subsample(37, 1.0, 4).size() == 37);
    CHECK_THROWS_AS(subsample(10, 0.0, 1), Error);

    const Range split{100, 200};
    const auto ends = eligible_ends(split, 12, 5);
    CHECK(ends.front() == 111);
    CHECK(ends.back() == 194);  // the last 5 steps of the split cannot end a window
    CHECK(ends.size() == 84);
    CHECK(eligible_ends({0, 16}, 12, 5).empty());

    auto s = series_from(3, 300, [](std::size_t n, std::size_t t) { return static_cast<float>(1000 * n + t); });
    RepresentationStore store;
    store.nodes = 3;
    store.width = 2;
    store.input_len = 12;
    for (std::size_t e = 111; e < 200; ++e) store.window_end.push_back(e);
    store.reps = Tensor<float>({store.size(), 3, 2});
    for (std::size_t i = 0; i < store.size(); ++i)
        for (std::size_t n = 0; n < 3; ++n) {
            store.reps[(i * 3 + n) * 2] = static_cast<float>(store.window_end[i]);
            store.reps[(i * 3 + n) * 2 + 1] = static_cast<float>(n);
        }

    auto rows = build_rows(store, s, split, 5);
    CHECK(rows.size() == 3 * 84);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows.X(i, 0) == rows.time[i]);
        CHECK(rows.X(i, 1) == rows.node[i]);
        for (std::size_t h = 0; h < 5; ++h) CHECK(rows.Y(i, h) == 1000.0 * rows.node[i] + rows.time[i] + 1 + h);
    }
    auto sub = build_rows(store, s, split, 5, 0.1, 3);
    CHECK(sub.size() == 25);
    CHECK(build_rows(store, s, split, 5, 0.1, 3).time == sub.time);

    auto raw = build_raw_rows(s, split, 12, 5);
    CHECK(raw.X.cols() == 12);
    CHECK(raw.size() == rows.size());
    CHECK(raw.X(0, 11) == 111);
    CHECK(raw.X(0, 0) == 100);
    CHECK(raw.time == rows.time);

    CHECK_THROWS_AS(build_rows(store, s, split, 95), Error);
    CHECK_THROWS_AS(build_rows(store, s, {0, 200}, 5), Error);
}

TEST_CASE("test targets never reach the fitted model") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> nd;
    auto s = series_from(4, 400, [&](std::size_t, std::size_t) { return nd(rng); });
    const auto split = split_622(400, 30);
    auto fit = [&](const SeriesTensor& d) {
        return ridge_grid_search(build_raw_rows(d, split.train, 12, 4, 0.5, 9), build_raw_rows(d, split.val, 12, 4),
                                 default_lambda_grid())
            .model.W;
    };
    const MatrixXd before = fit(s);
    auto shuffled = s;
    for (std::size_t n = 0; n < 4; ++n)
        std::shuffle(shuffled.values.begin() + n * 400 + split.test.begin, shuffled.values.begin() + n * 400 + 400, rng);
    CHECK(fit(shuffled) == before);
}

TEST_CASE("HL baseline") {
    auto flat = series_from(2, 50, [](std::size_t, std::size_t) { return 3.0f; });
    CHECK(hl_baseline(flat, {0, 50}, 12, 4).mse == 0);

    auto step = series_from(1, 13, [](std::size_t, std::size_t t) { return t == 12 ? 1.0f : 0.0f; });
    auto m = hl_baseline(step, {0, 13}, 12, 1);
    CHECK(m.mse == 1);
    CHECK(m.mae == 1);
}

TEST_CASE("raw ridge recovers a noiseless AR(1) series") {
    auto s = series_from(5, 600, [](std::size_t n, std::size_t t) {
        return static_cast<float>((1.0 + n) * std::pow(0.995, static_cast<double>(t)));
    });
    const auto split = split_622(600, 30);
    const auto train = build_raw_rows(s, split.train, 12, 12, 0.5, 1);
    CHECK(train.X.cols() == 12);
    const auto fit = ridge_grid_search(train, build_raw_rows(s, split.val, 12, 12), default_lambda_grid());
    CHECK(evaluate(fit.model, build_raw_rows(s, split.test, 12, 12)).mse < 1e-4);
}

TEST_CASE("evaluation protocol") {
    SynthConfig sc;
    sc.nodes = 6;
    sc.days = 5;
    sc.steps_per_day = 48;
    sc.seed = 2;
    const auto s = synth_generate(sc).series;
    ModelConfig mc;
    mc.nodes = 6;
    mc.steps_per_day = 48;
    mc.width = 8;
    mc.layers = 1;
    mc.proxies = 2;
    const auto split = split_622(s.steps, 40);
    Model<float> model(mc, 4);
    TrainConfig tc;
    tc.model = mc;
    const auto ck = Checkpoint::capture(model, tc, zscore_fit(s, split.train));
    const auto stores = encode_splits(ck, s, split);

    EvalConfig ec;
    ec.horizons = {3, 6};
    ec.repetitions = 3;
    ec.fraction = 0.2;
    const auto r = evaluate_protocol(ck, stores, s, split, ec);
    CHECK(r.entries.size() == 6);
    for (std::size_t h : {3, 6})
        for (const char* method : {"ST-ReP", "HL", "RidgeRaw"}) {
            const auto& e = r.find(method, h);
            CHECK(e.mse > 0);
            CHECK(e.mae > 0);
            CHECK(e.mse >= e.mae * e.mae * 0.999);
        }
    CHECK(r.find("ST-ReP", 3).train_rows == r.find("RidgeRaw", 3).train_rows);
    const auto lambda = r.find("ST-ReP", 6).lambda;
    CHECK(std::find(ec.grid.begin(), ec.grid.end(), lambda) != ec.grid.end());
    CHECK(r.find("HL", 3).lambda == 0);
    CHECK(r.csv().rfind("method,horizon,mse,mae,", 0) == 0);

    const auto again = evaluate_protocol(ck, stores, s, split, ec);
    CHECK(again.csv() == r.csv());
    CHECK(again.to_json() == r.to_json());

    ec.fraction = 1.0;
    CHECK(evaluate_protocol(ck, stores, s, split, ec).find("ST-ReP", 3).mse_std == 0);
    CHECK(EvalConfig::from_json(ec.to_json()).to_json() == ec.to_json());
}
