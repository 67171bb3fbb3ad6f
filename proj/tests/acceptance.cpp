// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.
// STREP_ACCEPTANCE_DIR sets the scratch directory (default: a fresh temp subdirectory).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "op_suite.hpp"
#include "strep/bench.hpp"
#include "strep/byteio.hpp"
#include "strep/cli.hpp"
#include "strep/downstream.hpp"

using namespace strep;
using Eigen::MatrixXd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... v) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, v...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), since(t0));
    std::fflush(stdout);
}

fs::path scratch() {
    static const fs::path dir = [] {
        fs::path d;
        if (const char* env = std::getenv("STREP_ACCEPTANCE_DIR"); env && *env)
            d = env;
        else
            d = fs::temp_directory_path() / "strep_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string at(const std::string& name) { return (scratch() / name).string(); }

Batch random_batch(const ModelConfig& c, std::size_t B, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    Batch b;
    b.windows = B;
    b.x_curr = Tensor<float>({B * c.nodes, c.input_len, c.features});
    b.x_tgt = Tensor<float>({B * c.nodes, c.horizon, c.features});
    for (auto& v : b.x_curr.data()) v = g(rng);
    for (auto& v : b.x_tgt.data()) v = g(rng);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t t = 0; t < c.input_len; ++t) {
            b.tod.push_back(static_cast<std::int32_t>((5 * i + t) % c.steps_per_day));
            b.dow.push_back(static_cast<std::int32_t>((i + t / 7) % 7));
        }
    return b;
}

template <typename S>
Tensor<S> permute_rows(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
    Tensor<S> out(x.shape());
    const std::size_t stride = x.size() / x.dim(0);
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(x.ptr() + perm[i] * stride, stride, out.ptr() + i * stride);
    return out;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    double worst_op = 0;
    std::string worst_name;
    const auto ops_checked = testing::operator_gradchecks();
    for (const auto& c : ops_checked)
        if (c.report.worst >= worst_op) {
            worst_op = c.report.worst;
            worst_name = c.op;
        }

    ModelConfig cfg;
    cfg.nodes = 4;
    cfg.input_len = 8;
    cfg.horizon = 4;
    cfg.width = 8;
    cfg.compressed = 2;
    cfg.proxies = 2;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.steps_per_day = 12;
    Model<double> m(cfg, 11);
    // default init leaves the proxy queries near zero, where their gradients vanish below FD resolution
    std::mt19937_64 init(5);
    for (auto* p : m.parameters()) p->value = normal_tensor<double>(p->value.shape(), 0.5, init);
    Batch fb = random_batch(cfg, 2, 12);
    LossConfig lc;
    lc.kernels = {2, 4, 8};
    lc.delta = 5.0;
    const auto micro = testing::check_gradients(
        m.parameters(),
        [&](Tape<double>& tape) {
            std::mt19937_64 rng(99);
            return m.loss(tape, fb, lc, true, false, rng).total;
        },
        1e-5);
    const double secs = since(t0);
    return {worst_op < 1e-4 && micro.worst < 1e-4 && secs < 120,
            fmt("%zu operator groups worst %.2e (%s); micro model worst %.2e (%s); %.1f s < 120 s", ops_checked.size(),
                worst_op, worst_name.c_str(), micro.worst, micro.worst_name.c_str(), secs)};
}

MatrixXd randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

// Conjugate gradients on the bias-augmented normal equations, one target column at a time.
MatrixXd iterative_ridge(const MatrixXd& X, const MatrixXd& Y, double lambda) {
    MatrixXd Xa(X.rows(), X.cols() + 1);
    Xa << X, MatrixXd::Ones(X.rows(), 1);
    MatrixXd reg = MatrixXd::Identity(Xa.cols(), Xa.cols()) * lambda;
    reg(X.cols(), X.cols()) = 0;
    const MatrixXd H = Xa.transpose() * Xa + reg;
    const MatrixXd B = Xa.transpose() * Y;
    MatrixXd W = MatrixXd::Zero(Xa.cols(), Y.cols());
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(Xa.cols()), r = B.col(j), p = r;
        double rr = r.squaredNorm();
        for (int it = 0; it < 1000 && std::sqrt(rr) > 1e-14; ++it) {
            const Eigen::VectorXd Hp = H * p;
            const double a = rr / p.dot(Hp);
            w += a * p;
            r -= a * Hp;
            const double nr = r.squaredNorm();
            p = r + (nr / rr) * p;
            rr = nr;
        }
        W.col(j) = w;
    }
    return W;
}

Outcome ridge_oracle() {
    std::mt19937_64 rng(11);
    const std::vector<double> lambdas{0.0, 0.1, 1.0, 10.0};
    double worst = 0;
    int monotone = 0;
    for (int sys = 0; sys < 20; ++sys) {
        const MatrixXd X = randn(50, 8, rng);
        const MatrixXd Y = X * randn(8, 3, rng) + randn(50, 3, rng) * 0.5 + MatrixXd::Constant(50, 3, 1.5);
        const double lambda = lambdas[sys % lambdas.size()];
        const auto m = ridge_fit(X, Y, lambda);
        worst = std::max(worst, (m.W - iterative_ridge(X, Y, lambda)).cwiseAbs().maxCoeff());

        MatrixXd Xc = X, Yc = Y;
        Xc.rowwise() -= Xc.colwise().mean();
        Yc.rowwise() -= Yc.colwise().mean();
        double prev = INFINITY;
        bool ok = true;
        for (double l : default_lambda_grid()) {
            const double norm = ridge_fit(Xc, Yc, l).W.topRows(8).norm();
            ok &= norm <= prev;
            prev = norm;
        }
        monotone += ok;
    }
    return {worst < 1e-8 && monotone == 20,
            fmt("20 systems, max |W - W_cg| %.2e < 1e-8; weight norm non-increasing in lambda on %d/20", worst,
                monotone)};
}

Outcome loss_audit() {
    ModelConfig cfg;
    cfg.nodes = 3;
    cfg.width = 16;
    cfg.proxies = 4;
    cfg.layers = 2;
    cfg.steps_per_day = 24;
    Model<double> m(cfg, 4);
    double recombine = 0;
    std::mt19937_64 pick(8);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    for (int k = 0; k < 10; ++k) {
        LossConfig lc;
        lc.alpha = u(pick);
        lc.beta = u(pick);
        std::mt19937_64 rng(k);
        Tape<double> tape(false);
        const auto v = m.loss(tape, random_batch(cfg, 2, 100 + k), lc, true, true, rng).values();
        recombine = std::max(recombine, std::abs(v.total - lc.alpha * v.recon - lc.beta * v.pred - lc.gamma() * v.ms));
    }

    Tape<double> t(false);
    std::mt19937_64 rng(3);
    auto a = t.constant(normal_tensor<double>({3, 24, 1}, 2.0, rng));
    auto b = t.constant(normal_tensor<double>({3, 24, 1}, 2.0, rng));
    const std::size_t one[] = {1};
    const double ms1 = multiscale_loss(a, b, std::span<const std::size_t>(one), 1.0).value().item();
    const double huber = ops::huber_loss(a, b, 1.0).value().item();

    auto pred = t.constant(Tensor<double>({1, 4, 1}, std::vector<double>{1, 1, 3, 3}));
    auto truth = t.constant(Tensor<double>({1, 4, 1}, std::vector<double>{1, 1, 1, 1}));
    const std::size_t two[] = {2};
    const double hand = multiscale_loss(pred, truth, std::span<const std::size_t>(two), 1.0).value().item();

    return {recombine < 1e-6 && std::abs(ms1 - huber) < 1e-12 && hand == 0.75,
            fmt("max |total - a r - b p - g m| %.2e over 10 weightings; kernel {1} vs Huber diff %.2e; hand example %.17g",
                recombine, std::abs(ms1 - huber), hand)};
}

Outcome linearity() {
    const auto t0 = Clock::now();
    BenchConfig bc;
    const auto r = complexity_bench(bc);
    const double secs = since(t0);
    std::string pts;
    for (const auto& p : r.points) pts += fmt(" N=%zu:%.4fs", p.nodes, p.t_fwd);
    return {r.slope_fwd >= 0.85 && r.slope_fwd <= 1.15 && r.naive_slope_fwd >= 1.8 && secs < 600,
            fmt("encoder forward slope %.3f in [0.85, 1.15] (fwd+bwd %.3f); all-pairs reference slope %.3f >= 1.8; "
                "%.0f s < 600 s;%s",
                r.slope_fwd, r.slope_fwd_bwd, r.naive_slope_fwd, secs, pts.c_str())};
}

Outcome residual_identity() {
    ModelConfig cfg;
    cfg.nodes = 5;
    std::mt19937_64 rng(21);
    const auto e = normal_tensor<float>({5, cfg.input_len, cfg.width}, 1.0, rng);

    Model<float> m(cfg, 3);
    double worst = 0;
    for (int k = 0; k < 5; ++k) {
        std::vector<std::size_t> perm(5);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tape<float> t(false);
        const auto z = m.encode(t, t.constant(e)).value();
        const auto zp = m.encode(t, t.constant(permute_rows(e, perm))).value();
        const auto expect = permute_rows(z, perm);
        for (std::size_t i = 0; i < z.size(); ++i)
            worst = std::max(worst, static_cast<double>(std::abs(zp[i] - expect[i])));
    }

    for (auto& L : m.enc) {
        ParamList<float> ps;
        L.collect(ps, false);
        for (auto* p : ps) p->value.fill(0.0f);
    }
    Tape<float> t(false);
    const auto z = m.encode(t, t.constant(e)).value();
    const bool identical = z.to_vector() == e.to_vector();
    return {identical && worst < 1e-5,
            fmt("zeroed encoder layers give Z == E bit-for-bit: %s; 5 node permutations, max deviation %.2e < 1e-5",
                identical ? "yes" : "no", worst)};
}

Outcome masking(const Checkpoint& ckpt, const SeriesTensor& raw, const SplitSpec& split) {
    std::size_t rows_checked = 0, wrong = 0;
    std::mt19937_64 rng(4);
    for (std::size_t T : {8, 12, 24, 36})
        for (double r : {0.1, 0.25, 0.5, 0.75}) {
            const auto m = apply_mask(64, T, r, true, rng);
            const auto expect = static_cast<int>(std::floor(r * static_cast<double>(T)));
            for (std::size_t row = 0; row < 64; ++row) {
                ++rows_checked;
                wrong += std::accumulate(m.begin() + row * T, m.begin() + (row + 1) * T, 0) != expect;
            }
        }

    const auto base = encode_dataset(ckpt, raw, split.test).reps.to_vector();
    std::size_t differing = 0;
    for (double r : {0.0, 0.5, 0.9}) {
        Checkpoint c = ckpt;
        c.config.loss.mask_ratio = r;
        differing += encode_dataset(c, raw, split.test).reps.to_vector() != base;
    }
    return {wrong == 0 && differing == 0,
            fmt("%zu mask rows, %zu with a count other than floor(rT); test-split encodings under mask ratios "
                "0/0.25/0.5/0.9 identical: %s",
                rows_checked, wrong, differing ? "no" : "yes")};
}

struct Desk {
    SeriesTensor raw;
    SplitSpec split;
    TrainConfig train;
    EvalConfig eval;
    std::optional<PretrainResult> full;
};

TrainConfig desk_train_config() {
    TrainConfig tc;
    tc.model.nodes = 0;
    tc.model.steps_per_day = 0;
    tc.max_epochs = 20;
    tc.train_stride = 4;
    tc.val_stride = 4;
    return tc;
}

Outcome end_to_end(Desk& d) {
    const auto t0 = Clock::now();
    d.full = pretrain(d.raw, d.train, [](const EpochRecord& e) {
        std::printf("  epoch %zu train %.5f val %.5f (%.1f s)\n", e.epoch, e.train.total, e.val_total, e.wall_seconds);
        std::fflush(stdout);
    });
    const double train_secs = since(t0);
    const auto& h = d.full->history;
    const double first = h.epochs.front().train.total, best = h.epochs[h.best_epoch - 1].train.total;

    const auto stores = encode_splits(d.full->checkpoint, d.raw, d.split);
    const auto rep = evaluate_protocol(d.full->checkpoint, stores, d.raw, d.split, d.eval);
    const double ours = rep.find("ST-ReP", 12).mse, hl = rep.find("HL", 12).mse, raw = rep.find("RidgeRaw", 12).mse;
    return {ours < hl && ours <= 1.05 * raw && h.epochs.size() <= 50 && train_secs <= 1800 && best < 0.5 * first,
            fmt("horizon 12 MSE: representation %.5f, HL %.5f, raw ridge %.5f (bound %.5f); %zu epochs in %.0f s; "
                "train loss best epoch %zu %.5f < 0.5 x epoch 1 %.5f",
                ours, hl, raw, 1.05 * raw, h.epochs.size(), train_secs, h.best_epoch, best, first)};
}

Outcome ablation(const Desk& d) {
    require(d.full.has_value(), ErrorKind::State, "the full model run did not complete");
    const auto r = ablation_run(d.raw, d.train, d.eval, &*d.full, [](const std::string& tag, const PretrainResult& run) {
        std::printf("  variant %s: %zu epochs, best %zu\n", tag.c_str(), run.history.epochs.size(),
                    run.history.best_epoch);
        std::fflush(stdout);
    });
    const double full = r.mse("full", 12);
    bool ok = true;
    std::string detail = fmt("horizon 12 MSE full %.5f;", full);
    for (const auto& tag : ablation_variants()) {
        if (tag == "full") continue;
        const double v = r.mse(tag, 12);
        ok &= full <= 1.1 * v;
        detail += fmt(" %s %.5f (x1.1 = %.5f)", tag.c_str(), v, 1.1 * v);
    }
    io::write_text(at("ablation.csv"), r.csv());
    return {ok, detail};
}

Outcome determinism(const Desk& d) {
    io::write_text(at("det.json"), R"({"data": {"nodes": 16, "days": 3, "steps_per_day": 96},
 "model": {"width": 16, "layers": 2, "proxies": 4},
 "train": {"max_epochs": 2, "batch_size": 16, "train_stride": 2, "val_stride": 4},
 "eval": {"horizons": [12], "repetitions": 3}})");
    std::ostringstream sink;
    auto pipeline = [&](const std::string& tag) {
        auto run = [&](std::vector<std::string> args) {
            args.insert(args.begin(), "strep");
            require(run_cli(args, sink, sink) == 0, ErrorKind::State, "pipeline step failed: " + sink.str());
        };
        const auto cfg = at("det.json"), data = at(tag + "_data/data.strp"), ckpt = at(tag + "_model/model.ckpt");
        run({"generate", "--config", cfg, "--out", at(tag + "_data")});
        run({"pretrain", "--config", cfg, "--data", data, "--out", at(tag + "_model")});
        run({"encode", "--config", cfg, "--data", data, "--checkpoint", ckpt, "--out", at(tag + "_reps")});
        run({"eval", "--config", cfg, "--data", data, "--checkpoint", ckpt, "--out", at(tag + "_eval")});
    };
    pipeline("a");
    pipeline("b");
    std::size_t same = 0, total = 0;
    for (const char* f : {"_data/data.strp", "_model/model.ckpt", "_reps/reps_train.strc", "_reps/reps_val.strc",
                          "_reps/reps_test.strc", "_eval/report.csv", "_eval/report.json"}) {
        ++total;
        same += io::read_file(at(std::string("a") + f)) == io::read_file(at(std::string("b") + f));
    }

    require(d.full.has_value(), ErrorKind::State, "the full model run did not complete");
    save_checkpoint(d.full->checkpoint, at("full.ckpt"));
    const auto loaded = load_checkpoint(at("full.ckpt"), &d.full->checkpoint.config.model);
    const bool round_trip =
        encode_dataset(loaded, d.raw, d.split.test).reps.to_vector() ==
        encode_dataset(d.full->checkpoint, d.raw, d.split.test).reps.to_vector();
    save_checkpoint(loaded, at("full_again.ckpt"));
    const bool resave = io::read_file(at("full.ckpt")) == io::read_file(at("full_again.ckpt"));
    return {same == total && round_trip && resave,
            fmt("two seeded pipelines byte-identical on %zu/%zu artifacts (data, checkpoint, 3 stores, 2 reports); "
                "desk checkpoint round trip encodes identically: %s; re-save byte-identical: %s",
                same, total, round_trip ? "yes" : "no", resave ? "yes" : "no")};
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    Desk d;
    d.raw = synth_generate(SynthConfig{}).series;
    d.train = desk_train_config();
    d.split = split_622(d.raw.steps, 24);
    d.eval.horizons = {12};

    report("gradient suite", gradient_suite);
    report("ridge oracle", ridge_oracle);
    report("loss audit", loss_audit);
    report("residual identity", residual_identity);
    report("end-to-end desk experiment", [&] { return end_to_end(d); });
    report("masking protocol", [&] {
        require(d.full.has_value(), ErrorKind::State, "the full model run did not complete");
        return masking(d.full->checkpoint, d.raw, d.split);
    });
    report("determinism and persistence", [&] { return determinism(d); });
    report("ablation direction", [&] { return ablation(d); });
    report("linearity", linearity);

    std::printf("%d of 9 criteria failed; total %.0f s\n", failures, since(t0));
    return failures ? 1 : 0;
}
