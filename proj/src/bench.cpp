#include "strep/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "strep/nn.hpp"
#include "strep/ops.hpp"

namespace strep {

using nlohmann::json;

void BenchConfig::validate() const {
    require(nodes.size() >= 3, ErrorKind::Config, "bench: need at least 3 node counts");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        require(nodes[i] >= 1, ErrorKind::Config, "bench: node counts must be positive");
        require(i == 0 || nodes[i] > nodes[i - 1], ErrorKind::Config, "bench: node counts must increase strictly");
    }
    require(repeats >= 1 && batch >= 1, ErrorKind::Config, "bench: repeats and batch must be positive");
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::Shape, "slope: need matching series of >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        require(x[i] > 0 && y[i] > 0, ErrorKind::Numeric, "slope: log-log fit needs positive values");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    require(sxx > 0, ErrorKind::Numeric, "slope: x values must differ");
    return sxy / sxx;
}

double median_seconds(const std::function<void()>& fn, std::size_t repeats, std::size_t warmup) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> t;
    for (std::size_t i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    const std::size_t n = t.size();
    return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

namespace {

Batch random_batch(const ModelConfig& cfg, std::size_t B, std::mt19937_64& rng) {
    std::normal_distribution<float> nd;
    Batch b;
    b.windows = B;
    const std::size_t R = B * cfg.nodes;
    b.x_curr = Tensor<float>({R, cfg.input_len, cfg.features});
    b.x_tgt = Tensor<float>({R, cfg.horizon, cfg.features});
    for (auto& v : b.x_curr.storage()) v = nd(rng);
    for (auto& v : b.x_tgt.storage()) v = nd(rng);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t t = 0; t < cfg.input_len; ++t) {
            b.tod.push_back(static_cast<std::int32_t>(t % cfg.steps_per_day));
            b.dow.push_back(0);
        }
        b.window_end.push_back(cfg.input_len - 1 + i);
    }
    return b;
}

}  // namespace

std::size_t activation_estimate(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed) {
    cfg.validate();
    Model<float> model(cfg, seed);
    std::mt19937_64 rng(seed);
    const auto b = random_batch(cfg, batch, rng);
    Tape<float> tape;
    LossConfig lc;
    model.loss(tape, b, lc, true, true, rng);
    return tape.activation_elements() * sizeof(float);
}

ScalingReport complexity_bench(const BenchConfig& cfg) {
    cfg.validate();
    ScalingReport rep;
    for (auto N : cfg.nodes) {
        ModelConfig mc = cfg.model;
        mc.nodes = N;
        mc.validate();
        Model<float> model(mc, cfg.seed);
        std::mt19937_64 rng(cfg.seed);
        const std::size_t R = cfg.batch * N, d = mc.width;
        Tensor<float> e({R, mc.input_len, d});
        std::normal_distribution<float> nd;
        for (auto& v : e.storage()) v = nd(rng);

        // the reference attends over every node pair at each compressed step
        MultiHeadAttention<float> dense("naive", d, mc.heads, rng);
        Tensor<float> h({cfg.batch * mc.compressed, N, d});
        for (auto& v : h.storage()) v = nd(rng);

        ScalingPoint pt;
        pt.nodes = N;
        pt.t_fwd = median_seconds(
            [&] {
                Tape<float> tape(false);
                model.encode(tape, tape.constant(e));
            },
            cfg.repeats, cfg.warmup);
        pt.t_fwd_bwd = median_seconds(
            [&] {
                Tape<float> tape;
                tape.backward(ops::sum(model.encode(tape, tape.constant(e))));
            },
            cfg.repeats, cfg.warmup);
        pt.naive_fwd = median_seconds(
            [&] {
                Tape<float> tape(false);
                auto x = tape.constant(h);
                dense(tape, x, x, x);
            },
            cfg.repeats, cfg.warmup);
        pt.naive_fwd_bwd = median_seconds(
            [&] {
                Tape<float> tape;
                auto x = tape.constant(h);
                tape.backward(ops::sum(dense(tape, x, x, x)));
            },
            cfg.repeats, cfg.warmup);
        for (auto t : {pt.t_fwd, pt.t_fwd_bwd, pt.naive_fwd, pt.naive_fwd_bwd})
            require(t >= cfg.min_seconds, ErrorKind::State,
                    "bench: median " + std::to_string(t) + " s at N=" + std::to_string(N) +
                        " is below the timer threshold " + std::to_string(cfg.min_seconds) +
                        " s; increase the batch or the node counts");
        pt.parameters = model.parameter_count();
        pt.activation_bytes = activation_estimate(mc, cfg.batch, cfg.seed);
        rep.points.push_back(pt);
    }
    std::vector<double> n, f, fb, nf, nfb;
    for (const auto& p : rep.points) {
        n.push_back(static_cast<double>(p.nodes));
        f.push_back(p.t_fwd);
        fb.push_back(p.t_fwd_bwd);
        nf.push_back(p.naive_fwd);
        nfb.push_back(p.naive_fwd_bwd);
    }
    rep.slope_fwd = loglog_slope(n, f);
    rep.slope_fwd_bwd = loglog_slope(n, fb);
    rep.naive_slope_fwd = loglog_slope(n, nf);
    rep.naive_slope_fwd_bwd = loglog_slope(n, nfb);
    return rep;
}

std::string ScalingReport::csv() const {
    std::ostringstream out;
    out << "N,t_fwd,t_fwd_bwd,naive_fwd,naive_fwd_bwd,parameters,activation_bytes\n";
    char buf[256];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g,%zu,%zu\n", p.nodes, p.t_fwd, p.t_fwd_bwd, p.naive_fwd,
                      p.naive_fwd_bwd, p.parameters, p.activation_bytes);
        out << buf;
    }
    return out.str();
}

json ScalingReport::to_json() const {
    json pts = json::array();
    for (const auto& p : points)
        pts.push_back({{"N", p.nodes},
                       {"t_fwd", p.t_fwd},
                       {"t_fwd_bwd", p.t_fwd_bwd},
                       {"naive_fwd", p.naive_fwd},
                       {"naive_fwd_bwd", p.naive_fwd_bwd},
                       {"parameters", p.parameters},
                       {"activation_bytes_estimate", p.activation_bytes}});
    return {{"points", pts},
            {"slope_fwd", slope_fwd},
            {"slope_fwd_bwd", slope_fwd_bwd},
            {"naive_slope_fwd", naive_slope_fwd},
            {"naive_slope_fwd_bwd", naive_slope_fwd_bwd}};
}

TrainConfig ablation_config(const TrainConfig& base, const std::string& tag) {
    TrainConfig c = base;
    const double a = base.loss.alpha, b = base.loss.beta, g = base.loss.gamma();
    auto rescale = [&](double na, double nb, double total) {
        require(total > 0, ErrorKind::Config, "ablation " + tag + ": no loss weight left after removing a term");
        c.loss.alpha = na / total;
        c.loss.beta = nb / total;
    };
    if (tag == "full") {
    } else if (tag == "no_encoder") {
        c.model.use_encoder = false;
    } else if (tag == "no_pred") {
        c.loss.pred_head = false;
        rescale(a, 0, a + g);
    } else if (tag == "no_recon") {
        c.loss.recon_head = false;
        rescale(0, b, b + g);
    } else if (tag == "no_ms") {
        rescale(a, b, a + b);
        c.loss.beta = 1.0 - c.loss.alpha;  // gamma exactly 0
    } else {
        fail(ErrorKind::Config, "unknown ablation variant '" + tag + "'");
    }
    return c;
}

double AblationResult::mse(const std::string& variant, std::size_t horizon) const {
    for (const auto& r : rows)
        if (r.variant == variant) return r.report.find("ST-ReP", horizon).mse;
    fail(ErrorKind::State, "no ablation row for variant '" + variant + "'");
}

std::string AblationResult::csv() const {
    std::ostringstream out;
    out << "variant,horizon,mse,mae\n";
    char buf[256];
    if (rows.empty()) return out.str();
    for (const auto& e : rows.front().report.entries) {
        if (e.method != "ST-ReP") continue;
        for (const auto& r : rows) {
            const auto& m = r.report.find("ST-ReP", e.horizon);
            std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g\n", r.variant.c_str(), e.horizon, m.mse, m.mae);
            out << buf;
        }
    }
    return out.str();
}

AblationResult ablation_run(const SeriesTensor& raw, const TrainConfig& base, const EvalConfig& eval,
                            const PretrainResult* full, const VariantCallback& on_variant,
                            const std::vector<std::string>& variants) {
    eval.validate();
    require(!variants.empty(), ErrorKind::Config, "ablation: no variants selected");
    for (const auto& tag : variants) ablation_config(base, tag);
    const auto resolved = resolve_config(base, raw);
    const auto split = split_622(raw.steps, resolved.model.input_len + resolved.model.horizon);
    AblationResult out;
    for (const auto& tag : variants) {
        PretrainResult run = (tag == "full" && full) ? *full : pretrain(raw, ablation_config(resolved, tag));
        if (on_variant) on_variant(tag, run);
        const auto stores = encode_splits(run.checkpoint, raw, split);
        out.rows.push_back({tag, run.history, evaluate_protocol(run.checkpoint, stores, raw, split, eval)});
    }
    return out;
}

}  // namespace strep
