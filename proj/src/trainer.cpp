#include "strep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "strep/byteio.hpp"
#include "strep/seed.hpp"
#include "strep/tensor_file.hpp"

namespace strep {

using nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c6964ULL;

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    loss.validate(model.input_len, model.horizon);
    auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, "train config: " + msg); };
    need(lr >= 0 && std::isfinite(lr), "lr must be a finite non-negative number");
    need(weight_decay >= 0, "weight_decay must be >= 0");
    need(max_epochs >= 1, "max_epochs must be >= 1");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(patience >= 1, "patience must be >= 1");
    need(grad_clip >= 0, "grad_clip must be >= 0 (0 disables clipping)");
    need(train_stride >= 1 && val_stride >= 1, "window strides must be >= 1");
}

json TrainConfig::to_json() const {
    return {{"model", model.to_json()},
            {"loss", loss.to_json()},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"max_epochs", max_epochs},
            {"batch_size", batch_size},
            {"patience", patience},
            {"grad_clip", grad_clip},
            {"train_stride", train_stride},
            {"val_stride", val_stride},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        c.model = ModelConfig::from_json(j.at("model"));
        c.loss = LossConfig::from_json(j.at("loss"));
        c.lr = j.at("lr");
        c.weight_decay = j.at("weight_decay");
        c.max_epochs = j.at("max_epochs");
        c.batch_size = j.at("batch_size");
        c.patience = j.at("patience");
        c.grad_clip = j.at("grad_clip");
        c.train_stride = j.at("train_stride");
        c.val_stride = j.at("val_stride");
        c.seed = j.at("seed");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("train config: ") + e.what());
    }
    return c;
}

std::string TrainHistory::csv() const {
    std::ostringstream out;
    out << "epoch,L_recon,L_pred,L_MS,total,val_total,wall_seconds\n";
    char buf[256];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.train.recon, e.train.pred,
                      e.train.ms, e.train.total, e.val_total, e.wall_seconds);
        out << buf;
    }
    return out.str();
}

Model<float> Checkpoint::instantiate() const {
    Model<float> model(config.model, 0);
    auto ps = model.parameters();
    require(ps.size() == params.size(), ErrorKind::Data,
            "checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " + std::to_string(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        require(ps[i]->name == params[i].first, ErrorKind::Data,
                "checkpoint tensor '" + params[i].first + "' where '" + ps[i]->name + "' was expected");
        require(ps[i]->value.shape() == params[i].second.shape(), ErrorKind::Data,
                "checkpoint tensor '" + params[i].first + "' has shape " + shape_str(params[i].second.shape()) +
                    ", model expects " + shape_str(ps[i]->value.shape()));
        ps[i]->value = params[i].second;
    }
    return model;
}

Checkpoint Checkpoint::capture(Model<float>& model, const TrainConfig& cfg, const NormStats& norm) {
    Checkpoint c;
    c.config = cfg;
    c.norm = norm;
    c.config_hash = cfg.model.hash();
    for (auto* p : model.parameters()) c.params.emplace_back(p->name, p->value);
    return c;
}

std::uint64_t Checkpoint::parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params) {
        h = io::fnv1a(name.data(), name.size(), h);
        h = io::fnv1a(t.ptr(), t.size() * sizeof(float), h);
    }
    return h;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    TensorFile f;
    f.meta = {{"kind", "checkpoint"},
              {"version", c.version},
              {"config", c.config.to_json()},
              {"norm", {{"mean", c.norm.mean}, {"std", c.norm.std}}},
              {"config_hash", io::hex64(c.config_hash)}};
    for (const auto& [name, t] : c.params) f.entries.push_back({name, t});
    save_tensor_file(f, path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
    const auto f = load_tensor_file(path, "checkpoint");
    Checkpoint c;
    try {
        require(f.meta.at("kind") == "checkpoint", ErrorKind::Data, path + " is not a checkpoint");
        c.version = f.meta.at("version");
        require(c.version == kCheckpointVersion, ErrorKind::Data,
                "checkpoint " + path + ": version " + std::to_string(c.version) + ", expected " +
                    std::to_string(kCheckpointVersion));
        c.config = TrainConfig::from_json(f.meta.at("config"));
        c.norm.mean = f.meta.at("norm").at("mean");
        c.norm.std = f.meta.at("norm").at("std");
        const std::string stored = f.meta.at("config_hash");
        c.config_hash = c.config.model.hash();
        require(io::hex64(c.config_hash) == stored, ErrorKind::Data,
                "checkpoint " + path + ": config hash " + stored + " does not match its config");
    } catch (const json::exception& e) {
        fail(ErrorKind::Data, "checkpoint " + path + ": " + e.what());
    }
    if (expected)
        require(expected->hash() == c.config_hash, ErrorKind::Config,
                "checkpoint " + path + " was trained with a different model config (hash " + io::hex64(c.config_hash) +
                    ", session " + io::hex64(expected->hash()) + ")");
    for (const auto& e : f.entries) {
        const auto* t = std::get_if<Tensor<float>>(&e.data);
        require(t != nullptr, ErrorKind::Data, "checkpoint tensor '" + e.name + "' is not float32");
        c.params.emplace_back(e.name, *t);
    }
    c.instantiate();  // validates names and shapes
    return c;
}

TrainConfig resolve_config(const TrainConfig& cfg, const SeriesTensor& s) {
    TrainConfig out = cfg;
    if (out.model.nodes == 0) out.model.nodes = s.nodes;
    if (out.model.steps_per_day == 0) out.model.steps_per_day = static_cast<std::size_t>(s.steps_per_day);
    require(out.model.nodes == s.nodes, ErrorKind::Config,
            "model expects " + std::to_string(out.model.nodes) + " nodes, data has " + std::to_string(s.nodes));
    require(out.model.features == s.features, ErrorKind::Config,
            "model expects " + std::to_string(out.model.features) + " features, data has " + std::to_string(s.features));
    require(out.model.steps_per_day == static_cast<std::size_t>(s.steps_per_day), ErrorKind::Config,
            "model time-of-day table has " + std::to_string(out.model.steps_per_day) + " slots, data has " +
                std::to_string(s.steps_per_day) + " steps per day");
    return out;
}

PretrainResult pretrain(const SeriesTensor& raw, const TrainConfig& cfg_in, const EpochCallback& on_epoch) {
    const TrainConfig cfg = resolve_config(cfg_in, raw);
    cfg.validate();
    const std::size_t T = cfg.model.input_len, F = cfg.model.horizon;
    const auto split = split_622(raw.steps, T + F);
    const NormStats norm = zscore_fit(raw, split.train);
    const SeriesTensor data = zscore_apply(raw, norm);

    const auto train_starts = window_starts(split.train, T, F, cfg.train_stride);
    const auto val_starts = window_starts(split.val, T, F, cfg.val_stride);
    require(!train_starts.empty() && !val_starts.empty(), ErrorKind::Data, "pretrain: a split holds no windows");

    std::vector<Batch> val_batches;
    for (std::size_t i = 0; i < val_starts.size(); i += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, val_starts.size() - i);
        val_batches.push_back(make_batch(data, std::span<const std::size_t>(val_starts).subspan(i, n), T, F));
    }

    Model<float> model(cfg.model, cfg.seed);
    auto trainable = model.trainable(cfg.loss);
    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW<float> opt(trainable, ocfg);

    auto all = model.parameters();
    auto snapshot = [&] {
        std::vector<Tensor<float>> v;
        for (auto* p : all) v.push_back(p->value);
        return v;
    };

    PretrainResult result;
    auto& hist = result.history;
    std::vector<Tensor<float>> best = snapshot();
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::mt19937_64 rng(derive_seed(cfg.seed, epoch));
        auto order = train_starts;
        std::shuffle(order.begin(), order.end(), rng);

        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t seen = 0;
        for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - i);
            const Batch batch = make_batch(data, std::span<const std::size_t>(order).subspan(i, n), T, F);
            Tape<float> tape;
            auto terms = model.loss(tape, batch, cfg.loss, true, true, rng);
            const auto v = terms.values();
            if (!std::isfinite(v.total)) {
                char buf[256];
                std::snprintf(buf, sizeof buf,
                              "training diverged at epoch %zu, step %zu: total=%g recon=%g pred=%g ms=%g", epoch,
                              i / cfg.batch_size + 1, v.total, v.recon, v.pred, v.ms);
                fail(ErrorKind::Numeric, buf);
            }
            tape.backward(terms.total);
            if (cfg.grad_clip > 0) clip_grad_norm(trainable, cfg.grad_clip);
            opt.step();
            rec.train.total += v.total * n;
            rec.train.recon += v.recon * n;
            rec.train.pred += v.pred * n;
            rec.train.ms += v.ms * n;
            seen += n;
        }
        rec.train.total /= seen;
        rec.train.recon /= seen;
        rec.train.pred /= seen;
        rec.train.ms /= seen;

        // Validation masks come from the seed alone, so epochs are compared on identical inputs.
        std::mt19937_64 vrng(derive_seed(cfg.seed, kValidationStream));
        double vsum = 0;
        std::size_t vseen = 0;
        for (const auto& b : val_batches) {
            Tape<float> tape(false);
            vsum += model.loss(tape, b, cfg.loss, true, false, vrng).values().total * b.windows;
            vseen += b.windows;
        }
        rec.val_total = vsum / vseen;
        require(std::isfinite(rec.val_total), ErrorKind::Numeric,
                "validation loss is not finite at epoch " + std::to_string(epoch));
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_total < best_val) {
            best_val = rec.val_total;
            hist.best_epoch = epoch;
            best = snapshot();
            stale = 0;
        } else if (++stale >= cfg.patience) {
            hist.early_stopped = true;
            break;
        }
    }
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = best[i];
    hist.best_val = best_val;
    result.checkpoint = Checkpoint::capture(model, cfg, norm);
    return result;
}

RepresentationStore encode_dataset(const Checkpoint& ckpt, const SeriesTensor& raw, Range split,
                                   std::size_t batch_size, std::size_t workers) {
    const auto& mc = ckpt.config.model;
    require(raw.nodes == mc.nodes && raw.features == mc.features, ErrorKind::Config,
            "encode: checkpoint expects " + std::to_string(mc.nodes) + " nodes x " + std::to_string(mc.features) +
                " features, data has " + std::to_string(raw.nodes) + " x " + std::to_string(raw.features));
    require(static_cast<std::size_t>(raw.steps_per_day) == mc.steps_per_day, ErrorKind::Config,
            "encode: steps_per_day differs from the checkpoint");
    require(split.end <= raw.steps, ErrorKind::Data, "encode: split runs past the series");
    require(batch_size >= 1, ErrorKind::Config, "encode: batch_size must be >= 1");
    const std::size_t T = mc.input_len, N = mc.nodes, d = mc.width;
    const auto starts = window_starts(split, T, 0);
    require(!starts.empty(), ErrorKind::Data,
            "encode: split of " + std::to_string(split.size()) + " steps is shorter than one window");

    const SeriesTensor data = zscore_apply(raw, ckpt.norm);
    RepresentationStore store;
    store.nodes = N;
    store.width = d;
    store.input_len = T;
    store.reps = Tensor<float>({starts.size(), N, d});
    for (auto s : starts) store.window_end.push_back(s + T - 1);

    Model<float> model = ckpt.instantiate();
    const std::size_t nbatches = (starts.size() + batch_size - 1) / batch_size;
    auto run = [&](std::size_t first, std::size_t last) {
        for (std::size_t bi = first; bi < last; ++bi) {
            const std::size_t i = bi * batch_size, n = std::min(batch_size, starts.size() - i);
            const Batch b = make_batch(data, std::span<const std::size_t>(starts).subspan(i, n), T, 0);
            const Tensor<float> r = model.represent(b);
            std::copy(r.data().begin(), r.data().end(), store.reps.ptr() + i * N * d);
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, nbatches);
    if (workers == 1) {
        run(0, nbatches);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    run(nbatches * w / workers, nbatches * (w + 1) / workers);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return store;
}

void save_store(const RepresentationStore& s, const std::string& path) {
    TensorFile f;
    f.meta = {{"kind", "representations"}, {"nodes", s.nodes}, {"width", s.width}, {"input_len", s.input_len}, {"count", s.size()}};
    Tensor<std::int64_t> index({s.size()});
    for (std::size_t i = 0; i < s.size(); ++i) index[i] = static_cast<std::int64_t>(s.window_end[i]);
    f.entries.push_back({"index", index});
    for (std::size_t i = 0; i < s.size(); ++i) {
        Tensor<float> m({s.nodes, s.width}, std::vector<float>(s.row(i), s.row(i) + s.nodes * s.width));
        f.entries.push_back({"r/" + std::to_string(s.window_end[i]), std::move(m)});
    }
    save_tensor_file(f, path);
}

RepresentationStore load_store(const std::string& path) {
    const auto f = load_tensor_file(path, "representation store");
    RepresentationStore s;
    try {
        require(f.meta.at("kind") == "representations", ErrorKind::Data, path + " is not a representation store");
        s.nodes = f.meta.at("nodes");
        s.width = f.meta.at("width");
        s.input_len = f.meta.at("input_len");
    } catch (const json::exception& e) {
        fail(ErrorKind::Data, "representation store " + path + ": " + e.what());
    }
    const auto& index = f.i64("index");
    s.reps = Tensor<float>({index.size(), s.nodes, s.width});
    for (std::size_t i = 0; i < index.size(); ++i) {
        s.window_end.push_back(static_cast<std::size_t>(index[i]));
        const auto& m = f.f32("r/" + std::to_string(index[i]));
        require(m.shape() == Shape{s.nodes, s.width}, ErrorKind::Data, "representation store: bad matrix shape");
        std::copy(m.data().begin(), m.data().end(), s.reps.ptr() + i * s.nodes * s.width);
    }
    return s;
}

GridResult grid_search(const SeriesTensor& raw, const TrainConfig& base, const std::vector<double>& alphas,
                       const std::vector<double>& betas) {
    GridResult out;
    double best = std::numeric_limits<double>::infinity();
    for (double a : alphas)
        for (double b : betas) {
            if (a + b > 1.0 + 1e-12) continue;
            TrainConfig cfg = base;
            cfg.loss.alpha = a;
            cfg.loss.beta = b;
            auto run = pretrain(raw, cfg);
            out.points.push_back({a, b, run.history.best_val});
            if (run.history.best_val < best) {
                best = run.history.best_val;
                out.best = out.points.size() - 1;
                out.best_run = std::move(run);
            }
        }
    require(!out.points.empty(), ErrorKind::Config, "grid search: no (alpha, beta) pair with alpha + beta <= 1");
    return out;
}

}  // namespace strep
