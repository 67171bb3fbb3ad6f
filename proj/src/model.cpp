#include "strep/model.hpp"

#include <algorithm>
#include <numeric>

#include "strep/byteio.hpp"

namespace strep {

using nlohmann::json;

namespace {

// Linear layer applied to the time axis of [R, T, d].
template <typename S>
Var<S> along_time(Tape<S>& tape, Linear<S>& lin, Var<S> x) {
    return ops::time_linear(x, tape.param(lin.weight), tape.param(lin.bias));
}

}  // namespace

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, "model config: " + msg); };
    need(nodes >= 1, "nodes must be >= 1");
    need(input_len >= 2, "input_len must be >= 2");
    need(horizon >= 1, "horizon must be >= 1");
    need(features >= 1, "features must be >= 1");
    need(width >= 1, "width must be >= 1");
    need(compressed >= 1 && compressed < input_len, "compressed length p must satisfy 1 <= p < T");
    need(proxies >= 1, "proxies must be >= 1");
    need(layers >= 1, "layers must be >= 1");
    need(heads >= 1 && width % heads == 0, "width must be divisible by heads");
    need(ffn_factor >= 1, "ffn_factor must be >= 1");
    need(steps_per_day >= 1, "steps_per_day must be >= 1");
    need(conv_kernel % 2 == 1, "conv_kernel must be odd");
}

json ModelConfig::to_json() const {
    return {{"nodes", nodes},           {"input_len", input_len},   {"horizon", horizon},
            {"features", features},     {"width", width},           {"compressed", compressed},
            {"proxies", proxies},       {"layers", layers},         {"heads", heads},
            {"ffn_factor", ffn_factor}, {"steps_per_day", steps_per_day}, {"conv_kernel", conv_kernel},
            {"prenorm", prenorm},       {"use_encoder", use_encoder}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    try {
        c.nodes = j.at("nodes");
        c.input_len = j.at("input_len");
        c.horizon = j.at("horizon");
        c.features = j.at("features");
        c.width = j.at("width");
        c.compressed = j.at("compressed");
        c.proxies = j.at("proxies");
        c.layers = j.at("layers");
        c.heads = j.at("heads");
        c.ffn_factor = j.at("ffn_factor");
        c.steps_per_day = j.at("steps_per_day");
        c.conv_kernel = j.at("conv_kernel");
        c.prenorm = j.at("prenorm");
        c.use_encoder = j.at("use_encoder");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("model config: ") + e.what());
    }
    return c;
}

std::uint64_t ModelConfig::hash() const { return io::fnv1a(to_json().dump()); }

void LossConfig::validate(std::size_t T, std::size_t F) const {
    auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, "loss config: " + msg); };
    need(alpha >= 0 && beta >= 0 && alpha + beta <= 1.0 + 1e-12, "need alpha >= 0, beta >= 0, alpha + beta <= 1");
    need(delta > 0, "delta must be positive");
    need(mask_ratio >= 0 && mask_ratio < 1, "mask_ratio must lie in [0, 1)");
    need(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
    need(recon_head || pred_head, "at least one decoder head must be active");
    need(recon_head || alpha == 0, "alpha must be 0 without the reconstruction head");
    need(pred_head || beta == 0, "beta must be 0 without the prediction head");
    for (auto k : kernels) need(k >= 1 && k <= T + F, "kernel " + std::to_string(k) + " outside [1, T+F]");
}

json LossConfig::to_json() const {
    return {{"alpha", alpha},           {"beta", beta},         {"delta", delta},
            {"kernels", kernels},       {"mask_ratio", mask_ratio}, {"dropout", dropout},
            {"recon_head", recon_head}, {"pred_head", pred_head}, {"recon_masked_only", recon_masked_only}};
}

LossConfig LossConfig::from_json(const json& j) {
    LossConfig c;
    try {
        c.alpha = j.at("alpha");
        c.beta = j.at("beta");
        c.delta = j.at("delta");
        c.kernels = j.at("kernels").get<std::vector<std::size_t>>();
        c.mask_ratio = j.at("mask_ratio");
        c.dropout = j.at("dropout");
        c.recon_head = j.at("recon_head");
        c.pred_head = j.at("pred_head");
        c.recon_masked_only = j.at("recon_masked_only");
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("loss config: ") + e.what());
    }
    return c;
}

Batch make_batch(const SeriesTensor& s, std::span<const std::size_t> starts, std::size_t T, std::size_t F) {
    const std::size_t B = starts.size(), N = s.nodes, C = s.features;
    require(B > 0, ErrorKind::Data, "make_batch: no windows");
    Batch b;
    b.windows = B;
    b.x_curr = Tensor<float>({B * N, T, C});
    b.x_tgt = Tensor<float>({B * N, F, C});
    b.tod.resize(B * T);
    b.dow.resize(B * T);
    for (std::size_t i = 0; i < B; ++i) {
        const auto w = make_window(s, starts[i], T, F);
        std::copy(w.x_curr.data().begin(), w.x_curr.data().end(), b.x_curr.ptr() + i * N * T * C);
        std::copy(w.x_tgt.data().begin(), w.x_tgt.data().end(), b.x_tgt.ptr() + i * N * F * C);
        std::copy(w.tod_idx.begin(), w.tod_idx.end(), b.tod.begin() + i * T);
        std::copy(w.dow_idx.begin(), w.dow_idx.end(), b.dow.begin() + i * T);
        b.window_end.push_back(w.window_end);
    }
    return b;
}

std::vector<std::uint8_t> apply_mask(std::size_t rows, std::size_t T, double ratio, bool training,
                                     std::mt19937_64& rng) {
    require(ratio >= 0.0 && ratio < 1.0, ErrorKind::Config, "mask ratio must lie in [0, 1)");
    std::vector<std::uint8_t> mask(rows * T, 0);
    if (!training) return mask;
    const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(T)));
    if (count == 0) return mask;
    std::vector<std::size_t> idx(T);
    for (std::size_t r = 0; r < rows; ++r) {
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, T - 1);
            std::swap(idx[i], idx[pick(rng)]);
            mask[r * T + idx[i]] = 1;
        }
    }
    return mask;
}

template <typename S>
Tensor<S> cross_time_concat(const Tensor<S>& x, std::span<const std::uint8_t> mask) {
    require(x.rank() == 3, ErrorKind::Shape, "cross_time_concat: expected [R, T, C], got " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), T = x.dim(1), C = x.dim(2);
    require(mask.empty() || mask.size() == R * T, ErrorKind::Shape, "cross_time_concat: mask length");
    Tensor<S> out({R, T, 2 * C});
    for (std::size_t r = 0; r < R; ++r) {
        std::size_t anchor = T;
        for (std::size_t t = T; t-- > 0;)
            if (mask.empty() || !mask[r * T + t]) {
                anchor = t;
                break;
            }
        require(anchor < T, ErrorKind::Data, "cross_time_concat: row " + std::to_string(r) + " is fully masked");
        const S* a = x.ptr() + (r * T + anchor) * C;
        for (std::size_t t = 0; t < T; ++t) {
            S* o = out.ptr() + (r * T + t) * 2 * C;
            std::copy_n(x.ptr() + (r * T + t) * C, C, o);
            std::copy_n(a, C, o + C);
        }
    }
    return out;
}

template <typename S>
void EmbeddingParams<S>::collect(ParamList<S>& out) {
    proj1a.collect(out);
    proj1b.collect(out);
    for (auto* p : {&mask_token, &tod, &dow, &spt, &conv_w, &conv_b}) out.push_back(p);
}

template <typename S>
void EncoderLayer<S>::collect(ParamList<S>& out, bool prenorm) {
    comp1.collect(out);
    comp2.collect(out);
    out.push_back(&proxy);
    mha1.collect(out);
    mha2.collect(out);
    ffn1.collect(out);
    ffn2.collect(out);
    decomp1.collect(out);
    decomp2.collect(out);
    if (prenorm) {
        norm1.collect(out);
        norm2.collect(out);
    }
}

template <typename S>
Model<S>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.width, T = cfg.input_len, p = cfg.compressed, k = cfg.conv_kernel;
    constexpr double table_std = 0.02;

    emb.proj1a = Linear<S>("emb.proj1.0", 2 * cfg.features, d, rng);
    emb.proj1b = Linear<S>("emb.proj1.1", d, d, rng);
    emb.mask_token = Parameter<S>("emb.mask_token", normal_tensor<S>({d}, table_std, rng));
    emb.tod = Parameter<S>("emb.tod", normal_tensor<S>({cfg.steps_per_day, d}, table_std, rng));
    emb.dow = Parameter<S>("emb.dow", normal_tensor<S>({7, d}, table_std, rng));
    emb.spt = Parameter<S>("emb.spt", normal_tensor<S>({cfg.nodes, d}, table_std, rng));
    const double conv_bound = 1.0 / std::sqrt(static_cast<double>(k * d));
    emb.conv_w = Parameter<S>("emb.proj2.weight", uniform_tensor<S>({k, d, d}, conv_bound, rng));
    emb.conv_b = Parameter<S>("emb.proj2.bias", uniform_tensor<S>({d}, conv_bound, rng));

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string n = "enc." + std::to_string(l);
        EncoderLayer<S> layer;
        layer.comp1 = Linear<S>(n + ".comp.0", T, T, rng);
        layer.comp2 = Linear<S>(n + ".comp.1", T, p, rng);
        layer.proxy = Parameter<S>(n + ".proxy", normal_tensor<S>({cfg.proxies, d}, table_std, rng));
        layer.mha1 = MultiHeadAttention<S>(n + ".mha1", d, cfg.heads, rng);
        layer.mha2 = MultiHeadAttention<S>(n + ".mha2", d, cfg.heads, rng);
        layer.ffn1 = Linear<S>(n + ".ffn.0", d, cfg.ffn_factor * d, rng);
        layer.ffn2 = Linear<S>(n + ".ffn.1", cfg.ffn_factor * d, d, rng);
        layer.decomp1 = Linear<S>(n + ".decomp.0", p, T, rng);
        layer.decomp2 = Linear<S>(n + ".decomp.1", T, T, rng);
        if (cfg.prenorm) {
            layer.norm1 = LayerNorm<S>(n + ".norm1", d);
            layer.norm2 = LayerNorm<S>(n + ".norm2", d);
        }
        enc.push_back(std::move(layer));
    }

    dec.recon1 = Linear<S>("dec.recon.0", d, d, rng);
    dec.recon2 = Linear<S>("dec.recon.1", d, cfg.features, rng);
    dec.pred_time = Linear<S>("dec.pred.time", T, cfg.horizon, rng);
    dec.pred_feat = Linear<S>("dec.pred.feat", d, cfg.features, rng);
}

template <typename S>
ParamList<S> Model<S>::parameters() {
    ParamList<S> out;
    emb.collect(out);
    for (auto& l : enc) l.collect(out, cfg_.prenorm);
    dec.recon1.collect(out);
    dec.recon2.collect(out);
    dec.pred_time.collect(out);
    dec.pred_feat.collect(out);
    return out;
}

template <typename S>
ParamList<S> Model<S>::trainable(const LossConfig& lc) {
    ParamList<S> out;
    emb.collect(out);
    if (cfg_.use_encoder)
        for (auto& l : enc) l.collect(out, cfg_.prenorm);
    if (lc.recon_head) {
        dec.recon1.collect(out);
        dec.recon2.collect(out);
    }
    if (lc.pred_head) {
        dec.pred_time.collect(out);
        dec.pred_feat.collect(out);
    }
    return out;
}

template <typename S>
std::size_t Model<S>::parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
}

template <typename S>
Var<S> Model<S>::embed_hidden(Tape<S>& tape, const Tensor<S>& x, std::span<const std::uint8_t> mask,
                              std::span<const std::int32_t> tod, std::span<const std::int32_t> dow) {
    const std::size_t T = cfg_.input_len, N = cfg_.nodes, C = cfg_.features, d = cfg_.width;
    require(x.rank() == 3 && x.dim(1) == T && x.dim(2) == C && x.dim(0) % N == 0 && x.dim(0) > 0, ErrorKind::Shape,
            "embed: expected [B*" + std::to_string(N) + ", " + std::to_string(T) + ", " + std::to_string(C) +
                "], got " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), B = R / N;
    require(tod.size() == B * T && dow.size() == B * T, ErrorKind::Shape, "embed: calendar index length");

    std::vector<std::uint8_t> row_mask(mask.begin(), mask.end());
    if (row_mask.empty()) row_mask.assign(R * T, 0);
    require(row_mask.size() == R * T, ErrorKind::Shape, "embed: mask length");

    auto cat = tape.constant(cross_time_concat(x, row_mask).reshaped({R * T, 2 * C}));
    auto h = emb.proj1b(tape, ops::relu(emb.proj1a(tape, cat)));
    h = ops::fill_masked(h, std::span<const std::uint8_t>(row_mask), tape.param(emb.mask_token));

    std::vector<std::int32_t> tod_rows(R * T), dow_rows(R * T), spt_rows(R * T);
    for (std::size_t r = 0; r < R; ++r) {
        const std::size_t b = r / N;
        for (std::size_t t = 0; t < T; ++t) {
            const auto td = tod[b * T + t], dw = dow[b * T + t];
            require(td >= 0 && static_cast<std::size_t>(td) < cfg_.steps_per_day, ErrorKind::Shape,
                    "embed: time-of-day index " + std::to_string(td) + " out of range");
            require(dw >= 0 && dw < 7, ErrorKind::Shape, "embed: day-of-week index " + std::to_string(dw) + " out of range");
            tod_rows[r * T + t] = td;
            dow_rows[r * T + t] = dw;
            spt_rows[r * T + t] = static_cast<std::int32_t>(r % N);
        }
    }
    h = ops::add(h, ops::gather_rows(tape.param(emb.tod), std::span<const std::int32_t>(tod_rows)));
    h = ops::add(h, ops::gather_rows(tape.param(emb.dow), std::span<const std::int32_t>(dow_rows)));
    h = ops::add(h, ops::gather_rows(tape.param(emb.spt), std::span<const std::int32_t>(spt_rows)));
    return ops::reshape(h, {R, T, d});
}

template <typename S>
Var<S> Model<S>::embed(Tape<S>& tape, const Tensor<S>& x, std::span<const std::uint8_t> mask,
                       std::span<const std::int32_t> tod, std::span<const std::int32_t> dow) {
    auto h = embed_hidden(tape, x, mask, tod, dow);
    return ops::conv1d_same(h, tape.param(emb.conv_w), tape.param(emb.conv_b));
}

template <typename S>
Var<S> Model<S>::compress_time(Tape<S>& tape, Var<S> e, std::size_t layer) {
    auto& L = enc.at(layer);
    require(e.value().rank() == 3 && e.dim(1) == cfg_.input_len && e.dim(2) == cfg_.width, ErrorKind::Shape,
            "compress_time: expected [R, T, d], got " + shape_str(e.shape()));
    auto t = ops::gelu(along_time(tape, L.comp1, e));
    return along_time(tape, L.comp2, t);
}

template <typename S>
Var<S> Model<S>::spatial_extract(Tape<S>& tape, Var<S> e, std::size_t layer) {
    auto& L = enc.at(layer);
    const std::size_t N = cfg_.nodes, d = cfg_.width;
    require(e.value().rank() == 3 && e.dim(0) % N == 0 && e.dim(2) == d, ErrorKind::Shape,
            "spatial_extract: expected [B*N, p, d], got " + shape_str(e.shape()));
    const std::size_t B = e.dim(0) / N, p = e.dim(1);
    // One attention group per (window, virtual step); nodes are the tokens.
    auto x = ops::reshape(ops::permute(ops::reshape(e, {B, N, p, d}), {0, 2, 1, 3}), {B * p, N, d});
    auto xin = cfg_.prenorm ? L.norm1(tape, x) : x;
    auto hp = L.mha1(tape, tape.param(L.proxy), xin, xin);
    auto h1 = ops::add(L.mha2(tape, xin, hp, hp), x);
    auto fin = cfg_.prenorm ? L.norm2(tape, h1) : h1;
    auto h = ops::add(L.ffn2(tape, ops::gelu(L.ffn1(tape, fin))), h1);
    return ops::reshape(ops::permute(ops::reshape(h, {B, p, N, d}), {0, 2, 1, 3}), {B * N, p, d});
}

template <typename S>
Var<S> Model<S>::decompress_time(Tape<S>& tape, Var<S> h, std::size_t layer) {
    auto& L = enc.at(layer);
    require(h.value().rank() == 3 && h.dim(1) == cfg_.compressed && h.dim(2) == cfg_.width, ErrorKind::Shape,
            "decompress_time: expected [R, p, d], got " + shape_str(h.shape()));
    auto t = ops::gelu(along_time(tape, L.decomp1, h));
    return along_time(tape, L.decomp2, t);
}

template <typename S>
Var<S> Model<S>::encode(Tape<S>& tape, Var<S> e) {
    if (!cfg_.use_encoder) return e;
    Var<S> x = e;
    for (std::size_t l = 0; l < enc.size(); ++l)
        x = decompress_time(tape, spatial_extract(tape, compress_time(tape, x, l), l), l);
    return ops::add(x, e);
}

template <typename S>
Var<S> Model<S>::decode_recon(Tape<S>& tape, Var<S> z) {
    auto h = ops::gelu(ops::add(dec.recon1(tape, z), z));
    return dec.recon2(tape, h);
}

template <typename S>
Var<S> Model<S>::decode_pred(Tape<S>& tape, Var<S> z, double dropout, bool training, std::mt19937_64& rng) {
    auto t = along_time(tape, dec.pred_time, ops::dropout(z, dropout, training, rng));
    return dec.pred_feat(tape, t);
}

template <typename S>
LossValues LossTerms<S>::values() const {
    LossValues v;
    v.total = total.value().item();
    if (recon.valid()) v.recon = recon.value().item();
    if (pred.valid()) v.pred = pred.value().item();
    if (ms.valid()) v.ms = ms.value().item();
    return v;
}

template <typename S>
Var<S> multiscale_loss(Var<S> pred_full, Var<S> true_full, std::span<const std::size_t> kernels, S delta) {
    require(pred_full.shape() == true_full.shape(), ErrorKind::Shape, "multiscale_loss: shape mismatch");
    require(pred_full.value().rank() == 3, ErrorKind::Shape, "multiscale_loss: expected [R, L, C]");
    require(!kernels.empty(), ErrorKind::Config, "multiscale_loss: empty kernel set");
    const std::size_t len = pred_full.dim(1);
    Var<S> total;
    for (auto k : kernels) {
        require(k >= 1 && k <= len, ErrorKind::Config,
                "multiscale_loss: kernel " + std::to_string(k) + " exceeds sequence length " + std::to_string(len));
        auto term = ops::huber_loss(ops::avg_pool_time(pred_full, k), ops::avg_pool_time(true_full, k), delta);
        total = total.valid() ? ops::add(total, term) : term;
    }
    return total;
}

template <typename S>
Var<S> combine_loss(Var<S> recon, Var<S> pred, Var<S> ms, double alpha, double beta) {
    const double gamma = 1.0 - alpha - beta;
    require(alpha >= 0 && beta >= 0 && gamma >= -1e-12, ErrorKind::Config, "loss weights must be non-negative");
    Var<S> total;
    auto add = [&](Var<S> term, double w) {
        if (!term.valid()) return;
        auto scaled = ops::scale(term, static_cast<S>(w));
        total = total.valid() ? ops::add(total, scaled) : scaled;
    };
    add(recon, alpha);
    add(pred, beta);
    add(ms, std::max(gamma, 0.0));
    require(total.valid(), ErrorKind::Config, "combine_loss: no active terms");
    return total;
}

template <typename S>
LossTerms<S> Model<S>::loss(Tape<S>& tape, const Batch& batch, const LossConfig& lc, bool masking, bool dropout,
                            std::mt19937_64& rng) {
    const std::size_t T = cfg_.input_len, F = cfg_.horizon;
    lc.validate(T, F);
    const Tensor<S> xc = batch.x_curr.template cast<S>();
    const Tensor<S> xt = batch.x_tgt.template cast<S>();
    const std::size_t R = xc.dim(0), C = cfg_.features;
    const auto mask = apply_mask(R, T, lc.mask_ratio, masking, rng);

    auto z = encode(tape, embed(tape, xc, mask, batch.tod, batch.dow));
    auto xc_v = tape.constant(xc);
    auto xt_v = tape.constant(xt);
    const S delta = static_cast<S>(lc.delta);

    LossTerms<S> out;
    Var<S> recon_hat, pred_hat;
    if (lc.recon_head) {
        recon_hat = decode_recon(tape, z);
        std::vector<std::uint8_t> elem_mask;
        if (lc.recon_masked_only && masking && std::any_of(mask.begin(), mask.end(), [](auto m) { return m != 0; })) {
            elem_mask.resize(R * T * C);
            for (std::size_t i = 0; i < R * T; ++i) std::fill_n(elem_mask.begin() + i * C, C, mask[i]);
        }
        out.recon = ops::huber_loss(recon_hat, xc_v, delta, std::span<const std::uint8_t>(elem_mask));
    }
    if (lc.pred_head) {
        pred_hat = decode_pred(tape, z, lc.dropout, dropout, rng);
        out.pred = ops::huber_loss(pred_hat, xt_v, delta);
    }

    Var<S> full_hat, full_true;
    if (recon_hat.valid() && pred_hat.valid()) {
        full_hat = ops::concat_time(recon_hat, pred_hat);
        full_true = ops::concat_time(xc_v, xt_v);
    } else if (recon_hat.valid()) {
        full_hat = recon_hat;
        full_true = xc_v;
    } else {
        full_hat = pred_hat;
        full_true = xt_v;
    }
    // Only one head left: kernels longer than the surviving segment are dropped.
    std::vector<std::size_t> ks;
    for (auto k : lc.kernels)
        if (k <= full_hat.dim(1)) ks.push_back(k);
    if (!ks.empty()) out.ms = multiscale_loss(full_hat, full_true, std::span<const std::size_t>(ks), delta);

    out.total = combine_loss(out.recon, out.pred, out.ms, lc.alpha, lc.beta);
    return out;
}

template <typename S>
Tensor<S> Model<S>::represent(const Batch& batch) {
    Tape<S> tape(false);
    const Tensor<S> xc = batch.x_curr.template cast<S>();
    auto z = encode(tape, embed(tape, xc, {}, batch.tod, batch.dow));
    const std::size_t R = xc.dim(0), T = cfg_.input_len, d = cfg_.width;
    Tensor<S> out({R, d});
    for (std::size_t r = 0; r < R; ++r) std::copy_n(z.value().ptr() + (r * T + T - 1) * d, d, out.ptr() + r * d);
    return out;
}

std::size_t parameter_formula(const ModelConfig& c) {
    const std::size_t d = c.width, T = c.input_len, F = c.horizon, C = c.features, p = c.compressed;
    const std::size_t fd = c.ffn_factor * d;
    const std::size_t embedding = (2 * C * d + d) + (d * d + d) + d + c.steps_per_day * d + 7 * d + c.nodes * d +
                                  c.conv_kernel * d * d + d;
    const std::size_t layer = (T * T + T) + (T * p + p) + c.proxies * d + 2 * 4 * (d * d + d) + (d * fd + fd) +
                              (fd * d + d) + (p * T + T) + (T * T + T) + (c.prenorm ? 4 * d : 0);
    const std::size_t decoders = (d * d + d) + (d * C + C) + (T * F + F) + (d * C + C);
    return embedding + c.layers * layer + decoders;
}

#define STREP_INSTANTIATE(S)                                                                                   \
    template Tensor<S> cross_time_concat<S>(const Tensor<S>&, std::span<const std::uint8_t>);               \
    template struct EmbeddingParams<S>;                                                                      \
    template struct EncoderLayer<S>;                                                                         \
    template struct LossTerms<S>;                                                                            \
    template class Model<S>;                                                                                 \
    template Var<S> multiscale_loss<S>(Var<S>, Var<S>, std::span<const std::size_t>, S);                    \
    template Var<S> combine_loss<S>(Var<S>, Var<S>, Var<S>, double, double);

STREP_INSTANTIATE(float)
STREP_INSTANTIATE(double)

}  // namespace strep
