#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "strep/model.hpp"

using namespace strep;
using strep::testing::check_gradients;

namespace {

ModelConfig small_cfg(std::size_t N, std::size_t d = 16) {
    ModelConfig c;
    c.nodes = N;
    c.width = d;
    c.heads = 4;
    c.proxies = 4;
    c.layers = 2;
    c.steps_per_day = 24;
    return c;
}

Batch random_batch(const ModelConfig& c, std::size_t B, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.f, 1.f);
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
Tensor<S> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    return normal_tensor<S>(std::move(s), scale, rng);
}

template <typename S>
void zero_params(ParamList<S> ps) {
    for (auto* p : ps) p->value.fill(S(0));
}

template <typename S>
void zero_biases(ParamList<S> ps) {
    for (auto* p : ps)
        if (p->name.ends_with(".bias")) p->value.fill(S(0));
}

// Rows of a [R, ...] tensor, permuted: out[i] = x[perm[i]].
template <typename S>
Tensor<S> permute_rows(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
    Tensor<S> out(x.shape());
    const std::size_t stride = x.size() / x.dim(0);
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(x.ptr() + perm[i] * stride, stride, out.ptr() + i * stride);
    return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Direct-formula multi-head attention on plain matrices (row-major).
using Mat = std::vector<std::vector<double>>;

Mat affine(const Mat& x, const Linear<double>& lin) {
    const std::size_t in = lin.weight.value.dim(0), out = lin.weight.value.dim(1);
    Mat y(x.size(), std::vector<double>(out));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double s = lin.bias.value[o];
            for (std::size_t i = 0; i < in; ++i) s += x[r][i] * lin.weight.value[i * out + o];
            y[r][o] = s;
        }
    return y;
}

Mat naive_mha(const Mat& q_in, const Mat& kv_in, const MultiHeadAttention<double>& mha) {
    const Mat Q = affine(q_in, mha.q_proj), K = affine(kv_in, mha.k_proj), V = affine(kv_in, mha.v_proj);
    const std::size_t d = Q[0].size(), dh = d / mha.heads;
    Mat O(Q.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < mha.heads; ++h)
        for (std::size_t i = 0; i < Q.size(); ++i) {
            std::vector<double> s(K.size());
            for (std::size_t j = 0; j < K.size(); ++j) {
                double dot = 0;
                for (std::size_t e = 0; e < dh; ++e) dot += Q[i][h * dh + e] * K[j][h * dh + e];
                s[j] = dot / std::sqrt(static_cast<double>(dh));
            }
            const double mx = *std::max_element(s.begin(), s.end());
            double z = 0;
            for (auto& v : s) z += (v = std::exp(v - mx));
            for (std::size_t j = 0; j < K.size(); ++j)
                for (std::size_t e = 0; e < dh; ++e) O[i][h * dh + e] += s[j] / z * V[j][h * dh + e];
        }
    return affine(O, mha.out_proj);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Mat naive_extract(const Mat& x, EncoderLayer<double>& L) {
    Mat proxy(L.proxy.value.dim(0), std::vector<double>(L.proxy.value.dim(1)));
    for (std::size_t i = 0; i < proxy.size(); ++i)
        for (std::size_t j = 0; j < proxy[i].size(); ++j) proxy[i][j] = L.proxy.value[i * proxy[i].size() + j];
    const Mat hp = naive_mha(proxy, x, L.mha1);
    Mat h1 = naive_mha(x, hp, L.mha2);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) h1[i][j] += x[i][j];
    Mat f = affine(h1, L.ffn1);
    for (auto& row : f)
        for (auto& v : row) v = gelu(v);
    Mat out = affine(f, L.ffn2);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) out[i][j] += h1[i][j];
    return out;
}

}  // namespace

TEST_CASE("masking") {
    std::mt19937_64 rng(1);
    auto none = apply_mask(5, 12, 0.0, true, rng);
    CHECK(std::all_of(none.begin(), none.end(), [](auto m) { return m == 0; }));

    auto m = apply_mask(40, 12, 0.25, true, rng);
    for (std::size_t r = 0; r < 40; ++r) CHECK(std::accumulate(m.begin() + r * 12, m.begin() + (r + 1) * 12, 0) == 3);
    // rows are drawn independently
    bool differ = false;
    for (std::size_t r = 1; r < 40; ++r) differ |= !std::equal(m.begin(), m.begin() + 12, m.begin() + r * 12);
    CHECK(differ);

    auto off = apply_mask(5, 12, 0.25, false, rng);
    CHECK(std::all_of(off.begin(), off.end(), [](auto v) { return v == 0; }));
    CHECK_THROWS_AS(apply_mask(5, 12, 1.0, true, rng), Error);

    // every step is masked with the same frequency
    std::vector<int> freq(12, 0);
    std::mt19937_64 r2(9);
    auto big = apply_mask(6000, 12, 0.25, true, r2);
    for (std::size_t i = 0; i < big.size(); ++i) freq[i % 12] += big[i];
    for (int f : freq) CHECK(std::abs(f - 1500) < 150);
}

TEST_CASE("cross-time concatenation") {
    Tensor<double> x({2, 4, 1}, std::vector<double>{1, 2, 3, 4, 10, 20, 30, 40});
    auto c = cross_time_concat(x, {});
    CHECK(c.shape() == Shape{2, 4, 2});
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(c[(0 * 4 + t) * 2 + 0] == x[t]);
        CHECK(c[(0 * 4 + t) * 2 + 1] == 4);
        CHECK(c[(1 * 4 + t) * 2 + 1] == 40);
    }
    std::vector<std::uint8_t> mask{0, 0, 0, 0, 0, 0, 0, 1};
    c = cross_time_concat(x, mask);
    CHECK(c[1] == 4);
    CHECK(c[(1 * 4 + 0) * 2 + 1] == 30);
    mask = {0, 0, 1, 1, 0, 1, 0, 1};
    c = cross_time_concat(x, mask);
    CHECK(c[1] == 2);
    CHECK(c[(1 * 4 + 3) * 2 + 1] == 30);
    mask = {0, 0, 0, 0, 1, 1, 1, 1};
    CHECK_THROWS_AS(cross_time_concat(x, mask), Error);
}

TEST_CASE("embedding") {
    ModelConfig cfg;
    cfg.nodes = 4;
    Model<float> model(cfg, 3);
    auto batch = random_batch(cfg, 1, 4);
    {
        Tape<float> tape(false);
        auto e = model.embed(tape, batch.x_curr, {}, batch.tod, batch.dow);
        CHECK(e.shape() == Shape{4, 12, 64});
    }

    SUBCASE("identical nodes embed identically") {
        auto small = small_cfg(3);
        Model<double> m(small, 5);
        auto b = random_batch(small, 1, 6);
        Tensor<double> x = b.x_curr.cast<double>();
        std::copy_n(x.ptr(), 12, x.ptr() + 2 * 12);
        std::copy_n(m.emb.spt.value.ptr(), small.width, m.emb.spt.value.ptr() + 2 * small.width);
        std::vector<std::uint8_t> mask(3 * 12, 0);
        mask[2] = mask[24 + 2] = 1;
        Tape<double> tape(false);
        auto e = m.embed(tape, x, mask, b.tod, b.dow);
        const std::size_t row = 12 * small.width;
        CHECK(std::equal(e.value().ptr(), e.value().ptr() + row, e.value().ptr() + 2 * row));
        CHECK(!std::equal(e.value().ptr(), e.value().ptr() + row, e.value().ptr() + row));
    }

    SUBCASE("masked positions ignore their data") {
        auto small = small_cfg(2);
        Model<double> m(small, 5);
        auto b = random_batch(small, 1, 7);
        Tensor<double> x = b.x_curr.cast<double>();
        std::vector<std::uint8_t> mask(24, 0);
        mask[3] = mask[5] = mask[12 + 0] = 1;
        Tape<double> t1(false);
        auto h1 = m.embed_hidden(t1, x, mask, b.tod, b.dow).value();
        x[3] += 50;
        x[5] -= 7;
        x[12] *= -3;
        Tape<double> t2(false);
        auto h2 = m.embed_hidden(t2, x, mask, b.tod, b.dow).value();
        const std::size_t d = small.width;
        for (std::size_t pos : {3u, 5u, 12u}) {
            CHECK(std::equal(h1.ptr() + pos * d, h1.ptr() + (pos + 1) * d, h2.ptr() + pos * d));
            // token + tod + dow + spt
            const std::size_t n = pos / 12, t = pos % 12;
            for (std::size_t j = 0; j < d; ++j) {
                const double expect = m.emb.mask_token.value[j] + m.emb.tod.value[b.tod[t] * d + j] +
                                      m.emb.dow.value[b.dow[t] * d + j] + m.emb.spt.value[n * d + j];
                CHECK(h1[pos * d + j] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }

    SUBCASE("spatial table rows are node-local") {
        auto small = small_cfg(3);
        Model<double> m(small, 5);
        auto b = random_batch(small, 2, 8);
        Tensor<double> x = b.x_curr.cast<double>();
        Tape<double> t1(false);
        auto e1 = m.embed(t1, x, {}, b.tod, b.dow).value();
        for (std::size_t j = 0; j < small.width; ++j) m.emb.spt.value[1 * small.width + j] += 0.5;
        Tape<double> t2(false);
        auto e2 = m.embed(t2, x, {}, b.tod, b.dow).value();
        const std::size_t row = 12 * small.width;
        for (std::size_t r = 0; r < 6; ++r) {
            const bool same = std::equal(e1.ptr() + r * row, e1.ptr() + (r + 1) * row, e2.ptr() + r * row);
            CHECK(same == (r % 3 != 1));
        }
    }

    SUBCASE("kernel 1 keeps steps independent apart from the anchor") {
        auto small = small_cfg(2);
        small.conv_kernel = 1;
        Model<double> m(small, 5);
        auto b = random_batch(small, 1, 9);
        Tensor<double> x = b.x_curr.cast<double>();
        Tape<double> t1(false);
        auto e1 = m.embed(t1, x, {}, b.tod, b.dow).value();
        x[4] += 3.0;  // node 0, step 4
        Tape<double> t2(false);
        auto e2 = m.embed(t2, x, {}, b.tod, b.dow).value();
        const std::size_t d = small.width;
        for (std::size_t pos = 0; pos < 24; ++pos) {
            const bool same = std::equal(e1.ptr() + pos * d, e1.ptr() + (pos + 1) * d, e2.ptr() + pos * d);
            CHECK(same == (pos != 4));
        }
    }

    SUBCASE("bad inputs") {
        auto small = small_cfg(2);
        Model<double> m(small, 5);
        auto b = random_batch(small, 1, 9);
        Tensor<double> x = b.x_curr.cast<double>();
        std::vector<std::uint8_t> full(24, 0);
        std::fill_n(full.begin(), 12, 1);
        Tape<double> tape(false);
        CHECK_THROWS_AS(m.embed(tape, x, full, b.tod, b.dow), Error);
        auto tod = b.tod;
        tod[3] = 24;
        CHECK_THROWS_AS(m.embed(tape, x, {}, tod, b.dow), Error);
        auto dow = b.dow;
        dow[0] = -1;
        CHECK_THROWS_AS(m.embed(tape, x, {}, b.tod, dow), Error);
    }
}

TEST_CASE("temporal compression and decompression") {
    ModelConfig cfg;
    cfg.nodes = 307;
    Model<float> model(cfg, 1);
    Tape<float> tape(false);
    auto e = tape.constant(random_tensor<float>({307, 12, 64}, 2));
    auto c = model.compress_time(tape, e, 0);
    CHECK(c.shape() == Shape{307, 3, 64});
    auto back = model.decompress_time(tape, c, 0);
    CHECK(back.shape() == Shape{307, 12, 64});

    auto small = small_cfg(3);
    Model<double> m(small, 4);
    zero_biases(m.parameters());
    Tape<double> t(false);
    auto zc = m.compress_time(t, t.constant(Tensor<double>({3, 12, 16})), 0);
    CHECK(std::all_of(zc.value().data().begin(), zc.value().data().end(), [](double v) { return v == 0; }));
    auto zd = m.decompress_time(t, t.constant(Tensor<double>({3, 3, 16})), 1);
    CHECK(std::all_of(zd.value().data().begin(), zd.value().data().end(), [](double v) { return v == 0; }));

    Model<double> m2(small, 4);
    auto x = random_tensor<double>({3, 12, 16}, 5);
    std::copy_n(x.ptr(), 12 * 16, x.ptr() + 12 * 16);
    auto cx = m2.compress_time(t, t.constant(x), 0).value();
    CHECK(std::equal(cx.ptr(), cx.ptr() + 3 * 16, cx.ptr() + 3 * 16));

    // every input step reaches every output step
    auto base = m2.decompress_time(t, m2.compress_time(t, t.constant(x), 0), 0).value();
    for (std::size_t s = 0; s < 12; ++s) {
        auto xp = x;
        xp[s * 16 + 2] += 1e-4;
        auto out = m2.decompress_time(t, m2.compress_time(t, t.constant(xp), 0), 0).value();
        for (std::size_t o = 0; o < 12; ++o) {
            double delta = 0;
            for (std::size_t j = 0; j < 16; ++j) delta += std::abs(out[o * 16 + j] - base[o * 16 + j]);
            CHECK(delta > 0);
        }
    }
}

TEST_CASE("spatial extraction") {
    SUBCASE("single node") {
        auto cfg = small_cfg(1);
        Model<double> m(cfg, 2);
        Tape<double> t(false);
        auto x = random_tensor<double>({1, 3, 16}, 1);
        auto h = m.spatial_extract(t, t.constant(x), 0).value();
        CHECK(h.shape() == Shape{1, 3, 16});
        // with one key the attention weights are 1, so the result is a fixed chain of projections
        for (std::size_t j = 0; j < 3; ++j) {
            Mat row{std::vector<double>(x.ptr() + j * 16, x.ptr() + (j + 1) * 16)};
            auto ref = naive_extract(row, m.enc[0]);
            for (std::size_t c = 0; c < 16; ++c) CHECK(h[j * 16 + c] == doctest::Approx(ref[0][c]).epsilon(1e-10));
        }
    }

    SUBCASE("dense oracle at N=16") {
        auto cfg = small_cfg(16, 32);
        cfg.proxies = 8;
        Model<double> m(cfg, 3);
        Tape<double> t(false);
        const std::size_t B = 2, p = 3, d = 32;
        auto x = random_tensor<double>({B * 16, p, d}, 2);
        auto h = m.spatial_extract(t, t.constant(x), 1).value();
        double worst = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < p; ++j) {
                Mat g(16, std::vector<double>(d));
                for (std::size_t n = 0; n < 16; ++n)
                    for (std::size_t c = 0; c < d; ++c) g[n][c] = x[((b * 16 + n) * p + j) * d + c];
                auto ref = naive_extract(g, m.enc[1]);
                for (std::size_t n = 0; n < 16; ++n)
                    for (std::size_t c = 0; c < d; ++c)
                        worst = std::max(worst, std::abs(ref[n][c] - h[((b * 16 + n) * p + j) * d + c]));
            }
        CHECK(worst < 1e-5);
    }

    SUBCASE("permutation equivariance on N=5") {
        auto cfg = small_cfg(5);
        Model<double> m(cfg, 3);
        Tape<double> t(false);
        auto x = random_tensor<double>({5, 3, 16}, 4);
        const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
        auto h = m.spatial_extract(t, t.constant(x), 0).value();
        auto hp = m.spatial_extract(t, t.constant(permute_rows(x, perm)), 0).value();
        auto expect = permute_rows(h, perm);
        CHECK(max_abs_diff(hp.data(), expect.data()) < 1e-12);
    }
}

TEST_CASE("encoder") {
    ModelConfig cfg;
    cfg.nodes = 4;
    Model<float> model(cfg, 7);
    {
        Tape<float> t(false);
        auto z = model.encode(t, t.constant(random_tensor<float>({4, 12, 64}, 1)));
        CHECK(z.shape() == Shape{4, 12, 64});
    }

    auto small = small_cfg(5);
    small.layers = 3;
    Model<double> m(small, 8);
    auto e = random_tensor<double>({10, 12, 16}, 3);

    SUBCASE("zero weights give the identity") {
        for (auto& L : m.enc) {
            ParamList<double> ps;
            L.collect(ps, false);
            zero_params(ps);
        }
        Tape<double> t(false);
        auto z = m.encode(t, t.constant(e)).value();
        CHECK(z.data().size() == e.data().size());
        CHECK(std::equal(z.data().begin(), z.data().end(), e.data().begin()));
    }

    SUBCASE("node permutation commutes with encode") {
        const std::vector<std::size_t> perm{4, 2, 0, 1, 3, 9, 5, 8, 6, 7};
        Tape<double> t(false);
        auto z = m.encode(t, t.constant(e)).value();
        auto zp = m.encode(t, t.constant(permute_rows(e, perm))).value();
        CHECK(max_abs_diff(zp.data(), permute_rows(z, perm).data()) < 1e-10);
    }

    SUBCASE("bypassed encoder returns E") {
        auto bypass = small;
        bypass.use_encoder = false;
        Model<double> mb(bypass, 8);
        Tape<double> t(false);
        auto z = mb.encode(t, t.constant(e)).value();
        CHECK(std::equal(z.data().begin(), z.data().end(), e.data().begin()));
    }

    SUBCASE("pre-norm variant keeps shapes") {
        auto pn = small;
        pn.prenorm = true;
        Model<double> mp(pn, 8);
        Tape<double> t(false);
        CHECK(mp.encode(t, t.constant(e)).shape() == Shape{10, 12, 16});
        CHECK(mp.parameter_count() == parameter_formula(pn));
    }
}

TEST_CASE("decoders") {
    ModelConfig cfg;
    cfg.nodes = 3;
    Model<double> m(cfg, 2);
    std::mt19937_64 rng(1);
    Tape<double> t(false);
    auto z = t.constant(random_tensor<double>({3, 12, 64}, 9));
    CHECK(m.decode_recon(t, z).shape() == Shape{3, 12, 1});
    auto p1 = m.decode_pred(t, z, 0.1, false, rng).value();
    auto p2 = m.decode_pred(t, z, 0.1, false, rng).value();
    CHECK(p1.shape() == Shape{3, 12, 1});
    CHECK(p1 == p2);
    auto p3 = m.decode_pred(t, z, 0.5, true, rng).value();
    CHECK(!(p3 == p1));

    zero_biases(m.parameters());
    Tape<double> t0(false);
    auto zero = t0.constant(Tensor<double>({3, 12, 64}));
    auto r0 = m.decode_recon(t0, zero).value();
    auto q0 = m.decode_pred(t0, zero, 0.1, false, rng).value();
    CHECK(std::all_of(r0.data().begin(), r0.data().end(), [](double v) { return v == 0; }));
    CHECK(std::all_of(q0.data().begin(), q0.data().end(), [](double v) { return v == 0; }));

    // d = C = 1, Lin1 = 0, Lin2 = identity: output is GELU(Z)
    ModelConfig tiny;
    tiny.nodes = 1;
    tiny.width = 1;
    tiny.heads = 1;
    Model<double> mt(tiny, 3);
    mt.dec.recon1.weight.value.fill(0);
    mt.dec.recon1.bias.value.fill(0);
    mt.dec.recon2.weight.value.fill(1);
    mt.dec.recon2.bias.value.fill(0);
    Tensor<double> zz({1, 12, 1});
    for (std::size_t i = 0; i < 12; ++i) zz[i] = -3.0 + 0.5 * static_cast<double>(i);
    auto r = mt.decode_recon(t, t.constant(zz)).value();
    for (std::size_t i = 0; i < 12; ++i) CHECK(r[i] == doctest::Approx(gelu(zz[i])).epsilon(1e-12));
}

TEST_CASE("multi-scale loss") {
    Tape<double> t(false);
    const std::size_t k2[] = {2};
    auto pred = t.constant(Tensor<double>({1, 4, 1}, std::vector<double>{1, 1, 3, 3}));
    auto truth = t.constant(Tensor<double>({1, 4, 1}, std::vector<double>{1, 1, 1, 1}));
    CHECK(multiscale_loss(pred, truth, std::span<const std::size_t>(k2), 1.0).value().item() == doctest::Approx(0.75));

    auto a = t.constant(random_tensor<double>({3, 24, 1}, 1, 2.0));
    auto b = t.constant(random_tensor<double>({3, 24, 1}, 2, 2.0));
    const std::vector<std::size_t> omega{2, 4, 8, 16};
    CHECK(multiscale_loss(a, a, std::span<const std::size_t>(omega), 1.0).value().item() == 0.0);

    const std::size_t k1[] = {1};
    CHECK(multiscale_loss(a, b, std::span<const std::size_t>(k1), 1.0).value().item() ==
          doctest::Approx(ops::huber_loss(a, b, 1.0).value().item()).epsilon(1e-14));

    // plain sum over kernels
    double sum = 0;
    for (auto k : omega) {
        const std::size_t one[] = {k};
        sum += multiscale_loss(a, b, std::span<const std::size_t>(one), 1.0).value().item();
    }
    CHECK(multiscale_loss(a, b, std::span<const std::size_t>(omega), 1.0).value().item() ==
          doctest::Approx(sum).epsilon(1e-12));

    const std::vector<std::size_t> perm{2, 0, 1};
    auto ap = t.constant(permute_rows(a.value(), perm));
    auto bp = t.constant(permute_rows(b.value(), perm));
    CHECK(multiscale_loss(ap, bp, std::span<const std::size_t>(omega), 1.0).value().item() ==
          doctest::Approx(multiscale_loss(a, b, std::span<const std::size_t>(omega), 1.0).value().item()).epsilon(1e-12));

    const std::size_t k25[] = {25};
    CHECK_THROWS_AS(multiscale_loss(a, b, std::span<const std::size_t>(k25), 1.0), Error);
}

TEST_CASE("total loss") {
    Tape<double> t(false);
    auto c = [&](double v) { return t.constant(Tensor<double>::scalar(v)); };
    CHECK(combine_loss(c(0.3), c(0.3), c(0.3), 1.0 / 3, 1.0 / 3).value().item() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(combine_loss(c(2.0), c(4.0), c(100.0), 0.5, 0.5).value().item() == doctest::Approx(3.0));
    CHECK(combine_loss(c(0), c(0), c(0), 0.3, 0.3).value().item() == 0.0);
    CHECK(combine_loss(c(1.0), c(2.0), c(3.0), 0.3, 0.3).value().item() == doctest::Approx(0.3 + 0.6 + 1.2));
    CHECK_THROWS_AS(combine_loss(c(1), c(1), c(1), 0.7, 0.5), Error);
    CHECK_THROWS_AS(combine_loss(c(1), c(1), c(1), -0.1, 0.5), Error);

    LossConfig lc;
    lc.alpha = 0.7;
    lc.beta = 0.4;
    CHECK_THROWS_AS(lc.validate(12, 12), Error);
    lc = {};
    lc.kernels = {2, 25};
    CHECK_THROWS_AS(lc.validate(12, 12), Error);

    // components recombine into the total
    auto cfg = small_cfg(3);
    Model<double> m(cfg, 4);
    auto batch = random_batch(cfg, 2, 5);
    std::mt19937_64 rng(3);
    Tape<double> tape(false);
    auto terms = m.loss(tape, batch, LossConfig{}, true, true, rng);
    auto v = terms.values();
    CHECK(v.total == doctest::Approx(0.3 * v.recon + 0.3 * v.pred + 0.4 * v.ms).epsilon(1e-12));
    CHECK(v.total > 0);
}

TEST_CASE("perfect outputs give zero loss") {
    auto cfg = small_cfg(2);
    Model<double> m(cfg, 4);
    auto batch = random_batch(cfg, 1, 5);
    // zero the data and every decoder weight: both heads then emit exact zeros
    batch.x_curr.fill(0);
    batch.x_tgt.fill(0);
    for (auto* lin : {&m.dec.recon1, &m.dec.recon2, &m.dec.pred_time, &m.dec.pred_feat}) {
        lin->weight.value.fill(0);
        lin->bias.value.fill(0);
    }
    std::mt19937_64 rng(1);
    Tape<double> t(false);
    auto v = m.loss(t, batch, LossConfig{}, true, true, rng).values();
    CHECK(v.total == 0.0);
    CHECK(v.recon == 0.0);
    CHECK(v.pred == 0.0);
    CHECK(v.ms == 0.0);
}

TEST_CASE("single-head variants") {
    auto cfg = small_cfg(2);
    Model<double> m(cfg, 4);
    auto batch = random_batch(cfg, 1, 5);
    std::mt19937_64 rng(1);
    LossConfig no_pred;
    no_pred.pred_head = false;
    no_pred.beta = 0;
    no_pred.alpha = 0.3 / 0.7;
    Tape<double> t(false);
    auto v = m.loss(t, batch, no_pred, true, false, rng).values();
    CHECK(v.pred == 0.0);
    CHECK(v.total == doctest::Approx(no_pred.alpha * v.recon + no_pred.gamma() * v.ms).epsilon(1e-12));

    LossConfig bad;
    bad.pred_head = false;
    CHECK_THROWS_AS(m.loss(t, batch, bad, true, false, rng), Error);

    auto p1 = m.trainable(no_pred).size();
    CHECK(p1 == m.parameters().size() - 4);
}

TEST_CASE("gradients reach every parameter group") {
    auto cfg = small_cfg(3);
    Model<float> m(cfg, 4);
    auto batch = random_batch(cfg, 2, 5);
    std::mt19937_64 rng(3);
    Tape<float> tape;
    auto terms = m.loss(tape, batch, LossConfig{}, true, true, rng);
    tape.backward(terms.total);
    for (auto* p : m.parameters()) {
        double norm = 0;
        for (float g : p->grad.data()) norm += std::abs(g);
        INFO(p->name);
        CHECK(norm > 0);
    }
}

TEST_CASE("micro model passes finite differences in 64-bit") {
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
    auto batch = random_batch(cfg, 2, 12);
    LossConfig lc;
    lc.kernels = {2, 4, 8};
    lc.delta = 5.0;  // keeps every residual on the quadratic branch
    auto report = check_gradients(m.parameters(), [&](Tape<double>& tape) {
        std::mt19937_64 rng(99);
        return m.loss(tape, batch, lc, true, false, rng).total;
    }, 1e-5);
    INFO(report.worst_name);
    CHECK(report.worst < 1e-4);
}

TEST_CASE("parameter census") {
    ModelConfig cfg;
    cfg.nodes = 307;
    CHECK(parameter_formula(cfg) == 212043);
    Model<float> m(cfg, 0);
    CHECK(m.parameter_count() == 212043);

    auto names = m.parameters();
    std::vector<std::string> seen;
    for (auto* p : names) seen.push_back(p->name);
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("config hash") {
    ModelConfig a;
    a.nodes = 10;
    auto b = a;
    CHECK(a.hash() == b.hash());
    b.width = 32;
    CHECK(a.hash() != b.hash());
    CHECK(ModelConfig::from_json(a.to_json()).hash() == a.hash());
    LossConfig lc;
    lc.kernels = {2, 4};
    auto back = LossConfig::from_json(lc.to_json());
    CHECK(back.kernels == lc.kernels);
    CHECK(back.alpha == lc.alpha);
}
