#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/data.hpp"
#include "strep/nn.hpp"

namespace strep {

/// Architecture. Every field here feeds the config hash stored in checkpoints.
struct ModelConfig {
    std::size_t nodes = 0;        // N
    std::size_t input_len = 12;   // T
    std::size_t horizon = 12;     // F
    std::size_t features = 1;     // C
    std::size_t width = 64;       // d
    std::size_t compressed = 3;   // p
    std::size_t proxies = 8;      // m
    std::size_t layers = 3;       // L
    std::size_t heads = 4;
    std::size_t ffn_factor = 2;
    std::size_t steps_per_day = 288;
    std::size_t conv_kernel = 3;
    bool prenorm = false;
    bool use_encoder = true;  // false: Z = E (ablation)

    void validate() const;
    std::uint64_t hash() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Objective settings. gamma is always 1 - alpha - beta.
struct LossConfig {
    double alpha = 0.3;
    double beta = 0.3;
    double delta = 1.0;
    std::vector<std::size_t> kernels{2, 4, 8, 16};
    double mask_ratio = 0.25;
    double dropout = 0.1;
    bool recon_head = true;
    bool pred_head = true;
    bool recon_masked_only = false;

    double gamma() const noexcept { return 1.0 - alpha - beta; }
    void validate(std::size_t T, std::size_t F) const;
    nlohmann::json to_json() const;
    static LossConfig from_json(const nlohmann::json& j);
};

/// B windows with all N nodes each. Row r = b * N + n.
struct Batch {
    std::size_t windows = 0;
    Tensor<float> x_curr;             // [B*N, T, C]
    Tensor<float> x_tgt;              // [B*N, F, C]
    std::vector<std::int32_t> tod;    // [B*T]
    std::vector<std::int32_t> dow;    // [B*T]
    std::vector<std::size_t> window_end;
};

Batch make_batch(const SeriesTensor& s, std::span<const std::size_t> starts, std::size_t T, std::size_t F);

/// Per row, exactly floor(r*T) distinct steps drawn uniformly; all zeros when not training.
std::vector<std::uint8_t> apply_mask(std::size_t rows, std::size_t T, double ratio, bool training,
                                     std::mt19937_64& rng);

/// [R, T, C] -> [R, T, 2C]: each step joined with the latest unmasked step of its row.
template <typename S>
Tensor<S> cross_time_concat(const Tensor<S>& x, std::span<const std::uint8_t> mask);

template <typename S>
struct EmbeddingParams {
    Linear<S> proj1a, proj1b;
    Parameter<S> mask_token;  // [d]
    Parameter<S> tod, dow, spt;
    Parameter<S> conv_w, conv_b;  // [k, d, d], [d]
    void collect(ParamList<S>& out);
};

template <typename S>
struct EncoderLayer {
    Linear<S> comp1, comp2;
    Parameter<S> proxy;  // [m, d]
    MultiHeadAttention<S> mha1, mha2;
    Linear<S> ffn1, ffn2;
    Linear<S> decomp1, decomp2;
    LayerNorm<S> norm1, norm2;  // only with prenorm
    void collect(ParamList<S>& out, bool prenorm);
};

template <typename S>
struct DecoderParams {
    Linear<S> recon1, recon2;
    Linear<S> pred_time, pred_feat;
};

struct LossValues {
    double total = 0, recon = 0, pred = 0, ms = 0;
};

template <typename S>
struct LossTerms {
    Var<S> total, recon, pred, ms;
    LossValues values() const;
};

template <typename S>
class Model {
   public:
    Model() = default;
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Every parameter, in checkpoint order.
    ParamList<S> parameters();
    /// Parameters that receive gradients under `loss` (inactive heads and a bypassed encoder are left out).
    ParamList<S> trainable(const LossConfig& loss);
    std::size_t parameter_count();

    /// Before projector2: projected rows, mask token filled, calendar and spatial tables added. [R, T, d]
    Var<S> embed_hidden(Tape<S>& tape, const Tensor<S>& x, std::span<const std::uint8_t> mask,
                        std::span<const std::int32_t> tod, std::span<const std::int32_t> dow);
    Var<S> embed(Tape<S>& tape, const Tensor<S>& x, std::span<const std::uint8_t> mask,
                 std::span<const std::int32_t> tod, std::span<const std::int32_t> dow);

    Var<S> compress_time(Tape<S>& tape, Var<S> e, std::size_t layer);
    Var<S> spatial_extract(Tape<S>& tape, Var<S> e, std::size_t layer);
    Var<S> decompress_time(Tape<S>& tape, Var<S> h, std::size_t layer);
    Var<S> encode(Tape<S>& tape, Var<S> e);

    Var<S> decode_recon(Tape<S>& tape, Var<S> z);
    Var<S> decode_pred(Tape<S>& tape, Var<S> z, double dropout, bool training, std::mt19937_64& rng);

    /// Full forward and objective on one batch. Training uses both masking and dropout; validation masks only.
    LossTerms<S> loss(Tape<S>& tape, const Batch& batch, const LossConfig& lc, bool masking, bool dropout,
                      std::mt19937_64& rng);

    /// Unmasked forward; returns Z[:, T-1, :] as [B*N, d].
    Tensor<S> represent(const Batch& batch);

    EmbeddingParams<S> emb;
    std::vector<EncoderLayer<S>> enc;
    DecoderParams<S> dec;

   private:
    ModelConfig cfg_;
};

/// Sum over kernels of Huber(avgpool_k(pred), avgpool_k(truth)). Kernels longer than the sequence are an error.
template <typename S>
Var<S> multiscale_loss(Var<S> pred_full, Var<S> true_full, std::span<const std::size_t> kernels, S delta);

/// alpha*recon + beta*pred + gamma*ms on already-computed terms.
template <typename S>
Var<S> combine_loss(Var<S> recon, Var<S> pred, Var<S> ms, double alpha, double beta);

/// Analytic parameter census, independent of any model instance.
std::size_t parameter_formula(const ModelConfig& cfg);

}  // namespace strep
