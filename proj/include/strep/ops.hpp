#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "strep/tape.hpp"

// Differentiable operators. Every function records its result on the tape that owns its inputs.
namespace strep::ops {

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T s);

/// y = x W (+ b) over the trailing axis: x [..., in], W [in, out], b [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b = {});

/// Mixes axis 1 of x [R, L, C] with W [L, O] (+ b [O]) -> [R, O, C].
template <typename T>
Var<T> time_linear(Var<T> x, Var<T> w, Var<T> b = {});

template <typename T>
Var<T> relu(Var<T> x);

/// Exact erf form: x * Phi(x).
template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

/// Generic axis permutation; output axis i is input axis perm[i].
template <typename T>
Var<T> permute(Var<T> x, std::vector<std::size_t> perm);

/// Length-preserving convolution along axis 1 of x [R, T, d]; kernel [k, d_in, d_out], k odd, zero padding.
template <typename T>
Var<T> conv1d_same(Var<T> x, Var<T> kernel, Var<T> bias);

/// Rows of table [V, d] selected by idx -> [idx.size(), d].
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> idx);

/// x [R, d]; rows with mask[r] != 0 are replaced by token [d].
template <typename T>
Var<T> fill_masked(Var<T> x, std::span<const std::uint8_t> mask, Var<T> token);

/// x [...] -> [count, ...] by repetition; gradient sums over the new axis.
template <typename T>
Var<T> broadcast_leading(Var<T> x, std::size_t count);

/// Scaled dot-product attention with head splitting and no projections.
/// q [G, Lq, d], k [G, Lk, d], v [G, Lk, d] -> [G, Lq, d]; scale 1/sqrt(d/heads).
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads);

/// Non-overlapping mean over axis 1 of x [R, T, C]; trailing remainder dropped.
template <typename T>
Var<T> avg_pool_time(Var<T> x, std::size_t k);

/// Concatenate a [R, T1, C] and b [R, T2, C] along axis 1.
template <typename T>
Var<T> concat_time(Var<T> a, Var<T> b);

/// Mean Huber penalty of a - b. With a non-empty `mask`, only flagged elements count.
template <typename T>
Var<T> huber_loss(Var<T> a, Var<T> b, T delta, std::span<const std::uint8_t> mask = {});

/// Training: zero with probability `rate`, scale survivors by 1/(1-rate). Otherwise identity.
template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, std::mt19937_64& rng);

/// Normalizes the trailing axis, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

template <typename T>
Var<T> sum(Var<T> x);

// Raw-tensor helper shared by permute and callers that do not need a tape.
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm);

}  // namespace strep::ops
