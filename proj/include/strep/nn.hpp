#pragma once

#include <random>
#include <string>
#include <vector>

#include "strep/ops.hpp"

namespace strep {

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

/// Tensor filled from U(-bound, bound).
template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

/// Tensor filled from N(0, stddev^2).
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);

/// Dense layer over the trailing axis, initialized like torch.nn.Linear.
template <typename T>
struct Linear {
    Parameter<T> weight;  // [in, out]
    Parameter<T> bias;    // [out]

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);

    Var<T> operator()(Tape<T>& tape, Var<T> x) { return ops::linear(x, tape.param(weight), tape.param(bias)); }
    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

template <typename T>
struct LayerNorm {
    Parameter<T> gamma;
    Parameter<T> beta;

    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t width);

    Var<T> operator()(Tape<T>& tape, Var<T> x) {
        return ops::layer_norm(x, tape.param(gamma), tape.param(beta));
    }
    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

/// Multi-head attention with separate q/k/v input projections and an output projection.
template <typename T>
struct MultiHeadAttention {
    Linear<T> q_proj, k_proj, v_proj, out_proj;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(const std::string& name, std::size_t width, std::size_t heads, std::mt19937_64& rng);

    /// q [G, Lq, d] or a shared [Lq, d] query set; k, v [G, Lk, d]. Returns [G, Lq, d].
    Var<T> operator()(Tape<T>& tape, Var<T> q, Var<T> k, Var<T> v);
    void collect(ParamList<T>& out);
};

}  // namespace strep
