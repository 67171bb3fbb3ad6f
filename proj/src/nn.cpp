#include "strep/nn.hpp"

#include <cmath>

namespace strep {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
    Tensor<T> out(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : out.data()) v = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor<T> out(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : out.data()) v = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Parameter<T>(name + ".weight", uniform_tensor<T>({in, out}, bound, rng));
    bias = Parameter<T>(name + ".bias", uniform_tensor<T>({out}, bound, rng));
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t width)
    : gamma(name + ".gamma", Tensor<T>({width}, T(1))), beta(name + ".beta", Tensor<T>({width})) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, std::size_t width, std::size_t h,
                                          std::mt19937_64& rng)
    : q_proj(name + ".q", width, width, rng),
      k_proj(name + ".k", width, width, rng),
      v_proj(name + ".v", width, width, rng),
      out_proj(name + ".out", width, width, rng),
      heads(h) {
    require(h >= 1 && width % h == 0, ErrorKind::Config,
            name + ": width " + std::to_string(width) + " not divisible by " + std::to_string(h) + " heads");
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Tape<T>& tape, Var<T> q, Var<T> k, Var<T> v) {
    Var<T> qp = q_proj(tape, q);
    // A shared query set is projected once, then repeated per group.
    if (q.value().rank() == 2) qp = ops::broadcast_leading(qp, k.value().dim(0));
    Var<T> att = ops::attention(qp, k_proj(tape, k), v_proj(tape, v), heads);
    return out_proj(tape, att);
}

template <typename T>
void MultiHeadAttention<T>::collect(ParamList<T>& out) {
    q_proj.collect(out);
    k_proj.collect(out);
    v_proj.collect(out);
    out_proj.collect(out);
}

template Tensor<float> uniform_tensor<float>(Shape, double, std::mt19937_64&);
template Tensor<double> uniform_tensor<double>(Shape, double, std::mt19937_64&);
template Tensor<float> normal_tensor<float>(Shape, double, std::mt19937_64&);
template Tensor<double> normal_tensor<double>(Shape, double, std::mt19937_64&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;

}  // namespace strep
