#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include "strep/tensor.hpp"

namespace strep {

/// Trainable tensor. `grad` always has the shape of `value`.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_update = true;
    // Set by backward, cleared by the optimizer. An optimizer step without it is a usage error.
    bool grad_populated = false;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() {
        grad.fill(T{0});
        grad_populated = false;
    }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
class Var {
   public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t id() const noexcept { return id_; }
    Tape<T>* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

   private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode recording for one forward pass. Build a fresh tape per step.
template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value);
    Var<T> param(Parameter<T>& p);

    /// Append an op result. `fn` is kept only when some input needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool needs_grad(const Var<T>& v) const { return nodes_.at(v.id()).needs_grad; }

    /// Gradient buffer for `v`, zero-allocated on first touch.
    Tensor<T>& grad(const Var<T>& v);
    void accumulate(const Var<T>& v, const Tensor<T>& g);

    /// Populates Parameter::grad for every parameter reachable from `loss` (rank-0 or single element).
    void backward(const Var<T>& loss);

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    /// Elements held by recorded op results (parameters and their copies excluded).
    std::size_t activation_elements() const noexcept {
        std::size_t n = 0;
        for (const auto& node : nodes_)
            if (!node.param) n += node.value.size();
        return n;
    }

   private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool has_grad = false;
        bool needs_grad = false;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
    };

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::unordered_map<Parameter<T>*, std::size_t> param_ids_;
};

}  // namespace strep
