#include "strep/tape.hpp"

#include <sstream>

namespace strep {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>(this, it->second);
    // Parameters are referenced by value copy so later optimizer writes cannot alias the recording.
    nodes_.push_back(Node{p.value, {}, false, grad_enabled_ && p.requires_update, &p, {}});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
        for (const auto& in : inputs) {
            require(in.tape() == this, ErrorKind::State, "op input recorded on a different tape");
            needs = needs || nodes_.at(in.id()).needs_grad;
        }
    }
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs;
    if (needs) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad(const Var<T>& v) {
    Node& n = nodes_.at(v.id());
    if (!n.has_grad) {
        n.grad = Tensor<T>(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
void Tape<T>::accumulate(const Var<T>& v, const Tensor<T>& g) {
    Tensor<T>& dst = grad(v);
    require(dst.size() == g.size(), ErrorKind::Shape,
            "gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(dst.shape()));
    T* d = dst.ptr();
    const T* s = g.ptr();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
    require(loss.tape() == this, ErrorKind::State, "backward on a variable from another tape");
    require(grad_enabled_, ErrorKind::State, "backward on a tape recorded without gradients");
    const Tensor<T>& lv = value(loss.id());
    require(lv.size() == 1, ErrorKind::Shape, "backward requires a scalar loss, got " + shape_str(lv.shape()));
    require(std::isfinite(lv[0]), ErrorKind::Numeric, "non-finite loss before backward");

    grad(loss).fill(T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.needs_grad) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.param != nullptr) {
            Parameter<T>& p = *n.param;
            require(n.grad.all_finite(), ErrorKind::Numeric, "non-finite gradient for parameter " + p.name);
            T* d = p.grad.ptr();
            const T* s = n.grad.ptr();
            for (std::size_t k = 0; k < p.grad.size(); ++k) d[k] += s[k];
            p.grad_populated = true;
        }
    }
    // Parameters that were recorded but got no gradient still count as populated (their grad is zero).
    for (auto& n : nodes_)
        if (n.param != nullptr && n.needs_grad) n.param->grad_populated = true;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace strep
