#include "strep/ops.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>
#include <cmath>
#include <memory>
#include <numeric>

namespace strep::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedM = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedM = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
Tape<T>& tape_of(const Var<T>& v) {
    require(v.valid(), ErrorKind::State, "operation on an empty variable");
    return *v.tape();
}

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    require(a == b, ErrorKind::Shape, std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    auto& t = tape_of(a);
    check_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> y = a.value();
    const T* bp = b.value().ptr();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bp[i];
    return t.record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.needs_grad(a)) tp.accumulate(a, g);
        if (tp.needs_grad(b)) tp.accumulate(b, g);
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    for (auto& v : y.data()) v *= s;
    return t.record(std::move(y), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& ga = tp.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    require(wv.rank() == 2 && xv.rank() >= 1 && xv.shape().back() == wv.dim(0), ErrorKind::Shape,
            "linear: input " + shape_str(xv.shape()) + " does not fit weight " + shape_str(wv.shape()));
    const auto in = static_cast<Eigen::Index>(wv.dim(0));
    const auto out = static_cast<Eigen::Index>(wv.dim(1));
    const auto rows = static_cast<Eigen::Index>(xv.size() / wv.dim(0));
    if (b.valid())
        require(b.value().size() == wv.dim(1), ErrorKind::Shape,
                "linear: bias " + shape_str(b.value().shape()) + " for output width " + std::to_string(out));

    Shape os = xv.shape();
    os.back() = wv.dim(1);
    Tensor<T> y(os);
    MapM<T> ym(y.ptr(), rows, out);
    ym.noalias() = CMapM<T>(xv.ptr(), rows, in) * CMapM<T>(wv.ptr(), in, out);
    if (b.valid()) ym.rowwise() += Eigen::Map<const RowVec<T>>(b.value().ptr(), out);

    auto fn = [x, w, b, rows, in, out](Tape<T>& tp, const Tensor<T>& g) {
        CMapM<T> gm(g.ptr(), rows, out);
        if (tp.needs_grad(x))
            MapM<T>(tp.grad(x).ptr(), rows, in).noalias() +=
                gm * CMapM<T>(tp.value(w.id()).ptr(), in, out).transpose();
        if (tp.needs_grad(w))
            MapM<T>(tp.grad(w).ptr(), in, out).noalias() +=
                CMapM<T>(tp.value(x.id()).ptr(), rows, in).transpose() * gm;
        if (b.valid() && tp.needs_grad(b)) {
            Eigen::Map<RowVec<T>> gb(tp.grad(b).ptr(), out);
            for (Eigen::Index r = 0; r < rows; ++r) gb += gm.row(r);
        }
    };
    if (b.valid()) return t.record(std::move(y), {x, w, b}, fn);
    return t.record(std::move(y), {x, w}, fn);
}

template <typename T>
Var<T> time_linear(Var<T> x, Var<T> w, Var<T> b) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    require(xv.rank() == 3 && wv.rank() == 2 && xv.dim(1) == wv.dim(0), ErrorKind::Shape,
            "time_linear: input " + shape_str(xv.shape()) + " does not fit weight " + shape_str(wv.shape()));
    require(!b.valid() || b.value().size() == wv.dim(1), ErrorKind::Shape, "time_linear: bias length");
    const std::size_t R = xv.dim(0), L = xv.dim(1), C = xv.dim(2), O = wv.dim(1);
    const auto l = static_cast<Eigen::Index>(L), o = static_cast<Eigen::Index>(O), c = static_cast<Eigen::Index>(C);
    Tensor<T> y({R, O, C});
    const CMapM<T> W(wv.ptr(), l, o);
    for (std::size_t r = 0; r < R; ++r) {
        MapM<T> yr(y.ptr() + r * O * C, o, c);
        yr.noalias() = W.transpose() * CMapM<T>(xv.ptr() + r * L * C, l, c);
        if (b.valid()) yr.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.value().ptr(), o);
    }
    auto fn = [x, w, b, R, l, o, c](Tape<T>& tp, const Tensor<T>& g) {
        const CMapM<T> W(tp.value(w.id()).ptr(), l, o);
        const bool gxn = tp.needs_grad(x), gwn = tp.needs_grad(w), gbn = b.valid() && tp.needs_grad(b);
        T* gx = gxn ? tp.grad(x).ptr() : nullptr;
        T* gw = gwn ? tp.grad(w).ptr() : nullptr;
        T* gb = gbn ? tp.grad(b).ptr() : nullptr;
        const T* xp = tp.value(x.id()).ptr();
        for (std::size_t r = 0; r < R; ++r) {
            const CMapM<T> gr(g.ptr() + r * o * c, o, c);
            if (gxn) MapM<T>(gx + r * l * c, l, c).noalias() += W * gr;
            if (gwn) MapM<T>(gw, l, o).noalias() += CMapM<T>(xp + r * l * c, l, c) * gr.transpose();
            if (gbn) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb, o) += gr.rowwise().sum();
        }
    };
    if (b.valid()) return t.record(std::move(y), {x, w, b}, fn);
    return t.record(std::move(y), {x, w}, fn);
}

template <typename T>
Var<T> relu(Var<T> x) {
    auto& t = tape_of(x);
    Tensor<T> y = x.value();
    for (auto& v : y.data()) v = v > T(0) ? v : T(0);
    return t.record(std::move(y), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x.id());
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > T(0)) gx[i] += g[i];
    });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    auto& t = tape_of(x);
    Tensor<T> y = x.value();
    const bool keep = t.grad_enabled() && t.needs_grad(x);
    auto slope = std::make_shared<Buffer<T>>(keep ? y.size() : 0);
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::Map<const Arr> xa(x.value().ptr(), n);
    const Arr cdf = T(0.5) * (T(1) + (xa * T(M_SQRT1_2)).erf());
    if (keep) Eigen::Map<Arr>(slope->data(), n) = cdf + xa * (T(-0.5) * xa.square()).exp() * T(0.5 * M_2_SQRTPI * M_SQRT1_2);
    Eigen::Map<Arr>(y.ptr(), n) = xa * cdf;
    return t.record(std::move(y), {x}, [x, slope](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad(x).ptr();
        const T* s = slope->data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i];
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    auto& t = tape_of(x);
    Tensor<T> y = x.value().reshaped(std::move(shape));
    return t.record(std::move(y), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    require(perm.size() == r, ErrorKind::Shape, "permute: rank mismatch");
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        require(p < r && !seen[p], ErrorKind::Shape, "permute: invalid axis order");
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
    Shape os(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        os[i] = x.dim(perm[i]);
        step[i] = in_stride[perm[i]];
    }
    Tensor<T> y(os);
    if (r == 0 || y.size() == 0) return r == 0 ? x : y;
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    const T* xp = x.ptr();
    T* yp = y.ptr();
    const std::size_t inner = r ? os[r - 1] : 1;
    const std::size_t inner_step = r ? step[r - 1] : 0;
    for (std::size_t o = 0; o < y.size(); o += inner) {
        for (std::size_t j = 0; j < inner; ++j) yp[o + j] = xp[src + j * inner_step];
        // odometer over all but the innermost axis
        for (std::size_t a = r - 1; a-- > 0;) {
            src += step[a];
            if (++idx[a] < os[a]) break;
            src -= step[a] * os[a];
            idx[a] = 0;
        }
    }
    return y;
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<std::size_t> perm) {
    auto& t = tape_of(x);
    Tensor<T> y = permute_tensor(x.value(), perm);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    return t.record(std::move(y), {x}, [x, inverse](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(x, permute_tensor(g, inverse));
    });
}

template <typename T>
Var<T> conv1d_same(Var<T> x, Var<T> kernel, Var<T> bias) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = kernel.value();
    require(kv.rank() == 3, ErrorKind::Shape, "conv1d_same: kernel must be [k, d_in, d_out]");
    const std::size_t k = kv.dim(0);
    require(k % 2 == 1, ErrorKind::Config, "conv1d_same: kernel size must be odd, got " + std::to_string(k));
    require(xv.rank() == 3 && xv.dim(2) == kv.dim(1), ErrorKind::Shape,
            "conv1d_same: input " + shape_str(xv.shape()) + " vs kernel " + shape_str(kv.shape()));
    require(bias.value().size() == kv.dim(2), ErrorKind::Shape, "conv1d_same: bias width");
    const std::size_t R = xv.dim(0), L = xv.dim(1), din = kv.dim(1), dout = kv.dim(2);
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);

    // im2col: row (r, t) holds the k taps x[r, t + j - half, :] side by side.
    auto col = std::make_shared<Tensor<T>>(Shape{R * L, k * din});
    T* cp = col->ptr();
    const T* xp = xv.ptr();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t s = 0; s < L; ++s)
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s) + static_cast<std::ptrdiff_t>(j) - half;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                std::copy_n(xp + (r * L + static_cast<std::size_t>(src)) * din, din,
                            cp + (r * L + s) * k * din + j * din);
            }

    const auto rows = static_cast<Eigen::Index>(R * L);
    const auto kd = static_cast<Eigen::Index>(k * din);
    const auto dn = static_cast<Eigen::Index>(dout);
    Tensor<T> y(Shape{R, L, dout});
    MapM<T> ym(y.ptr(), rows, dn);
    ym.noalias() = CMapM<T>(cp, rows, kd) * CMapM<T>(kv.ptr(), kd, dn);
    ym.rowwise() += Eigen::Map<const RowVec<T>>(bias.value().ptr(), dn);

    return t.record(std::move(y), {x, kernel, bias},
                    [x, kernel, bias, col, R, L, din, k, half, rows, kd, dn](Tape<T>& tp, const Tensor<T>& g) {
                        CMapM<T> gm(g.ptr(), rows, dn);
                        CMapM<T> cm(col->ptr(), rows, kd);
                        if (tp.needs_grad(kernel))
                            MapM<T>(tp.grad(kernel).ptr(), kd, dn).noalias() += cm.transpose() * gm;
                        if (tp.needs_grad(bias))
                            Eigen::Map<RowVec<T>>(tp.grad(bias).ptr(), dn) += gm.colwise().sum();
                        if (tp.needs_grad(x)) {
                            Mat<T> dcol = gm * CMapM<T>(tp.value(kernel.id()).ptr(), kd, dn).transpose();
                            T* gx = tp.grad(x).ptr();
                            for (std::size_t r = 0; r < R; ++r)
                                for (std::size_t s = 0; s < L; ++s)
                                    for (std::size_t j = 0; j < k; ++j) {
                                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s) +
                                                                   static_cast<std::ptrdiff_t>(j) - half;
                                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                                        const T* from = dcol.data() + (r * L + s) * k * din + j * din;
                                        T* to = gx + (r * L + static_cast<std::size_t>(src)) * din;
                                        for (std::size_t c = 0; c < din; ++c) to[c] += from[c];
                                    }
                        }
                    });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> idx) {
    auto& t = tape_of(table);
    const Tensor<T>& tv = table.value();
    require(tv.rank() == 2, ErrorKind::Shape, "gather_rows: table must be rank 2");
    const std::size_t V = tv.dim(0), d = tv.dim(1);
    Tensor<T> y(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < V, ErrorKind::Shape,
                "gather_rows: index " + std::to_string(idx[i]) + " out of range [0," + std::to_string(V) + ")");
        std::copy_n(tv.ptr() + static_cast<std::size_t>(idx[i]) * d, d, y.ptr() + i * d);
    }
    std::vector<std::int32_t> saved(idx.begin(), idx.end());
    return t.record(std::move(y), {table}, [table, saved, d](Tape<T>& tp, const Tensor<T>& g) {
        T* gt = tp.grad(table).ptr();
        for (std::size_t i = 0; i < saved.size(); ++i) {
            T* to = gt + static_cast<std::size_t>(saved[i]) * d;
            const T* from = g.ptr() + i * d;
            for (std::size_t c = 0; c < d; ++c) to[c] += from[c];
        }
    });
}

template <typename T>
Var<T> fill_masked(Var<T> x, std::span<const std::uint8_t> mask, Var<T> token) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    require(xv.rank() == 2 && mask.size() == xv.dim(0) && token.value().size() == xv.dim(1), ErrorKind::Shape,
            "fill_masked: x " + shape_str(xv.shape()) + ", mask length " + std::to_string(mask.size()) +
                ", token " + shape_str(token.value().shape()));
    const std::size_t d = xv.dim(1);
    Tensor<T> y = xv;
    for (std::size_t r = 0; r < mask.size(); ++r)
        if (mask[r]) std::copy_n(token.value().ptr(), d, y.ptr() + r * d);
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return t.record(std::move(y), {x, token}, [x, token, saved, d](Tape<T>& tp, const Tensor<T>& g) {
        const bool gx_needed = tp.needs_grad(x), gt_needed = tp.needs_grad(token);
        T* gx = gx_needed ? tp.grad(x).ptr() : nullptr;
        T* gt = gt_needed ? tp.grad(token).ptr() : nullptr;
        for (std::size_t r = 0; r < saved.size(); ++r) {
            const T* from = g.ptr() + r * d;
            if (saved[r]) {
                if (gt)
                    for (std::size_t c = 0; c < d; ++c) gt[c] += from[c];
            } else if (gx) {
                for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += from[c];
            }
        }
    });
}

template <typename T>
Var<T> broadcast_leading(Var<T> x, std::size_t count) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    Shape os{count};
    os.insert(os.end(), xv.shape().begin(), xv.shape().end());
    Tensor<T> y(os);
    for (std::size_t c = 0; c < count; ++c) std::copy_n(xv.ptr(), xv.size(), y.ptr() + c * xv.size());
    const std::size_t n = xv.size();
    return t.record(std::move(y), {x}, [x, count, n](Tape<T>& tp, const Tensor<T>& g) {
        T* gx = tp.grad(x).ptr();
        for (std::size_t c = 0; c < count; ++c)
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[c * n + i];
    });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
    auto& t = tape_of(q);
    const Tensor<T>& qv = q.value();
    const Tensor<T>& kv = k.value();
    const Tensor<T>& vv = v.value();
    require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3 && kv.shape() == vv.shape() &&
                qv.dim(0) == kv.dim(0) && qv.dim(2) == kv.dim(2),
            ErrorKind::Shape,
            "attention: q " + shape_str(qv.shape()) + ", k " + shape_str(kv.shape()) + ", v " + shape_str(vv.shape()));
    const std::size_t D = qv.dim(2);
    require(heads >= 1 && D % heads == 0, ErrorKind::Config,
            "attention: width " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t G = qv.dim(0), Lq = qv.dim(1), Lk = kv.dim(1), dh = D / heads;
    const T scl = T(1) / std::sqrt(static_cast<T>(dh));
    const auto lq = static_cast<Eigen::Index>(Lq), lk = static_cast<Eigen::Index>(Lk),
               edh = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(D));

    auto probs = std::make_shared<Tensor<T>>(Shape{G, heads, Lq, Lk});
    Tensor<T> y(Shape{G, Lq, D});
    for (std::size_t g = 0; g < G; ++g)
        for (std::size_t h = 0; h < heads; ++h) {
            CStridedM<T> qh(qv.ptr() + g * Lq * D + h * dh, lq, edh, stride);
            CStridedM<T> kh(kv.ptr() + g * Lk * D + h * dh, lk, edh, stride);
            CStridedM<T> vh(vv.ptr() + g * Lk * D + h * dh, lk, edh, stride);
            MapM<T> p(probs->ptr() + (g * heads + h) * Lq * Lk, lq, lk);
            p.noalias() = (qh * kh.transpose()) * scl;
            for (Eigen::Index i = 0; i < lq; ++i) {
                auto row = p.row(i);
                row = (row.array() - row.maxCoeff()).exp();
                row /= row.sum();
            }
            StridedM<T>(y.ptr() + g * Lq * D + h * dh, lq, edh, stride).noalias() = p * vh;
        }

    return t.record(std::move(y), {q, k, v}, [q, k, v, probs, G, heads, Lq, Lk, D, dh, scl](Tape<T>& tp,
                                                                                       const Tensor<T>& gout) {
        const bool nq = tp.needs_grad(q), nk = tp.needs_grad(k), nv = tp.needs_grad(v);
        const T* qp = tp.value(q.id()).ptr();
        const T* kp = tp.value(k.id()).ptr();
        const T* vp = tp.value(v.id()).ptr();
        T* gq = nq ? tp.grad(q).ptr() : nullptr;
        T* gk = nk ? tp.grad(k).ptr() : nullptr;
        T* gv = nv ? tp.grad(v).ptr() : nullptr;
        const auto lq = static_cast<Eigen::Index>(Lq), lk = static_cast<Eigen::Index>(Lk),
                   edh = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(D));
        Mat<T> dp, ds;
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t qo = g * Lq * D + h * dh, ko = g * Lk * D + h * dh;
                CMapM<T> p(probs->ptr() + (g * heads + h) * Lq * Lk, lq, lk);
                CStridedM<T> go(gout.ptr() + qo, lq, edh, stride);
                if (gv) StridedM<T>(gv + ko, lk, edh, stride).noalias() += p.transpose() * go;
                if (!gq && !gk) continue;
                dp.noalias() = go * CStridedM<T>(vp + ko, lk, edh, stride).transpose();
                ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
                if (gq)
                    StridedM<T>(gq + qo, lq, edh, stride).noalias() +=
                        (ds * CStridedM<T>(kp + ko, lk, edh, stride)) * scl;
                if (gk)
                    StridedM<T>(gk + ko, lk, edh, stride).noalias() +=
                        (ds.transpose() * CStridedM<T>(qp + qo, lq, edh, stride)) * scl;
            }
    });
}

template <typename T>
Var<T> avg_pool_time(Var<T> x, std::size_t k) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    require(k >= 1, ErrorKind::Config, "avg_pool_time: kernel size must be >= 1");
    require(xv.rank() == 3, ErrorKind::Shape, "avg_pool_time: input must be [R, T, C]");
    const std::size_t R = xv.dim(0), L = xv.dim(1), C = xv.dim(2), out_len = L / k;
    require(out_len >= 1, ErrorKind::Config,
            "avg_pool_time: kernel " + std::to_string(k) + " longer than sequence " + std::to_string(L));
    Tensor<T> y(Shape{R, out_len, C});
    const T inv = T(1) / static_cast<T>(k);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t i = 0; i < out_len; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                T acc = T(0);
                for (std::size_t j = 0; j < k; ++j) acc += xv[(r * L + i * k + j) * C + c];
                y[(r * out_len + i) * C + c] = acc * inv;
            }
    return t.record(std::move(y), {x}, [x, R, L, C, k, out_len, inv](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t i = 0; i < out_len; ++i)
                for (std::size_t c = 0; c < C; ++c) {
                    const T gi = g[(r * out_len + i) * C + c] * inv;
                    for (std::size_t j = 0; j < k; ++j) gx[(r * L + i * k + j) * C + c] += gi;
                }
    });
}

template <typename T>
Var<T> concat_time(Var<T> a, Var<T> b) {
    auto& t = tape_of(a);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2), ErrorKind::Shape,
            "concat_time: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t R = av.dim(0), La = av.dim(1), Lb = bv.dim(1), C = av.dim(2);
    Tensor<T> y(Shape{R, La + Lb, C});
    for (std::size_t r = 0; r < R; ++r) {
        std::copy_n(av.ptr() + r * La * C, La * C, y.ptr() + r * (La + Lb) * C);
        std::copy_n(bv.ptr() + r * Lb * C, Lb * C, y.ptr() + (r * (La + Lb) + La) * C);
    }
    return t.record(std::move(y), {a, b}, [a, b, R, La, Lb, C](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.needs_grad(a)) {
            T* ga = tp.grad(a).ptr();
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t i = 0; i < La * C; ++i) ga[r * La * C + i] += g[r * (La + Lb) * C + i];
        }
        if (tp.needs_grad(b)) {
            T* gb = tp.grad(b).ptr();
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t i = 0; i < Lb * C; ++i) gb[r * Lb * C + i] += g[(r * (La + Lb) + La) * C + i];
        }
    });
}

template <typename T>
Var<T> huber_loss(Var<T> a, Var<T> b, T delta, std::span<const std::uint8_t> mask) {
    auto& t = tape_of(a);
    check_same_shape(a.value().shape(), b.value().shape(), "huber_loss");
    require(delta > T(0), ErrorKind::Config, "huber_loss: delta must be positive");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require(mask.empty() || mask.size() == av.size(), ErrorKind::Shape, "huber_loss: mask length");
    std::size_t count = 0;
    T acc = T(0);
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const T e = av[i] - bv[i];
        const T ae = std::abs(e);
        acc += ae <= delta ? T(0.5) * e * e : delta * (ae - T(0.5) * delta);
        ++count;
    }
    const T inv = count ? T(1) / static_cast<T>(count) : T(0);
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return t.record(Tensor<T>::scalar(acc * inv), {a, b},
                    [a, b, delta, inv, saved](Tape<T>& tp, const Tensor<T>& g) {
                        const Tensor<T>& av = tp.value(a.id());
                        const Tensor<T>& bv = tp.value(b.id());
                        T* ga = tp.needs_grad(a) ? tp.grad(a).ptr() : nullptr;
                        T* gb = tp.needs_grad(b) ? tp.grad(b).ptr() : nullptr;
                        const T s = g[0] * inv;
                        for (std::size_t i = 0; i < av.size(); ++i) {
                            if (!saved.empty() && !saved[i]) continue;
                            const T e = av[i] - bv[i];
                            const T psi = std::abs(e) <= delta ? e : (e > T(0) ? delta : -delta);
                            if (ga) ga[i] += s * psi;
                            if (gb) gb[i] -= s * psi;
                        }
                    });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, std::mt19937_64& rng) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::Config, "dropout: rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    auto& t = tape_of(x);
    auto keep = std::make_shared<Tensor<T>>(x.value().shape());
    std::bernoulli_distribution survive(1.0 - rate);
    const T gain = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : keep->data()) m = survive(rng) ? gain : T(0);
    Tensor<T> y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= (*keep)[i];
    return t.record(std::move(y), {x}, [x, keep](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*keep)[i];
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    auto& t = tape_of(x);
    const Tensor<T>& xv = x.value();
    require(xv.rank() >= 1, ErrorKind::Shape, "layer_norm: rank-0 input");
    const std::size_t D = xv.shape().back(), R = xv.size() / D;
    require(gamma.value().size() == D && beta.value().size() == D, ErrorKind::Shape, "layer_norm: affine width");
    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_std = std::make_shared<Buffer<T>>(R);
    Tensor<T> y(xv.shape());
    const T* gp = gamma.value().ptr();
    const T* bp = beta.value().ptr();
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = xv.ptr() + r * D;
        T mu = T(0), var = T(0);
        for (std::size_t c = 0; c < D; ++c) mu += row[c];
        mu /= static_cast<T>(D);
        for (std::size_t c = 0; c < D; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<T>(D);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < D; ++c) {
            const T xh = (row[c] - mu) * is;
            (*xhat)[r * D + c] = xh;
            y[r * D + c] = xh * gp[c] + bp[c];
        }
    }
    return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, D, R](Tape<T>& tp,
                                                                                       const Tensor<T>& g) {
        const T* gp = tp.value(gamma.id()).ptr();
        T* ggam = tp.needs_grad(gamma) ? tp.grad(gamma).ptr() : nullptr;
        T* gbet = tp.needs_grad(beta) ? tp.grad(beta).ptr() : nullptr;
        T* gx = tp.needs_grad(x) ? tp.grad(x).ptr() : nullptr;
        std::vector<T> dxh(D);
        for (std::size_t r = 0; r < R; ++r) {
            const T* gr = g.ptr() + r * D;
            const T* xh = xhat->ptr() + r * D;
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t c = 0; c < D; ++c) {
                if (ggam) ggam[c] += gr[c] * xh[c];
                if (gbet) gbet[c] += gr[c];
                dxh[c] = gr[c] * gp[c];
                mean_d += dxh[c];
                mean_dx += dxh[c] * xh[c];
            }
            if (!gx) continue;
            mean_d /= static_cast<T>(D);
            mean_dx /= static_cast<T>(D);
            for (std::size_t c = 0; c < D; ++c)
                gx[r * D + c] += (*inv_std)[r] * (dxh[c] - mean_d - xh[c] * mean_dx);
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    auto& t = tape_of(x);
    T acc = T(0);
    for (auto v : x.value().data()) acc += v;
    return t.record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& gx = tp.grad(x);
        for (auto& v : gx.data()) v += g[0];
    });
}

#define STREP_INSTANTIATE_OPS(T)                                                                  \
    template Var<T> add(Var<T>, Var<T>);                                                          \
    template Var<T> scale(Var<T>, T);                                                             \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                               \
    template Var<T> time_linear(Var<T>, Var<T>, Var<T>);                                          \
    template Var<T> relu(Var<T>);                                                                 \
    template Var<T> gelu(Var<T>);                                                                 \
    template Var<T> reshape(Var<T>, Shape);                                                       \
    template Tensor<T> permute_tensor(const Tensor<T>&, const std::vector<std::size_t>&);         \
    template Var<T> permute(Var<T>, std::vector<std::size_t>);                                    \
    template Var<T> conv1d_same(Var<T>, Var<T>, Var<T>);                                          \
    template Var<T> gather_rows(Var<T>, std::span<const std::int32_t>);                           \
    template Var<T> fill_masked(Var<T>, std::span<const std::uint8_t>, Var<T>);                   \
    template Var<T> broadcast_leading(Var<T>, std::size_t);                                       \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t);                               \
    template Var<T> avg_pool_time(Var<T>, std::size_t);                                           \
    template Var<T> concat_time(Var<T>, Var<T>);                                                  \
    template Var<T> huber_loss(Var<T>, Var<T>, T, std::span<const std::uint8_t>);                 \
    template Var<T> dropout(Var<T>, double, bool, std::mt19937_64&);                              \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                        \
    template Var<T> sum(Var<T>);

STREP_INSTANTIATE_OPS(float)
STREP_INSTANTIATE_OPS(double)

}  // namespace strep::ops
