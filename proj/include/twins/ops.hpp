#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "twins/tensor.hpp"

namespace twins::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void record(const char* op, Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    active_tape().record(op, out, std::move(fn));
}

struct AxisSplit {
    std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return a.shape();
    if (b.size() == 1 || is_suffix(b.shape(), a.shape())) return a.shape();
    if (a.size() == 1 || is_suffix(a.shape(), b.shape())) return b.shape();
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a.shape()) + " with " +
                     to_string(b.shape()));
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}
inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class Binary { add, sub, mul };

/// Binary op with scalar or trailing-suffix broadcasting of either operand.
inline Tensor binary(Binary kind, const Tensor& a, const Tensor& b) {
    static constexpr const char* names[] = {"add", "sub", "mul"};
    const char* name = names[static_cast<int>(kind)];
    Shape shape = detail::broadcast_shape(a, b, name);
    auto out = Tensor::zeros(shape);
    const std::size_t n = out.size(), na = a.size(), nb = b.size();
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av[i % na], y = bv[i % nb];
        ov[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    if (needs_record({&a, &b})) {
        detail::record(name, out, [kind, a, b, o = out.impl()] {
            const auto& g = o->grad;
            const std::size_t n = g.size(), na = a.size(), nb = b.size();
            if (a.requires_grad()) {
                auto& ga = a.impl()->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    ga[i % na] += kind == Binary::mul ? g[i] * b[i % nb] : g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.impl()->grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    gb[i % nb] += kind == Binary::add ? g[i] : kind == Binary::sub ? -g[i] : g[i] * a[i % na];
            }
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, a, b); }

enum class Unary { sigmoid, gelu, relu };

inline Tensor unary(Unary kind, const Tensor& x) {
    static constexpr const char* names[] = {"sigmoid", "gelu", "relu"};
    auto out = Tensor::zeros(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        switch (kind) {
            case Unary::sigmoid: ov[i] = detail::sigmoid(xv[i]); break;
            case Unary::gelu: ov[i] = detail::gelu(xv[i]); break;
            case Unary::relu: ov[i] = xv[i] > 0 ? xv[i] : 0.0; break;
        }
    }
    if (needs_record({&x})) {
        detail::record(names[static_cast<int>(kind)], out, [kind, x, o = out.impl()] {
            auto& gx = x.impl()->grad_buffer();
            const auto& g = o->grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double d = 0.0;
                switch (kind) {
                    case Unary::sigmoid: d = o->value[i] * (1.0 - o->value[i]); break;
                    case Unary::gelu: d = detail::gelu_grad(x[i]); break;
                    case Unary::relu: d = x[i] > 0 ? 1.0 : 0.0; break;
                }
                gx[i] += g[i] * d;
            }
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& x) { return unary(Unary::sigmoid, x); }
inline Tensor gelu(const Tensor& x) { return unary(Unary::gelu, x); }
inline Tensor relu(const Tensor& x) { return unary(Unary::relu, x); }

inline Tensor scale(const Tensor& x, double c) {
    auto out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
    if (needs_record({&x})) {
        detail::record("scale", out, [c, x, o = out.impl()] {
            auto& gx = x.impl()->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * o->grad[i];
        });
    }
    return out;
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto out = Tensor::scalar(s);
    if (needs_record({&x})) {
        detail::record("sum", out, [x, o = out.impl()] {
            auto& gx = x.impl()->grad_buffer();
            for (auto& g : gx) g += o->grad[0];
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// Batched product a[..., m, n] x b[..., n, p]; leading dims broadcast
/// numpy-style.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    const std::size_t m = a.shape()[a.ndim() - 2], n = a.shape().back();
    const std::size_t nb = b.shape()[b.ndim() - 2], p = b.shape().back();
    if (n != nb)
        throw ShapeError("matmul inner dimension mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));

    const Shape ab(a.shape().begin(), a.shape().end() - 2);
    const Shape bb(b.shape().begin(), b.shape().end() - 2);
    const std::size_t rank = std::max(ab.size(), bb.size());
    Shape batch(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - ab.size() ? 1 : ab[i - (rank - ab.size())];
        const std::size_t eb = i < rank - bb.size() ? 1 : bb[i - (rank - bb.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("matmul batch dims not broadcastable: " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
        batch[i] = std::max(ea, eb);
    }
    const std::size_t nbatch = numel(batch);
    std::vector<std::size_t> ia(nbatch), ib(nbatch);
    {
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t t = 0; t < nbatch; ++t) {
            std::size_t oa = 0, ob = 0;
            for (std::size_t i = 0; i < rank; ++i) {
                if (i >= rank - ab.size()) {
                    const std::size_t e = ab[i - (rank - ab.size())];
                    oa = oa * e + (e == 1 ? 0 : idx[i]);
                }
                if (i >= rank - bb.size()) {
                    const std::size_t e = bb[i - (rank - bb.size())];
                    ob = ob * e + (e == 1 ? 0 : idx[i]);
                }
            }
            ia[t] = oa;
            ib[t] = ob;
            for (std::size_t i = rank; i-- > 0;) {
                if (++idx[i] < batch[i]) break;
                idx[i] = 0;
            }
        }
    }

    Shape oshape = batch;
    oshape.push_back(m);
    oshape.push_back(p);
    auto out = Tensor::zeros(oshape);
    for (std::size_t t = 0; t < nbatch; ++t) {
        detail::ConstMap A(a.values().data() + ia[t] * m * n, m, n);
        detail::ConstMap B(b.values().data() + ib[t] * n * p, n, p);
        detail::MutMap Y(out.values().data() + t * m * p, m, p);
        Y.noalias() = A * B;
    }
    mac_counter().add(static_cast<std::uint64_t>(nbatch) * m * n * p);

    if (needs_record({&a, &b})) {
        detail::record("matmul", out, [a, b, o = out.impl(), ia, ib, m, n, p] {
            const std::size_t nbatch = ia.size();
            if (a.requires_grad()) {
                auto& ga = a.impl()->grad_buffer();
                for (std::size_t t = 0; t < nbatch; ++t) {
                    detail::ConstMap G(o->grad.data() + t * m * p, m, p);
                    detail::ConstMap B(b.values().data() + ib[t] * n * p, n, p);
                    detail::MutMap GA(ga.data() + ia[t] * m * n, m, n);
                    GA.noalias() += G * B.transpose();
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.impl()->grad_buffer();
                for (std::size_t t = 0; t < nbatch; ++t) {
                    detail::ConstMap G(o->grad.data() + t * m * p, m, p);
                    detail::ConstMap A(a.values().data() + ia[t] * m * n, m, n);
                    detail::MutMap GB(gb.data() + ib[t] * n * p, n, p);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape) +
                         " changes the element count");
    Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
    if (needs_record({&x})) {
        detail::record("reshape", out, [x, o = out.impl()] {
            auto& gx = x.impl()->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i];
        });
    }
    return out;
}

namespace detail {
/// For each output element of permute(shape, perm), the source offset.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& perm) {
    const std::size_t r = in.size();
    std::vector<std::size_t> stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) stride[i] = stride[i + 1] * in[i + 1];
    Shape out(r);
    std::vector<std::size_t> ostride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = in[perm[i]];
        ostride[i] = stride[perm[i]];
    }
    std::vector<std::size_t> map(numel(in));
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t t = 0; t < map.size(); ++t) {
        map[t] = src;
        for (std::size_t i = r; i-- > 0;) {
            src += ostride[i];
            if (++idx[i] < out[i]) break;
            src -= ostride[i] * out[i];
            idx[i] = 0;
        }
    }
    return map;
}

/// Output gathers input through `src`: out[i] = x[src[i]].
inline Tensor gather(const char* op, const Tensor& x, Shape shape, std::vector<std::size_t> src) {
    auto out = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
    if (needs_record({&x})) {
        record(op, out, [x, o = out.impl(), src = std::move(src)] {
            auto& gx = x.impl()->grad_buffer();
            for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o->grad[i];
        });
    }
    return out;
}
}  // namespace detail

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.ndim()) throw ShapeError("permute rank mismatch for " + to_string(x.shape()));
    std::vector<bool> seen(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || seen[p]) throw ShapeError("permute: invalid axis order");
        seen[p] = true;
    }
    Shape shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shape[i] = x.shape()[perm[i]];
    return detail::gather("permute", x, shape, detail::permute_index(x.shape(), perm));
}

inline Tensor transpose(const Tensor& x, std::size_t a, std::size_t b) {
    if (a >= x.ndim() || b >= x.ndim())
        throw ShapeError("transpose axis out of range for " + to_string(x.shape()));
    std::vector<std::size_t> perm(x.ndim());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[a], perm[b]);
    return permute(x, perm);
}

/// Cyclic shift along `axis`: out[(i + shift) mod n] = x[i].
inline Tensor roll(const Tensor& x, long shift, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis);
    const long n = static_cast<long>(s.n);
    const std::size_t r = static_cast<std::size_t>(((shift % n) + n) % n);
    std::vector<std::size_t> src(x.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.n; ++i) {
            const std::size_t from = (i + s.n - r) % s.n;
            for (std::size_t k = 0; k < s.inner; ++k)
                src[(o * s.n + i) * s.inner + k] = (o * s.n + from) * s.inner + k;
        }
    return detail::gather("roll", x, x.shape(), std::move(src));
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const auto s = detail::split_axis(x.shape(), axis);
    if (len == 0 || start + len > s.n)
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for axis " + std::to_string(axis) + " of " + to_string(x.shape()));
    Shape shape = x.shape();
    shape[axis] = len;
    std::vector<std::size_t> src;
    src.reserve(numel(shape));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t k = 0; k < s.inner; ++k) src.push_back((o * s.n + start + i) * s.inner + k);
    return detail::gather("slice", x, shape, std::move(src));
}

/// Each slice along `axis` repeated `repeats` times in place: [a,b] -> [a,a,b,b].
inline Tensor repeat_interleave(const Tensor& x, std::size_t axis, std::size_t repeats) {
    const auto s = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] *= repeats;
    std::vector<std::size_t> src;
    src.reserve(numel(shape));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.n * repeats; ++i)
            for (std::size_t k = 0; k < s.inner; ++k) src.push_back((o * s.n + i / repeats) * s.inner + k);
    return detail::gather("repeat_interleave", x, shape, std::move(src));
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat of zero tensors");
    Shape shape = xs[0].shape();
    if (axis >= shape.size()) throw ShapeError("concat axis out of range");
    std::size_t total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != shape.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < shape.size(); ++i)
            if (i != axis && t.shape()[i] != shape[i])
                throw ShapeError("concat extent mismatch: " + to_string(t.shape()) + " vs " + to_string(shape));
        total += t.shape()[axis];
    }
    shape[axis] = total;
    auto out = Tensor::zeros(shape);
    const auto so = detail::split_axis(shape, axis);
    std::size_t offset = 0;
    for (const auto& t : xs) {
        const std::size_t n = t.shape()[axis];
        for (std::size_t o = 0; o < so.outer; ++o)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < so.inner; ++k)
                    out[(o * total + offset + i) * so.inner + k] = t[(o * n + i) * so.inner + k];
        offset += n;
    }
    bool any = false;
    for (const auto& t : xs) any = any || (grad_enabled() && t.requires_grad());
    if (any) {
        detail::record("concat", out, [xs, o = out.impl(), so, total, axis] {
            std::size_t offset = 0;
            for (const auto& t : xs) {
                const std::size_t len = t.shape()[axis];
                if (t.requires_grad()) {
                    auto& g = t.impl()->grad_buffer();
                    for (std::size_t oo = 0; oo < so.outer; ++oo)
                        for (std::size_t i = 0; i < len; ++i)
                            for (std::size_t k = 0; k < so.inner; ++k)
                                g[(oo * len + i) * so.inner + k] += o->grad[(oo * total + offset + i) * so.inner + k];
                }
                offset += len;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions (same zero padding, stride 1, odd kernels)
// ---------------------------------------------------------------------------

/// x[N, Cin, L] (or [Cin, L]) with kernels[Cout, Cin, K] -> [N, Cout, L].
inline Tensor conv1d(const Tensor& x, const Tensor& w) {
    if (w.ndim() != 3) throw ShapeError("conv1d kernels must be [Cout, Cin, K], got " + to_string(w.shape()));
    const bool batched = x.ndim() == 3;
    if (x.ndim() != 2 && !batched) throw ShapeError("conv1d input must be [Cin, L] or [N, Cin, L]");
    const std::size_t N = batched ? x.dim(0) : 1;
    const std::size_t Cin = x.dim(x.ndim() - 2), L = x.dim(x.ndim() - 1);
    const std::size_t Cout = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Cin)
        throw ShapeError("conv1d channel mismatch: input " + to_string(x.shape()) + ", kernels " +
                         to_string(w.shape()));
    if (K % 2 == 0) throw ShapeError("conv1d kernel size must be odd, got " + std::to_string(K));
    const long half = static_cast<long>(K / 2);
    Shape oshape = batched ? Shape{N, Cout, L} : Shape{Cout, L};
    auto out = Tensor::zeros(oshape);
    auto xv = x.values();
    auto wv = w.values();
    auto ov = out.values();
    for (std::size_t b = 0; b < N; ++b)
        for (std::size_t co = 0; co < Cout; ++co) {
            double* y = ov.data() + (b * Cout + co) * L;
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const double* xr = xv.data() + (b * Cin + ci) * L;
                const double* kr = wv.data() + (co * Cin + ci) * K;
                for (std::size_t k = 0; k < K; ++k) {
                    const long off = static_cast<long>(k) - half;
                    const long t0 = std::max(0L, -off), t1 = std::min<long>(L, static_cast<long>(L) - off);
                    for (long t = t0; t < t1; ++t) y[t] += kr[k] * xr[t + off];
                }
            }
        }
    mac_counter().add(static_cast<std::uint64_t>(N) * Cout * Cin * K * L);
    if (needs_record({&x, &w})) {
        detail::record("conv1d", out, [x, w, o = out.impl(), N, Cin, Cout, K, L, half] {
            const auto& g = o->grad;
            std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buffer() : nullptr;
            std::vector<double>* gw = w.requires_grad() ? &w.impl()->grad_buffer() : nullptr;
            for (std::size_t b = 0; b < N; ++b)
                for (std::size_t co = 0; co < Cout; ++co) {
                    const double* gy = g.data() + (b * Cout + co) * L;
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        const std::size_t xo = (b * Cin + ci) * L, ko = (co * Cin + ci) * K;
                        for (std::size_t k = 0; k < K; ++k) {
                            const long off = static_cast<long>(k) - half;
                            const long t0 = std::max(0L, -off), t1 = std::min<long>(L, static_cast<long>(L) - off);
                            double acc = 0.0;
                            for (long t = t0; t < t1; ++t) {
                                if (gx) (*gx)[xo + t + off] += gy[t] * w[ko + k];
                                acc += gy[t] * x[xo + t + off];
                            }
                            if (gw) (*gw)[ko + k] += acc;
                        }
                    }
                }
        });
    }
    return out;
}

/// x[..., Ch, P] with one kernel per channel, kernels[Ch, K], optional bias[Ch].
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
    if (x.ndim() < 2) throw ShapeError("depthwise_conv1d input must be [..., Ch, P]");
    if (w.ndim() != 2) throw ShapeError("depthwise_conv1d kernels must be [Ch, K]");
    const std::size_t Ch = x.dim(x.ndim() - 2), P = x.dim(x.ndim() - 1), K = w.dim(1);
    if (w.dim(0) != Ch)
        throw ShapeError("depthwise_conv1d channel mismatch: input has " + std::to_string(Ch) +
                         " channels, kernels " + std::to_string(w.dim(0)));
    if (K % 2 == 0) throw ShapeError("depthwise_conv1d kernel size must be odd, got " + std::to_string(K));
    if (bias.defined() && bias.size() != Ch) throw ShapeError("depthwise_conv1d bias must have Ch entries");
    const std::size_t N = x.size() / (Ch * P);
    const long half = static_cast<long>(K / 2);
    auto out = Tensor::zeros(x.shape());
    for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < Ch; ++c) {
            const std::size_t base = (b * Ch + c) * P;
            for (std::size_t t = 0; t < P; ++t) {
                double acc = bias.defined() ? bias[c] : 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const long src = static_cast<long>(t) + static_cast<long>(k) - half;
                    if (src >= 0 && src < static_cast<long>(P)) acc += w[c * K + k] * x[base + src];
                }
                out[base + t] = acc;
            }
        }
    mac_counter().add(static_cast<std::uint64_t>(N) * Ch * P * K);
    if (needs_record({&x, &w, &bias})) {
        detail::record("depthwise_conv1d", out, [x, w, bias, o = out.impl(), N, Ch, P, K, half] {
            const auto& g = o->grad;
            std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buffer() : nullptr;
            std::vector<double>* gw = w.requires_grad() ? &w.impl()->grad_buffer() : nullptr;
            std::vector<double>* gb =
                bias.defined() && bias.requires_grad() ? &bias.impl()->grad_buffer() : nullptr;
            for (std::size_t b = 0; b < N; ++b)
                for (std::size_t c = 0; c < Ch; ++c) {
                    const std::size_t base = (b * Ch + c) * P;
                    for (std::size_t t = 0; t < P; ++t) {
                        const double gy = g[base + t];
                        if (gb) (*gb)[c] += gy;
                        for (std::size_t k = 0; k < K; ++k) {
                            const long src = static_cast<long>(t) + static_cast<long>(k) - half;
                            if (src < 0 || src >= static_cast<long>(P)) continue;
                            if (gx) (*gx)[base + src] += gy * w[c * K + k];
                            if (gw) (*gw)[c * K + k] += gy * x[base + src];
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

/// Max-subtracted softmax over `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto s = detail::split_axis(x.shape(), axis);
    auto out = Tensor::zeros(x.shape());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.inner; ++k) {
            const std::size_t base = o * s.n * s.inner + k;
            double mx = x[base];
            for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, x[base + i * s.inner]);
            double z = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) {
                const double e = std::exp(x[base + i * s.inner] - mx);
                out[base + i * s.inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= z;
        }
    if (needs_record({&x})) {
        detail::record("softmax", out, [x, o = out.impl(), s] {
            auto& gx = x.impl()->grad_buffer();
            const auto& y = o->value;
            const auto& g = o->grad;
            for (std::size_t oo = 0; oo < s.outer; ++oo)
                for (std::size_t k = 0; k < s.inner; ++k) {
                    const std::size_t base = oo * s.n * s.inner + k;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
                    for (std::size_t i = 0; i < s.n; ++i) {
                        const std::size_t j = base + i * s.inner;
                        gx[j] += y[j] * (g[j] - dot);
                    }
                }
        });
    }
    return out;
}

/// Normalizes each slice along `axis` to zero mean / unit population variance,
/// then applies gamma[n], beta[n].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis,
                         double eps = 1e-5) {
    const auto s = detail::split_axis(x.shape(), axis);
    if (gamma.size() != s.n || beta.size() != s.n)
        throw ShapeError("layer_norm affine params must have " + std::to_string(s.n) + " entries");
    auto out = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.size()), inv_std(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.inner; ++k) {
            const std::size_t base = o * s.n * s.inner + k;
            double mu = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) mu += x[base + i * s.inner];
            mu /= static_cast<double>(s.n);
            double var = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) {
                const double d = x[base + i * s.inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(s.n);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * s.inner + k] = is;
            for (std::size_t i = 0; i < s.n; ++i) {
                const std::size_t j = base + i * s.inner;
                xhat[j] = (x[j] - mu) * is;
                out[j] = gamma[i] * xhat[j] + beta[i];
            }
        }
    if (needs_record({&x, &gamma, &beta})) {
        detail::record("layer_norm", out,
                       [x, gamma, beta, o = out.impl(), s, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                           const auto& g = o->grad;
                           std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buffer() : nullptr;
                           std::vector<double>* gg = gamma.requires_grad() ? &gamma.impl()->grad_buffer() : nullptr;
                           std::vector<double>* gbeta = beta.requires_grad() ? &beta.impl()->grad_buffer() : nullptr;
                           const double n = static_cast<double>(s.n);
                           for (std::size_t oo = 0; oo < s.outer; ++oo)
                               for (std::size_t k = 0; k < s.inner; ++k) {
                                   const std::size_t base = oo * s.n * s.inner + k;
                                   double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                                   for (std::size_t i = 0; i < s.n; ++i) {
                                       const std::size_t j = base + i * s.inner;
                                       const double dxh = g[j] * gamma[i];
                                       sum_dxh += dxh;
                                       sum_dxh_xh += dxh * xhat[j];
                                       if (gg) (*gg)[i] += g[j] * xhat[j];
                                       if (gbeta) (*gbeta)[i] += g[j];
                                   }
                                   if (!gx) continue;
                                   const double is = inv_std[oo * s.inner + k];
                                   for (std::size_t i = 0; i < s.n; ++i) {
                                       const std::size_t j = base + i * s.inner;
                                       const double dxh = g[j] * gamma[i];
                                       (*gx)[j] += is / n * (n * dxh - sum_dxh - xhat[j] * sum_dxh_xh);
                                   }
                               }
                       });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class Loss { mse, mae };

inline Tensor loss(Loss kind, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("loss shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    const double n = static_cast<double>(pred.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += kind == Loss::mse ? d * d : std::abs(d);
    }
    auto out = Tensor::scalar(acc / n);
    if (needs_record({&pred, &target})) {
        detail::record(kind == Loss::mse ? "mse" : "mae", out, [kind, pred, target, o = out.impl(), n] {
            const double g = o->grad[0];
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double d = pred[i] - target[i];
                const double dd = kind == Loss::mse ? 2.0 * d / n : (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n;
                if (pred.requires_grad()) pred.impl()->accumulate(i, g * dd);
                if (target.requires_grad()) target.impl()->accumulate(i, -g * dd);
            }
        });
    }
    return out;
}

inline Tensor mse(const Tensor& pred, const Tensor& target) { return loss(Loss::mse, pred, target); }
inline Tensor mae(const Tensor& pred, const Tensor& target) { return loss(Loss::mae, pred, target); }

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

/// x[..., in] * W[in, out] + b[out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
    if (w.ndim() != 2 || x.shape().back() != w.dim(0))
        throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(w.shape()));
    const std::size_t in = w.dim(0), rows = x.size() / in;
    Shape oshape = x.shape();
    oshape.back() = w.dim(1);
    auto y = reshape(matmul(reshape(x, {rows, in}), w), oshape);
    return b.defined() ? add(y, b) : y;
}

}  // namespace twins::ops
