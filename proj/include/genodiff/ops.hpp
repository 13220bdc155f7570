#pragma once

#include <algorithm>
#include <cmath>

#include "autodiff.hpp"

namespace genodiff {
namespace ops {

/*--------------------------------- elementwise --------------------------------*/

template <class S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
    check_same_shape("add", a.value(), b.value());
    TensorT<S> out = a.value();
    const S* pb = b.value().data();
    S* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
    return detail::make_op<S>(std::move(out), {a, b}, [](NodeT<S>& n) {
        const S* g = n.grad.data();
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[static_cast<size_t>(k)];
            if (!p.requires_grad) continue;
            S* pg = p.grad_buf().data();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i];
        }
    });
}

template <class S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
    check_same_shape("mul", a.value(), b.value());
    TensorT<S> out = a.value();
    const S* pb = b.value().data();
    S* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
    return detail::make_op<S>(std::move(out), {a, b}, [](NodeT<S>& n) {
        const S* g = n.grad.data();
        auto& pa = *n.parents[0];
        auto& pb2 = *n.parents[1];
        int64_t m = n.grad.numel();
        if (pa.requires_grad) {
            S* pg = pa.grad_buf().data();
            const S* bv = pb2.value.data();
            for (int64_t i = 0; i < m; ++i) pg[i] += g[i] * bv[i];
        }
        if (pb2.requires_grad) {
            S* pg = pb2.grad_buf().data();
            const S* av = pa.value.data();
            for (int64_t i = 0; i < m; ++i) pg[i] += g[i] * av[i];
        }
    });
}

// c*x + d, scalars
template <class S>
VarT<S> affine(const VarT<S>& x, double c, double d) {
    TensorT<S> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>(c) * out[i] + static_cast<S>(d);
    return detail::make_op<S>(std::move(out), {x}, [c](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += static_cast<S>(c) * g[i];
    });
}

template <class S>
VarT<S> scale(const VarT<S>& x, double c) {
    return affine(x, c, 0.0);
}

template <class S>
VarT<S> sub(const VarT<S>& a, const VarT<S>& b) {
    return add(a, scale(b, -1.0));
}

// elementwise product with a non-differentiable tensor (clamp masks etc.)
template <class S>
VarT<S> mul_const(const VarT<S>& x, const TensorT<S>& m) {
    check_same_shape("mul_const", x.value(), m);
    TensorT<S> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= m[i];
    return detail::make_op<S>(std::move(out), {x}, [m](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i] * m[i];
    });
}

/*--------------------------------- activations --------------------------------*/

template <class S>
VarT<S> sigmoid(const VarT<S>& x) {
    TensorT<S> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(out[i]))));
    return detail::make_op<S>(std::move(out), {x}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        const S* y = n.value.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i] * y[i] * (S(1) - y[i]);
    });
}

template <class S>
VarT<S> silu(const VarT<S>& x) {
    TensorT<S> out(x.shape());
    const S* px = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-static_cast<double>(px[i])));
        out[i] = static_cast<S>(static_cast<double>(px[i]) * s);
    }
    return detail::make_op<S>(std::move(out), {x}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        const S* xv = p.value.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xv[i])));
            pg[i] += g[i] * static_cast<S>(s * (1.0 + static_cast<double>(xv[i]) * (1.0 - s)));
        }
    });
}

template <class S>
VarT<S> relu(const VarT<S>& x) {
    TensorT<S> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > S(0) ? out[i] : S(0);
    return detail::make_op<S>(std::move(out), {x}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        const S* xv = p.value.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += xv[i] > S(0) ? g[i] : S(0);
    });
}

/*------------------------------- shape plumbing --------------------------------*/

template <class S>
VarT<S> reshape(const VarT<S>& x, Shape shape) {
    TensorT<S> out = x.value().reshaped(std::move(shape));
    return detail::make_op<S>(std::move(out), {x}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i];
    });
}

// concat along `dim`; all inputs must agree on every other dimension
template <class S>
VarT<S> concat(const std::vector<VarT<S>>& xs, int64_t dim) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    Shape out_shape = xs[0].shape();
    auto rank = static_cast<int64_t>(out_shape.size());
    if (dim < 0 || dim >= rank) throw ShapeError("concat: bad dim");
    int64_t total = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (static_cast<int64_t>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
        for (int64_t d = 0; d < rank; ++d)
            if (d != dim && s[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)])
                throw ShapeError("concat: shape mismatch at dim " + std::to_string(d));
        total += s[static_cast<size_t>(dim)];
    }
    out_shape[static_cast<size_t>(dim)] = total;

    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < dim; ++d) outer *= out_shape[static_cast<size_t>(d)];
    for (int64_t d = dim + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];

    TensorT<S> out(out_shape);
    std::vector<int64_t> sizes;
    int64_t off = 0;
    for (const auto& x : xs) {
        int64_t di = x.shape()[static_cast<size_t>(dim)];
        sizes.push_back(di);
        const S* px = x.value().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(px + o * di * inner, px + (o + 1) * di * inner,
                      out.data() + (o * total + off) * inner);
        off += di;
    }
    return detail::make_op<S>(std::move(out), xs, [sizes, outer, inner, total](NodeT<S>& n) {
        const S* g = n.grad.data();
        int64_t off2 = 0;
        for (size_t k = 0; k < n.parents.size(); ++k) {
            auto& p = *n.parents[k];
            int64_t di = sizes[k];
            if (p.requires_grad) {
                S* pg = p.grad_buf().data();
                for (int64_t o = 0; o < outer; ++o) {
                    const S* src = g + (o * total + off2) * inner;
                    S* dst = pg + o * di * inner;
                    for (int64_t i = 0; i < di * inner; ++i) dst[i] += src[i];
                }
            }
            off2 += di;
        }
    });
}

template <class S>
VarT<S> slice(const VarT<S>& x, int64_t dim, int64_t start, int64_t end) {
    const Shape& s = x.shape();
    auto rank = static_cast<int64_t>(s.size());
    if (dim < 0 || dim >= rank) throw ShapeError("slice: bad dim");
    int64_t d = s[static_cast<size_t>(dim)];
    if (start < 0 || end > d || start >= end)
        throw ShapeError("slice: bad range [" + std::to_string(start) + "," + std::to_string(end) +
                         ") for dim of size " + std::to_string(d));
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < dim; ++i) outer *= s[static_cast<size_t>(i)];
    for (int64_t i = dim + 1; i < rank; ++i) inner *= s[static_cast<size_t>(i)];
    Shape out_shape = s;
    int64_t w = end - start;
    out_shape[static_cast<size_t>(dim)] = w;
    TensorT<S> out(out_shape);
    const S* px = x.value().data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(px + (o * d + start) * inner, px + (o * d + end) * inner,
                  out.data() + o * w * inner);
    return detail::make_op<S>(std::move(out), {x}, [dim, start, w, outer, inner, d](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        (void)dim;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        for (int64_t o = 0; o < outer; ++o) {
            S* dst = pg + (o * d + start) * inner;
            const S* src = g + o * w * inner;
            for (int64_t i = 0; i < w * inner; ++i) dst[i] += src[i];
        }
    });
}

/*--------------------------------- reductions ---------------------------------*/

template <class S>
VarT<S> sum_all(const VarT<S>& x) {
    double acc = 0.0;
    const S* px = x.value().data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(px[i]);
    TensorT<S> out({1});
    out[0] = static_cast<S>(acc);
    return detail::make_op<S>(std::move(out), {x}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S g = n.grad[0];
        S* pg = p.grad_buf().data();
        for (int64_t i = 0; i < p.value.numel(); ++i) pg[i] += g;
    });
}

template <class S>
VarT<S> mean_all(const VarT<S>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

/*----------------------------------- softmax -----------------------------------*/

// softmax over the last dimension
template <class S>
VarT<S> softmax(const VarT<S>& x) {
    const Shape& s = x.shape();
    int64_t f = s.back();
    int64_t rows = x.numel() / f;
    TensorT<S> out(s);
    const S* px = x.value().data();
    S* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = px + r * f;
        S* o = po + r * f;
        double m = -1e300;
        for (int64_t j = 0; j < f; ++j) m = std::max(m, static_cast<double>(in[j]));
        double z = 0.0;
        for (int64_t j = 0; j < f; ++j) {
            double e = std::exp(static_cast<double>(in[j]) - m);
            o[j] = static_cast<S>(e);
            z += e;
        }
        for (int64_t j = 0; j < f; ++j) o[j] = static_cast<S>(static_cast<double>(o[j]) / z);
    }
    return detail::make_op<S>(std::move(out), {x}, [f, rows](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = n.grad.data();
        const S* y = n.value.data();
        for (int64_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int64_t j = 0; j < f; ++j)
                dot += static_cast<double>(g[r * f + j]) * static_cast<double>(y[r * f + j]);
            for (int64_t j = 0; j < f; ++j)
                pg[r * f + j] += static_cast<S>(static_cast<double>(y[r * f + j]) *
                                                (static_cast<double>(g[r * f + j]) - dot));
        }
    });
}

/*------------------------------------ losses -----------------------------------*/

// mean squared error over mask-true positions only:
//   L = sum(mask * (pred - target)^2) / sum(mask)
template <class S>
VarT<S> mse_masked(const VarT<S>& pred, const TensorT<S>& target, const TensorT<S>& mask) {
    check_same_shape("mse_masked", pred.value(), target);
    check_same_shape("mse_masked", pred.value(), mask);
    double denom = 0.0;
    for (int64_t i = 0; i < mask.numel(); ++i) denom += static_cast<double>(mask[i]);
    if (denom <= 0.0) throw NumericError("mse_masked: mask selects no positions");
    double acc = 0.0;
    const S* pp = pred.value().data();
    for (int64_t i = 0; i < pred.numel(); ++i) {
        double d = static_cast<double>(pp[i]) - static_cast<double>(target[i]);
        acc += static_cast<double>(mask[i]) * d * d;
    }
    TensorT<S> out({1});
    out[0] = static_cast<S>(acc / denom);
    return detail::make_op<S>(std::move(out), {pred}, [target, mask, denom](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        S g = n.grad[0];
        S* pg = p.grad_buf().data();
        const S* pv = p.value.data();
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
            pg[i] += static_cast<S>(static_cast<double>(g) * 2.0 * static_cast<double>(mask[i]) *
                                    d / denom);
        }
    });
}

// mean negative log-likelihood of integer labels under softmax(logits)
template <class S>
VarT<S> cross_entropy_logits(const VarT<S>& logits, const std::vector<int64_t>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy: logits must be (n, classes)");
    int64_t n = s[0], k = s[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy: labels length mismatch");
    TensorT<S> probs(s);
    const S* pl = logits.value().data();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double m = -1e300;
        for (int64_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(pl[i * k + j]));
        double z = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            double e = std::exp(static_cast<double>(pl[i * k + j]) - m);
            probs[i * k + j] = static_cast<S>(e);
            z += e;
        }
        for (int64_t j = 0; j < k; ++j)
            probs[i * k + j] = static_cast<S>(static_cast<double>(probs[i * k + j]) / z);
        int64_t y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= k) throw ShapeError("cross_entropy: label out of range");
        loss -= std::log(std::max(1e-300, static_cast<double>(probs[i * k + y])));
    }
    TensorT<S> out({1});
    out[0] = static_cast<S>(loss / static_cast<double>(n));
    return detail::make_op<S>(std::move(out), {logits}, [probs, labels, n, k](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        S g = nd.grad[0];
        S* pg = p.grad_buf().data();
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < k; ++j) {
                double v = static_cast<double>(probs[i * k + j]);
                if (j == labels[static_cast<size_t>(i)]) v -= 1.0;
                pg[i * k + j] += static_cast<S>(static_cast<double>(g) * v / static_cast<double>(n));
            }
        }
    });
}

// per-sample scalar scaling: y[b, ...] = s[b] * x[b, ...]
template <class S>
VarT<S> scale_per_sample(const VarT<S>& x, const VarT<S>& s) {
    int64_t b = x.shape()[0];
    if (s.numel() != b) throw ShapeError("scale_per_sample: scale length != batch");
    int64_t inner = x.numel() / b;
    TensorT<S> out = x.value();
    const S* ps = s.value().data();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) out[i * inner + j] *= ps[i];
    return detail::make_op<S>(std::move(out), {x, s}, [b, inner](NodeT<S>& n) {
        auto& px = *n.parents[0];
        auto& psc = *n.parents[1];
        const S* g = n.grad.data();
        if (px.requires_grad) {
            S* pg = px.grad_buf().data();
            const S* sv = psc.value.data();
            for (int64_t i = 0; i < b; ++i)
                for (int64_t j = 0; j < inner; ++j) pg[i * inner + j] += g[i * inner + j] * sv[i];
        }
        if (psc.requires_grad) {
            S* pg = psc.grad_buf().data();
            const S* xv = px.value.data();
            for (int64_t i = 0; i < b; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < inner; ++j)
                    acc += static_cast<double>(g[i * inner + j]) *
                           static_cast<double>(xv[i * inner + j]);
                pg[i] += static_cast<S>(acc);
            }
        }
    });
}

}  // namespace ops
}  // namespace genodiff
