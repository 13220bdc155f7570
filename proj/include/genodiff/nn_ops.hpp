#pragma once

#include <cmath>

#include "ops.hpp"

namespace genodiff {
namespace ops {

namespace kernels {

// C(n,m) +?= A(n,k) * B(k,m). ikj loop order so the inner loop streams rows of
// B and C; parallel over output rows, each row computed serially in one
// thread, so results are identical for any thread count.
template <class S>
void mm_nn(const S* a, const S* b, S* c, int64_t n, int64_t k, int64_t m, bool accumulate) {
    parallel_for(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                S* crow = c + i * m;
                if (!accumulate)
                    for (int64_t j = 0; j < m; ++j) crow[j] = S(0);
                const S* arow = a + i * k;
                for (int64_t p = 0; p < k; ++p) {
                    S av = arow[p];
                    const S* brow = b + p * m;
                    for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
                }
            }
        },
        std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * m)));
}

// C(n,m) +?= A(n,k) * B(m,k)^T
template <class S>
void mm_nt(const S* a, const S* b, S* c, int64_t n, int64_t k, int64_t m, bool accumulate) {
    parallel_for(
        n,
        [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const S* arow = a + i * k;
                S* crow = c + i * m;
                for (int64_t j = 0; j < m; ++j) {
                    const S* brow = b + j * k;
                    S acc = S(0);
                    for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                    if (accumulate)
                        crow[j] += acc;
                    else
                        crow[j] = acc;
                }
            }
        },
        std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * m)));
}

// C(k,m) +?= A(n,k)^T * B(n,m)
template <class S>
void mm_tn(const S* a, const S* b, S* c, int64_t n, int64_t k, int64_t m, bool accumulate) {
    parallel_for(
        k,
        [&](int64_t lo, int64_t hi) {
            for (int64_t p = lo; p < hi; ++p) {
                S* crow = c + p * m;
                if (!accumulate)
                    for (int64_t j = 0; j < m; ++j) crow[j] = S(0);
                for (int64_t i = 0; i < n; ++i) {
                    S av = a[i * k + p];
                    const S* brow = b + i * m;
                    for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
                }
            }
        },
        std::max<int64_t>(1, 16384 / std::max<int64_t>(1, n * m)));
}

}  // namespace kernels

/*-------------------------------- linear algebra -------------------------------*/

template <class S>
VarT<S> matmul(const VarT<S>& a, const VarT<S>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible " + shape_str(sa) + " x " + shape_str(sb));
    int64_t n = sa[0], k = sa[1], m = sb[1];
    TensorT<S> out({n, m});
    kernels::mm_nn(a.value().data(), b.value().data(), out.data(), n, k, m, false);
    return detail::make_op<S>(std::move(out), {a, b}, [n, k, m](NodeT<S>& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        const S* g = nd.grad.data();
        if (pa.requires_grad)
            kernels::mm_nt(g, pb.value.data(), pa.grad_buf().data(), n, m, k, true);
        if (pb.requires_grad)
            kernels::mm_tn(pa.value.data(), g, pb.grad_buf().data(), n, k, m, true);
    });
}

// x(..., f) + b(f), broadcast over all leading dims
template <class S>
VarT<S> add_bias(const VarT<S>& x, const VarT<S>& b) {
    int64_t f = x.shape().back();
    if (b.numel() != f) throw ShapeError("add_bias: bias length != last dim");
    int64_t rows = x.numel() / f;
    TensorT<S> out = x.value();
    const S* pb = b.value().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < f; ++j) out[r * f + j] += pb[j];
    return detail::make_op<S>(std::move(out), {x, b}, [rows, f](NodeT<S>& n) {
        auto& px = *n.parents[0];
        auto& pb2 = *n.parents[1];
        const S* g = n.grad.data();
        if (px.requires_grad) {
            S* pg = px.grad_buf().data();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i];
        }
        if (pb2.requires_grad) {
            S* pg = pb2.grad_buf().data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < f; ++j) pg[j] += g[r * f + j];
        }
    });
}

template <class S>
VarT<S> linear(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b) {
    return add_bias(matmul(x, w), b);
}

template <class S>
VarT<S> transpose2d(const VarT<S>& x) {
    const Shape& s = x.shape();
    if (s.size() != 2) throw ShapeError("transpose2d: rank != 2");
    int64_t n = s[0], m = s[1];
    TensorT<S> out({m, n});
    const S* px = x.value().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out[j * n + i] = px[i * m + j];
    return detail::make_op<S>(std::move(out), {x}, [n, m](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = nd.grad.data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) pg[i * m + j] += g[j * n + i];
    });
}

// (b, x, y) -> (b, y, x)
template <class S>
VarT<S> swap_last2(const VarT<S>& t) {
    const Shape& s = t.shape();
    if (s.size() != 3) throw ShapeError("swap_last2: rank != 3");
    int64_t b = s[0], x = s[1], y = s[2];
    TensorT<S> out({b, y, x});
    const S* p = t.value().data();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < x; ++j)
            for (int64_t k = 0; k < y; ++k) out[(i * y + k) * x + j] = p[(i * x + j) * y + k];
    return detail::make_op<S>(std::move(out), {t}, [b, x, y](NodeT<S>& nd) {
        auto& pr = *nd.parents[0];
        if (!pr.requires_grad) return;
        S* pg = pr.grad_buf().data();
        const S* g = nd.grad.data();
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < x; ++j)
                for (int64_t k = 0; k < y; ++k) pg[(i * x + j) * y + k] += g[(i * y + k) * x + j];
    });
}

/*---------------------------------- convolution --------------------------------*/

// x(b, ci, l), w(co, ci, k), bias(co); zero padding
template <class S>
VarT<S> conv1d(const VarT<S>& x, const VarT<S>& w, const VarT<S>& bias, int64_t stride,
               int64_t pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1])
        throw ShapeError("conv1d: incompatible " + shape_str(sx) + " with kernel " + shape_str(sw));
    if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
    int64_t b = sx[0], ci = sx[1], l = sx[2];
    int64_t co = sw[0], k = sw[2];
    if (bias.numel() != co) throw ShapeError("conv1d: bias length != out channels");
    int64_t lo_len = (l + 2 * pad - k) / stride + 1;
    if (lo_len < 1) throw ShapeError("conv1d: output length < 1");
    TensorT<S> out({b, co, lo_len});
    const S* px = x.value().data();
    const S* pw = w.value().data();
    const S* pbias = bias.value().data();
    parallel_for(
        b * co,
        [&](int64_t lo, int64_t hi) {
            for (int64_t idx = lo; idx < hi; ++idx) {
                int64_t ib = idx / co, oc = idx % co;
                S* orow = out.data() + (ib * co + oc) * lo_len;
                for (int64_t ol = 0; ol < lo_len; ++ol) {
                    S acc = pbias[oc];
                    for (int64_t c = 0; c < ci; ++c) {
                        const S* xrow = px + (ib * ci + c) * l;
                        const S* wrow = pw + (oc * ci + c) * k;
                        for (int64_t kk = 0; kk < k; ++kk) {
                            int64_t li = ol * stride + kk - pad;
                            if (li >= 0 && li < l) acc += xrow[li] * wrow[kk];
                        }
                    }
                    orow[ol] = acc;
                }
            }
        },
        std::max<int64_t>(1, 8192 / std::max<int64_t>(1, lo_len * ci * k)));
    return detail::make_op<S>(
        std::move(out), {x, w, bias}, [b, ci, l, co, k, stride, pad, lo_len](NodeT<S>& nd) {
            auto& px_ = *nd.parents[0];
            auto& pw_ = *nd.parents[1];
            auto& pb_ = *nd.parents[2];
            const S* g = nd.grad.data();
            if (px_.requires_grad) {
                S* dx = px_.grad_buf().data();
                const S* wv = pw_.value.data();
                parallel_for(b * ci, [&](int64_t lo, int64_t hi) {
                    for (int64_t idx = lo; idx < hi; ++idx) {
                        int64_t ib = idx / ci, c = idx % ci;
                        S* dxrow = dx + (ib * ci + c) * l;
                        for (int64_t oc = 0; oc < co; ++oc) {
                            const S* grow = g + (ib * co + oc) * lo_len;
                            const S* wrow = wv + (oc * ci + c) * k;
                            for (int64_t ol = 0; ol < lo_len; ++ol) {
                                S gv = grow[ol];
                                for (int64_t kk = 0; kk < k; ++kk) {
                                    int64_t li = ol * stride + kk - pad;
                                    if (li >= 0 && li < l) dxrow[li] += gv * wrow[kk];
                                }
                            }
                        }
                    }
                });
            }
            if (pw_.requires_grad) {
                S* dw = pw_.grad_buf().data();
                const S* xv = px_.value.data();
                parallel_for(co, [&](int64_t lo, int64_t hi) {
                    for (int64_t oc = lo; oc < hi; ++oc) {
                        for (int64_t c = 0; c < ci; ++c) {
                            S* dwrow = dw + (oc * ci + c) * k;
                            for (int64_t ib = 0; ib < b; ++ib) {
                                const S* grow = g + (ib * co + oc) * lo_len;
                                const S* xrow = xv + (ib * ci + c) * l;
                                for (int64_t ol = 0; ol < lo_len; ++ol) {
                                    S gv = grow[ol];
                                    for (int64_t kk = 0; kk < k; ++kk) {
                                        int64_t li = ol * stride + kk - pad;
                                        if (li >= 0 && li < l) dwrow[kk] += gv * xrow[li];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (pb_.requires_grad) {
                S* db = pb_.grad_buf().data();
                for (int64_t ib = 0; ib < b; ++ib)
                    for (int64_t oc = 0; oc < co; ++oc) {
                        const S* grow = g + (ib * co + oc) * lo_len;
                        double acc = 0.0;
                        for (int64_t ol = 0; ol < lo_len; ++ol) acc += static_cast<double>(grow[ol]);
                        db[oc] += static_cast<S>(acc);
                    }
            }
        });
}

// nearest-neighbour upsampling along the last dim of (b, c, l)
template <class S>
VarT<S> upsample_nearest1d(const VarT<S>& x, int64_t factor) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("upsample_nearest1d: rank != 3");
    if (factor < 1) throw ShapeError("upsample_nearest1d: factor must be >= 1");
    int64_t b = s[0], c = s[1], l = s[2];
    TensorT<S> out({b, c, l * factor});
    const S* px = x.value().data();
    for (int64_t r = 0; r < b * c; ++r)
        for (int64_t i = 0; i < l; ++i)
            for (int64_t f = 0; f < factor; ++f) out[r * l * factor + i * factor + f] = px[r * l + i];
    return detail::make_op<S>(std::move(out), {x}, [b, c, l, factor](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = nd.grad.data();
        for (int64_t r = 0; r < b * c; ++r)
            for (int64_t i = 0; i < l; ++i) {
                double acc = 0.0;
                for (int64_t f = 0; f < factor; ++f)
                    acc += static_cast<double>(g[r * l * factor + i * factor + f]);
                pg[r * l + i] += static_cast<S>(acc);
            }
    });
}

// average pooling over (b, c, l), valid windows only
template <class S>
VarT<S> avg_pool1d(const VarT<S>& x, int64_t window, int64_t stride) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("avg_pool1d: rank != 3");
    if (window < 1 || stride < 1) throw ShapeError("avg_pool1d: bad window/stride");
    int64_t b = s[0], c = s[1], l = s[2];
    int64_t lo_len = (l - window) / stride + 1;
    if (lo_len < 1) throw ShapeError("avg_pool1d: output length < 1");
    TensorT<S> out({b, c, lo_len});
    const S* px = x.value().data();
    for (int64_t r = 0; r < b * c; ++r)
        for (int64_t o = 0; o < lo_len; ++o) {
            double acc = 0.0;
            for (int64_t k = 0; k < window; ++k) acc += static_cast<double>(px[r * l + o * stride + k]);
            out[r * lo_len + o] = static_cast<S>(acc / static_cast<double>(window));
        }
    return detail::make_op<S>(std::move(out), {x}, [b, c, l, window, stride, lo_len](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = nd.grad.data();
        for (int64_t r = 0; r < b * c; ++r)
            for (int64_t o = 0; o < lo_len; ++o) {
                S gv = static_cast<S>(static_cast<double>(g[r * lo_len + o]) /
                                      static_cast<double>(window));
                for (int64_t k = 0; k < window; ++k) pg[r * l + o * stride + k] += gv;
            }
    });
}

/*---------------------------------- embeddings ---------------------------------*/

// table(v, f) indexed by integer ids -> (n, f)
template <class S>
VarT<S> embedding_lookup(const VarT<S>& table, const std::vector<int64_t>& ids) {
    const Shape& s = table.shape();
    if (s.size() != 2) throw ShapeError("embedding_lookup: table must be (vocab, features)");
    int64_t v = s[0], f = s[1];
    auto n = static_cast<int64_t>(ids.size());
    TensorT<S> out({n, f});
    const S* pt = table.value().data();
    for (int64_t i = 0; i < n; ++i) {
        int64_t id = ids[static_cast<size_t>(i)];
        if (id < 0 || id >= v)
            throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        std::copy(pt + id * f, pt + (id + 1) * f, out.data() + i * f);
    }
    return detail::make_op<S>(std::move(out), {table}, [ids, f](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        S* pg = p.grad_buf().data();
        const S* g = nd.grad.data();
        for (size_t i = 0; i < ids.size(); ++i) {
            S* row = pg + ids[i] * f;
            const S* src = g + static_cast<int64_t>(i) * f;
            for (int64_t j = 0; j < f; ++j) row[j] += src[j];
        }
    });
}

// per-position projection: y[b,g,:] = x[b,g,:] @ w[g] + bias[g]
// x(b, p, di), w(p, di, do), bias(p, do)
template <class S>
VarT<S> position_wise_linear(const VarT<S>& x, const VarT<S>& w, const VarT<S>& bias) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[0] || sx[2] != sw[1])
        throw ShapeError("position_wise_linear: incompatible " + shape_str(sx) + " with " +
                         shape_str(sw));
    int64_t b = sx[0], p = sx[1], di = sx[2], dout = sw[2];
    if (bias.numel() != p * dout) throw ShapeError("position_wise_linear: bad bias shape");
    TensorT<S> out({b, p, dout});
    const S* px = x.value().data();
    const S* pw = w.value().data();
    const S* pb = bias.value().data();
    parallel_for(b * p, [&](int64_t lo, int64_t hi) {
        for (int64_t idx = lo; idx < hi; ++idx) {
            int64_t g = idx % p;
            const S* xrow = px + idx * di;
            const S* wmat = pw + g * di * dout;
            S* orow = out.data() + idx * dout;
            for (int64_t j = 0; j < dout; ++j) orow[j] = pb[g * dout + j];
            for (int64_t i = 0; i < di; ++i) {
                S xv = xrow[i];
                const S* wrow = wmat + i * dout;
                for (int64_t j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
            }
        }
    });
    return detail::make_op<S>(std::move(out), {x, w, bias}, [b, p, di, dout](NodeT<S>& nd) {
        auto& px_ = *nd.parents[0];
        auto& pw_ = *nd.parents[1];
        auto& pb_ = *nd.parents[2];
        const S* g = nd.grad.data();
        if (px_.requires_grad) {
            S* dx = px_.grad_buf().data();
            const S* wv = pw_.value.data();
            parallel_for(b * p, [&](int64_t lo, int64_t hi) {
                for (int64_t idx = lo; idx < hi; ++idx) {
                    int64_t gi = idx % p;
                    const S* grow = g + idx * dout;
                    const S* wmat = wv + gi * di * dout;
                    S* dxrow = dx + idx * di;
                    for (int64_t i = 0; i < di; ++i) {
                        S acc = S(0);
                        const S* wrow = wmat + i * dout;
                        for (int64_t j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
                        dxrow[i] += acc;
                    }
                }
            });
        }
        if (pw_.requires_grad) {
            S* dw = pw_.grad_buf().data();
            const S* xv = px_.value.data();
            parallel_for(p, [&](int64_t lo, int64_t hi) {
                for (int64_t gi = lo; gi < hi; ++gi) {
                    S* wmat = dw + gi * di * dout;
                    for (int64_t ib = 0; ib < b; ++ib) {
                        const S* xrow = xv + (ib * p + gi) * di;
                        const S* grow = g + (ib * p + gi) * dout;
                        for (int64_t i = 0; i < di; ++i) {
                            S xvv = xrow[i];
                            S* wrow = wmat + i * dout;
                            for (int64_t j = 0; j < dout; ++j) wrow[j] += xvv * grow[j];
                        }
                    }
                }
            });
        }
        if (pb_.requires_grad) {
            S* db = pb_.grad_buf().data();
            for (int64_t ib = 0; ib < b; ++ib)
                for (int64_t gi = 0; gi < p; ++gi) {
                    const S* grow = g + (ib * p + gi) * dout;
                    S* brow = db + gi * dout;
                    for (int64_t j = 0; j < dout; ++j) brow[j] += grow[j];
                }
        }
    });
}

// x(b, c, l) + s(b, c), broadcast over the length dim (time/label injection)
template <class S>
VarT<S> add_channel(const VarT<S>& x, const VarT<S>& s) {
    const Shape& sx = x.shape();
    if (sx.size() != 3) throw ShapeError("add_channel: x must be (batch, channels, len)");
    int64_t b = sx[0], c = sx[1], l = sx[2];
    if (s.shape() != Shape{b, c}) throw ShapeError("add_channel: scale must be (batch, channels)");
    TensorT<S> out = x.value();
    const S* ps = s.value().data();
    for (int64_t i = 0; i < b * c; ++i)
        for (int64_t j = 0; j < l; ++j) out[i * l + j] += ps[i];
    return detail::make_op<S>(std::move(out), {x, s}, [b, c, l](NodeT<S>& n) {
        auto& px = *n.parents[0];
        auto& ps_ = *n.parents[1];
        const S* g = n.grad.data();
        if (px.requires_grad) {
            S* pg = px.grad_buf().data();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i];
        }
        if (ps_.requires_grad) {
            S* pg = ps_.grad_buf().data();
            for (int64_t i = 0; i < b * c; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < l; ++j) acc += static_cast<double>(g[i * l + j]);
                pg[i] += static_cast<S>(acc);
            }
        }
    });
}

// x(b, ...) + p(...), p broadcast across the batch dim (positional embeddings)
template <class S>
VarT<S> add_batch_broadcast(const VarT<S>& x, const VarT<S>& p) {
    int64_t b = x.shape()[0];
    int64_t inner = x.numel() / b;
    if (p.numel() != inner) throw ShapeError("add_batch_broadcast: shapes incompatible");
    TensorT<S> out = x.value();
    const S* pp = p.value().data();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) out[i * inner + j] += pp[j];
    return detail::make_op<S>(std::move(out), {x, p}, [b, inner](NodeT<S>& n) {
        auto& px = *n.parents[0];
        auto& pp_ = *n.parents[1];
        const S* g = n.grad.data();
        if (px.requires_grad) {
            S* pg = px.grad_buf().data();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += g[i];
        }
        if (pp_.requires_grad) {
            S* pg = pp_.grad_buf().data();
            for (int64_t i = 0; i < b; ++i)
                for (int64_t j = 0; j < inner; ++j) pg[j] += g[i * inner + j];
        }
    });
}

// x(b, ...) * m(...), a constant mask broadcast across the batch dim
template <class S>
VarT<S> mul_const_broadcast(const VarT<S>& x, const TensorT<S>& m) {
    int64_t b = x.shape()[0];
    int64_t inner = x.numel() / b;
    if (m.numel() != inner) throw ShapeError("mul_const_broadcast: shapes incompatible");
    TensorT<S> out = x.value();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < inner; ++j) out[i * inner + j] *= m[j];
    return detail::make_op<S>(std::move(out), {x}, [b, inner, m](NodeT<S>& n) {
        auto& px = *n.parents[0];
        if (!px.requires_grad) return;
        S* pg = px.grad_buf().data();
        const S* g = n.grad.data();
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < inner; ++j) pg[i * inner + j] += g[i * inner + j] * m[j];
    });
}

/*------------------------------------ norms ------------------------------------*/

// layer norm over the last dim of x(..., f), elementwise affine
template <class S>
VarT<S> layer_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta,
                   double eps = 1e-5) {
    int64_t f = x.shape().back();
    if (gamma.numel() != f || beta.numel() != f) throw ShapeError("layer_norm: bad affine shapes");
    int64_t rows = x.numel() / f;
    TensorT<S> out(x.shape());
    TensorT<S> xhat(x.shape());
    TensorT<S> inv_std({rows});
    const S* px = x.value().data();
    const S* pg = gamma.value().data();
    const S* pb = beta.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const S* in = px + r * f;
        double mu = 0.0;
        for (int64_t j = 0; j < f; ++j) mu += static_cast<double>(in[j]);
        mu /= static_cast<double>(f);
        double var = 0.0;
        for (int64_t j = 0; j < f; ++j) {
            double d = static_cast<double>(in[j]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(f);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = static_cast<S>(is);
        for (int64_t j = 0; j < f; ++j) {
            double xh = (static_cast<double>(in[j]) - mu) * is;
            xhat[r * f + j] = static_cast<S>(xh);
            out[r * f + j] = static_cast<S>(xh * static_cast<double>(pg[j]) +
                                            static_cast<double>(pb[j]));
        }
    }
    return detail::make_op<S>(std::move(out), {x, gamma, beta},
                              [rows, f, xhat, inv_std](NodeT<S>& nd) {
        auto& px_ = *nd.parents[0];
        auto& pg_ = *nd.parents[1];
        auto& pb_ = *nd.parents[2];
        const S* g = nd.grad.data();
        const S* gv = pg_.value.data();
        if (pg_.requires_grad) {
            S* dg = pg_.grad_buf().data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < f; ++j) dg[j] += g[r * f + j] * xhat[r * f + j];
        }
        if (pb_.requires_grad) {
            S* db = pb_.grad_buf().data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < f; ++j) db[j] += g[r * f + j];
        }
        if (px_.requires_grad) {
            S* dx = px_.grad_buf().data();
            for (int64_t r = 0; r < rows; ++r) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t j = 0; j < f; ++j) {
                    double dxh = static_cast<double>(g[r * f + j]) * static_cast<double>(gv[j]);
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * static_cast<double>(xhat[r * f + j]);
                }
                mean_dxh /= static_cast<double>(f);
                mean_dxh_xh /= static_cast<double>(f);
                double is = static_cast<double>(inv_std[r]);
                for (int64_t j = 0; j < f; ++j) {
                    double dxh = static_cast<double>(g[r * f + j]) * static_cast<double>(gv[j]);
                    dx[r * f + j] += static_cast<S>(
                        is * (dxh - mean_dxh - static_cast<double>(xhat[r * f + j]) * mean_dxh_xh));
                }
            }
        }
    });
}

// group norm over x(b, c, l); per-channel affine
template <class S>
VarT<S> group_norm(const VarT<S>& x, int64_t groups, const VarT<S>& gamma, const VarT<S>& beta,
                   double eps = 1e-5) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("group_norm: rank != 3");
    int64_t b = s[0], c = s[1], l = s[2];
    if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("group_norm: bad affine shapes");
    int64_t cg = c / groups;
    int64_t gsize = cg * l;
    TensorT<S> out(s);
    TensorT<S> xhat(s);
    TensorT<S> inv_std({b * groups});
    const S* px = x.value().data();
    const S* pg = gamma.value().data();
    const S* pb = beta.value().data();
    for (int64_t ib = 0; ib < b; ++ib)
        for (int64_t gr = 0; gr < groups; ++gr) {
            const S* base = px + (ib * c + gr * cg) * l;
            double mu = 0.0;
            for (int64_t i = 0; i < gsize; ++i) mu += static_cast<double>(base[i]);
            mu /= static_cast<double>(gsize);
            double var = 0.0;
            for (int64_t i = 0; i < gsize; ++i) {
                double d = static_cast<double>(base[i]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(gsize);
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[ib * groups + gr] = static_cast<S>(is);
            for (int64_t ci = 0; ci < cg; ++ci) {
                int64_t ch = gr * cg + ci;
                for (int64_t li = 0; li < l; ++li) {
                    int64_t idx = (ib * c + ch) * l + li;
                    double xh = (static_cast<double>(px[idx]) - mu) * is;
                    xhat[idx] = static_cast<S>(xh);
                    out[idx] = static_cast<S>(xh * static_cast<double>(pg[ch]) +
                                              static_cast<double>(pb[ch]));
                }
            }
        }
    return detail::make_op<S>(std::move(out), {x, gamma, beta},
                              [b, c, l, groups, cg, gsize, xhat, inv_std](NodeT<S>& nd) {
        auto& px_ = *nd.parents[0];
        auto& pg_ = *nd.parents[1];
        auto& pb_ = *nd.parents[2];
        const S* g = nd.grad.data();
        const S* gv = pg_.value.data();
        if (pg_.requires_grad) {
            S* dg = pg_.grad_buf().data();
            for (int64_t ib = 0; ib < b; ++ib)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t li = 0; li < l; ++li) {
                        int64_t idx = (ib * c + ch) * l + li;
                        acc += static_cast<double>(g[idx]) * static_cast<double>(xhat[idx]);
                    }
                    dg[ch] += static_cast<S>(acc);
                }
        }
        if (pb_.requires_grad) {
            S* db = pb_.grad_buf().data();
            for (int64_t ib = 0; ib < b; ++ib)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t li = 0; li < l; ++li)
                        acc += static_cast<double>(g[(ib * c + ch) * l + li]);
                    db[ch] += static_cast<S>(acc);
                }
        }
        if (px_.requires_grad) {
            S* dx = px_.grad_buf().data();
            for (int64_t ib = 0; ib < b; ++ib)
                for (int64_t gr = 0; gr < groups; ++gr) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int64_t ci = 0; ci < cg; ++ci) {
                        int64_t ch = gr * cg + ci;
                        for (int64_t li = 0; li < l; ++li) {
                            int64_t idx = (ib * c + ch) * l + li;
                            double dxh = static_cast<double>(g[idx]) * static_cast<double>(gv[ch]);
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * static_cast<double>(xhat[idx]);
                        }
                    }
                    mean_dxh /= static_cast<double>(gsize);
                    mean_dxh_xh /= static_cast<double>(gsize);
                    double is = static_cast<double>(inv_std[ib * groups + gr]);
                    for (int64_t ci = 0; ci < cg; ++ci) {
                        int64_t ch = gr * cg + ci;
                        for (int64_t li = 0; li < l; ++li) {
                            int64_t idx = (ib * c + ch) * l + li;
                            double dxh = static_cast<double>(g[idx]) * static_cast<double>(gv[ch]);
                            dx[idx] += static_cast<S>(
                                is * (dxh - mean_dxh -
                                      static_cast<double>(xhat[idx]) * mean_dxh_xh));
                        }
                    }
                }
        }
    });
}

/*---------------------------------- attention ----------------------------------*/

// scaled dot-product multi-head attention over pre-projected q, k, v (b, l, f).
// Saves the per-head attention weights for the backward pass.
template <class S>
VarT<S> multi_head_attention(const VarT<S>& q, const VarT<S>& k, const VarT<S>& v, int64_t heads) {
    const Shape& s = q.shape();
    if (s.size() != 3) throw ShapeError("attention: inputs must be (batch, len, features)");
    check_same_shape("attention", q.value(), k.value());
    check_same_shape("attention", q.value(), v.value());
    int64_t b = s[0], l = s[1], f = s[2];
    if (f % heads != 0) throw ShapeError("attention: features not divisible by heads");
    int64_t dh = f / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    TensorT<S> out({b, l, f});
    TensorT<S> attn({b, heads, l, l});
    const S* pq = q.value().data();
    const S* pk = k.value().data();
    const S* pv = v.value().data();
    parallel_for(b * heads, [&](int64_t lo, int64_t hi) {
        for (int64_t idx = lo; idx < hi; ++idx) {
            int64_t ib = idx / heads, h = idx % heads;
            S* a = attn.data() + idx * l * l;
            // scores + row softmax
            for (int64_t i = 0; i < l; ++i) {
                const S* qi = pq + (ib * l + i) * f + h * dh;
                S* arow = a + i * l;
                double m = -1e300;
                for (int64_t j = 0; j < l; ++j) {
                    const S* kj = pk + (ib * l + j) * f + h * dh;
                    double acc = 0.0;
                    for (int64_t d = 0; d < dh; ++d)
                        acc += static_cast<double>(qi[d]) * static_cast<double>(kj[d]);
                    acc *= inv_sqrt;
                    arow[j] = static_cast<S>(acc);
                    m = std::max(m, acc);
                }
                double z = 0.0;
                for (int64_t j = 0; j < l; ++j) {
                    double e = std::exp(static_cast<double>(arow[j]) - m);
                    arow[j] = static_cast<S>(e);
                    z += e;
                }
                for (int64_t j = 0; j < l; ++j)
                    arow[j] = static_cast<S>(static_cast<double>(arow[j]) / z);
            }
            // out = attn @ v
            for (int64_t i = 0; i < l; ++i) {
                const S* arow = a + i * l;
                S* orow = out.data() + (ib * l + i) * f + h * dh;
                for (int64_t d = 0; d < dh; ++d) orow[d] = S(0);
                for (int64_t j = 0; j < l; ++j) {
                    S av = arow[j];
                    const S* vj = pv + (ib * l + j) * f + h * dh;
                    for (int64_t d = 0; d < dh; ++d) orow[d] += av * vj[d];
                }
            }
        }
    });
    return detail::make_op<S>(std::move(out), {q, k, v},
                              [b, l, f, heads, dh, inv_sqrt, attn](NodeT<S>& nd) {
        auto& pq_ = *nd.parents[0];
        auto& pk_ = *nd.parents[1];
        auto& pv_ = *nd.parents[2];
        const S* g = nd.grad.data();
        const S* qv = pq_.value.data();
        const S* kv = pk_.value.data();
        const S* vv = pv_.value.data();
        bool nq = pq_.requires_grad, nk = pk_.requires_grad, nv = pv_.requires_grad;
        S* dq = nq ? pq_.grad_buf().data() : nullptr;
        S* dk = nk ? pk_.grad_buf().data() : nullptr;
        S* dv = nv ? pv_.grad_buf().data() : nullptr;
        // serial over (batch, head): grads of q/k/v rows overlap across heads
        // only in distinct feature slices, but dv rows are shared across i, so
        // keep the loop deterministic and simple.
        std::vector<double> ds(static_cast<size_t>(l));
        for (int64_t idx = 0; idx < b * heads; ++idx) {
            int64_t ib = idx / heads, h = idx % heads;
            const S* a = attn.data() + idx * l * l;
            for (int64_t i = 0; i < l; ++i) {
                const S* grow = g + (ib * l + i) * f + h * dh;
                const S* arow = a + i * l;
                // dA = g @ v^T, then softmax pull-back to scores
                double dot = 0.0;
                for (int64_t j = 0; j < l; ++j) {
                    const S* vj = vv + (ib * l + j) * f + h * dh;
                    double da = 0.0;
                    for (int64_t d = 0; d < dh; ++d)
                        da += static_cast<double>(grow[d]) * static_cast<double>(vj[d]);
                    ds[static_cast<size_t>(j)] = da;
                    dot += da * static_cast<double>(arow[j]);
                }
                for (int64_t j = 0; j < l; ++j)
                    ds[static_cast<size_t>(j)] =
                        (ds[static_cast<size_t>(j)] - dot) * static_cast<double>(arow[j]) * inv_sqrt;
                if (nv) {
                    for (int64_t j = 0; j < l; ++j) {
                        S av = arow[j];
                        S* dvj = dv + (ib * l + j) * f + h * dh;
                        for (int64_t d = 0; d < dh; ++d) dvj[d] += av * grow[d];
                    }
                }
                if (nq) {
                    S* dqi = dq + (ib * l + i) * f + h * dh;
                    for (int64_t j = 0; j < l; ++j) {
                        double dsv = ds[static_cast<size_t>(j)];
                        const S* kj = kv + (ib * l + j) * f + h * dh;
                        for (int64_t d = 0; d < dh; ++d)
                            dqi[d] += static_cast<S>(dsv * static_cast<double>(kj[d]));
                    }
                }
                if (nk) {
                    const S* qi = qv + (ib * l + i) * f + h * dh;
                    for (int64_t j = 0; j < l; ++j) {
                        double dsv = ds[static_cast<size_t>(j)];
                        S* dkj = dk + (ib * l + j) * f + h * dh;
                        for (int64_t d = 0; d < dh; ++d)
                            dkj[d] += static_cast<S>(dsv * static_cast<double>(qi[d]));
                    }
                }
            }
        }
    });
}

}  // namespace ops
}  // namespace genodiff
