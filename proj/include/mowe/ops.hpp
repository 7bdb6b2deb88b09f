// Differentiable operations over Tensor. Every op validates shapes, checks
// outputs for non-finite values, and records its backward pass on the active
// tape when an input requires gradients.
#pragma once

#include <algorithm>
#include <cstring>

#include "mowe/tensor.hpp"

namespace mowe {

inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

inline void finite_guard(const Tensor& t, const char* op) {
    if (!finite_checks()) return;
    for (double v : t.vec())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
}

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// rows of a [..., D] tensor
inline int64_t row_count(const Tensor& t) {
    if (t.rank() < 1) throw ShapeError("expected rank >= 1");
    return t.size() / t.dim(t.rank() - 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require(same_shape(a.shape(), b.shape()),
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    finite_guard(out, "add");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require(same_shape(a.shape(), b.shape()),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    finite_guard(out, "sub");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require(same_shape(a.shape(), b.shape()),
                    "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    finite_guard(out, "mul");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bi->value[i];
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ai->value[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
    finite_guard(out, "scale");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, c] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i] * c;
        });
    }
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
    finite_guard(out, "add_scalar");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// bias broadcast over the rows of a [..., D] tensor
inline Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    detail::require(bias.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == bias.dim(0),
                    "add_rowwise: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
    int64_t d = bias.dim(0);
    int64_t rows = detail::row_count(a);
    Tensor out(a.shape());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) out[r * d + j] = a[r * d + j] + bias[j];
    finite_guard(out, "add_rowwise");
    if (tracing({&a, &bias})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = bias.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi, rows, d] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
            }
        });
    }
    return out;
}

// out[r,:] = a[r,:] * s[r]
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
    detail::require(a.rank() == 2 && s.rank() == 1 && a.dim(0) == s.dim(0),
                    "scale_rows: need [N x D] and [N], got " + shape_str(a.shape()) + " and " +
                        shape_str(s.shape()));
    int64_t n = a.dim(0), d = a.dim(1);
    Tensor out(a.shape());
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j) out[r * d + j] = a[r * d + j] * s[r];
    finite_guard(out, "scale_rows");
    if (tracing({&a, &s})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), si = s.impl(), oi = out.impl();
        Tape::active()->record([ai, si, oi, n, d] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (int64_t r = 0; r < n; ++r)
                    for (int64_t j = 0; j < d; ++j) ga[r * d + j] += go[r * d + j] * si->value[r];
            }
            if (si->requires_grad) {
                auto& gs = grad_of(si);
                for (int64_t r = 0; r < n; ++r) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < d; ++j) acc += go[r * d + j] * ai->value[r * d + j];
                    gs[r] += acc;
                }
            }
        });
    }
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    finite_guard(out, "relu");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t i = 0; i < oi->grad.size(); ++i)
                if (ai->value[i] > 0.0) ga[i] += oi->grad[i];
        });
    }
    return out;
}

// exact GELU: x * Phi(x)
inline Tensor gelu(const Tensor& a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.size(); ++i) {
        double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    finite_guard(out, "gelu");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (size_t i = 0; i < oi->grad.size(); ++i) {
                double x = ai->value[i];
                double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                ga[i] += oi->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
    Tensor out = Tensor::from_data({1}, {acc});
    finite_guard(out, "sum");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            double g = oi->grad[0];
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    int64_t n = a.size();
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// tokens [N x D] -> per-channel mean [D]
inline Tensor global_avg_pool(const Tensor& a) {
    detail::require(a.rank() == 2, "global_avg_pool: expected [N x D], got " + shape_str(a.shape()));
    int64_t n = a.dim(0), d = a.dim(1);
    Tensor out(Shape{static_cast<int>(d)});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < d; ++j) out[j] += a[r * d + j];
    for (int64_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
    finite_guard(out, "global_avg_pool");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, n, d] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < d; ++j) ga[r * d + j] += oi->grad[j] / static_cast<double>(n);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layout

inline Tensor reshape(const Tensor& a, Shape shape) {
    detail::require(numel(shape) == a.size(),
                    "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape), a.vec());
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor transpose2d(const Tensor& a) {
    detail::require(a.rank() == 2, "transpose2d: expected rank 2, got " + shape_str(a.shape()));
    int64_t n = a.dim(0), m = a.dim(1);
    Tensor out(Shape{static_cast<int>(m), static_cast<int>(n)});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out[j * n + i] = a[i * m + j];
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, n, m] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) ga[i * m + j] += oi->grad[j * n + i];
        });
    }
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ParamError("concat: empty input list");
    int rank = parts[0].rank();
    if (axis < 0) axis += rank;
    detail::require(axis >= 0 && axis < rank, "concat: axis out of range");
    Shape out_shape = parts[0].shape();
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        detail::require(p.rank() == rank, "concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis)
                detail::require(p.dim(i) == out_shape[static_cast<size_t>(i)], "concat: shape mismatch off-axis");
        axis_total += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);

    int64_t inner = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];
    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];

    Tensor out(out_shape);
    int64_t out_stride = axis_total * inner;
    int64_t offset = 0;
    std::vector<int64_t> offsets;
    for (const Tensor& p : parts) {
        offsets.push_back(offset);
        int64_t blk = p.dim(axis) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + o * out_stride + offset, p.data() + o * blk,
                        static_cast<size_t>(blk) * sizeof(double));
        offset += blk;
    }

    bool any_grad = false;
    for (const Tensor& p : parts)
        if (p.requires_grad()) any_grad = true;
    if (Tape::active() && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        std::vector<int64_t> blks;
        for (const Tensor& p : parts) {
            impls.push_back(p.impl());
            blks.push_back(p.dim(axis) * inner);
        }
        auto oi = out.impl();
        Tape::active()->record([impls, blks, offsets, oi, outer, out_stride] {
            if (!has_grad(oi)) return;
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                if (!impls[pi]->requires_grad) continue;
                auto& g = grad_of(impls[pi]);
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < blks[pi]; ++i)
                        g[o * blks[pi] + i] += oi->grad[o * out_stride + offsets[pi] + i];
            }
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    detail::require(a.rank() == 2, "slice_cols: expected rank 2");
    int64_t n = a.dim(0), d = a.dim(1);
    detail::require(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: bad column range");
    int64_t w = c1 - c0;
    Tensor out(Shape{static_cast<int>(n), static_cast<int>(w)});
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < w; ++j) out[r * w + j] = a[r * d + c0 + j];
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, n, d, w, c0] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < w; ++j) ga[r * d + c0 + j] += oi->grad[r * w + j];
        });
    }
    return out;
}

inline Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    detail::require(a.rank() == 2, "gather_rows: expected rank 2");
    int64_t n = a.dim(0), d = a.dim(1);
    for (int i : idx)
        if (i < 0 || i >= n) throw ParamError("gather_rows: index out of range");
    Tensor out(Shape{static_cast<int>(idx.size()), static_cast<int>(d)});
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + r * d, a.data() + static_cast<int64_t>(idx[r]) * d,
                    static_cast<size_t>(d) * sizeof(double));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, idx, d] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t r = 0; r < idx.size(); ++r)
                for (int64_t j = 0; j < d; ++j) ga[static_cast<int64_t>(idx[r]) * d + j] += oi->grad[r * d + j];
        });
    }
    return out;
}

// out = base with rows[i] added at row idx[i]
inline Tensor scatter_add_rows(const Tensor& base, const std::vector<int>& idx, const Tensor& rows) {
    detail::require(base.rank() == 2 && rows.rank() == 2 && base.dim(1) == rows.dim(1),
                    "scatter_add_rows: shape mismatch");
    detail::require(static_cast<int>(idx.size()) == rows.dim(0), "scatter_add_rows: index count mismatch");
    int64_t n = base.dim(0), d = base.dim(1);
    for (int i : idx)
        if (i < 0 || i >= n) throw ParamError("scatter_add_rows: index out of range");
    Tensor out = Tensor::from_data(base.shape(), base.vec());
    for (size_t r = 0; r < idx.size(); ++r)
        for (int64_t j = 0; j < d; ++j) out[static_cast<int64_t>(idx[r]) * d + j] += rows[r * d + j];
    finite_guard(out, "scatter_add_rows");
    if (tracing({&base, &rows})) {
        out.set_requires_grad(true);
        auto bi = base.impl(), ri = rows.impl(), oi = out.impl();
        Tape::active()->record([bi, ri, oi, idx, d] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
            if (ri->requires_grad) {
                auto& gr = grad_of(ri);
                for (size_t r = 0; r < idx.size(); ++r)
                    for (int64_t j = 0; j < d; ++j) gr[r * d + j] += go[static_cast<int64_t>(idx[r]) * d + j];
            }
        });
    }
    return out;
}

// picks a[flat_idx[i]] into a vector tensor
inline Tensor gather_elems(const Tensor& a, const std::vector<int64_t>& flat_idx) {
    for (int64_t i : flat_idx)
        if (i < 0 || i >= a.size()) throw ParamError("gather_elems: index out of range");
    Tensor out(Shape{static_cast<int>(flat_idx.size())});
    for (size_t r = 0; r < flat_idx.size(); ++r) out[r] = a[flat_idx[r]];
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, flat_idx] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t r = 0; r < flat_idx.size(); ++r) ga[flat_idx[r]] += oi->grad[r];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2,
                    "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    detail::require(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                              " vs " + shape_str(b.shape()));
    int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out(Shape{static_cast<int>(n), static_cast<int>(m)});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (int64_t kk = 0; kk < k; ++kk) {
            double av = pa[i * k + kk];
            const double* brow = pb + kk * m;
            for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    finite_guard(out, "matmul");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi, n, k, m] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                // dA = dC * B^T
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = go.data() + i * m;
                        const double* brow = bi->value.data() + kk * m;
                        for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                // dB = A^T * dC
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t kk = 0; kk < k; ++kk) {
                        double av = ai->value[i * k + kk];
                        const double* grow = go.data() + i * m;
                        double* gbrow = gb.data() + kk * m;
                        for (int64_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / Top-K gating

inline Tensor softmax(const Tensor& a, int axis = -1) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
    int64_t extent = a.dim(axis);
    if (extent == 0) throw ShapeError("softmax: empty axis");
    int64_t inner = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= a.dim(i);
    int64_t outer = a.size() / (extent * inner);

    Tensor out(a.shape());
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            int64_t base = o * extent * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t e = 0; e < extent; ++e) mx = std::max(mx, a[base + e * inner]);
            if (!std::isfinite(mx)) throw NumericError("softmax: all entries are -inf or NaN along axis");
            double denom = 0.0;
            for (int64_t e = 0; e < extent; ++e) {
                double ev = std::exp(a[base + e * inner] - mx);
                out[base + e * inner] = ev;
                denom += ev;
            }
            for (int64_t e = 0; e < extent; ++e) out[base + e * inner] /= denom;
        }
    finite_guard(out, "softmax");
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, outer, inner, extent] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            const auto& go = oi->grad;
            const auto& y = oi->value;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    int64_t base = o * extent * inner + in;
                    double dot = 0.0;
                    for (int64_t e = 0; e < extent; ++e) dot += go[base + e * inner] * y[base + e * inner];
                    for (int64_t e = 0; e < extent; ++e)
                        ga[base + e * inner] += y[base + e * inner] * (go[base + e * inner] - dot);
                }
        });
    }
    return out;
}

// k largest entries per row kept (ties to the lowest index), rest masked to
// -inf so a following softmax zeroes them. Gradient flows only through the
// kept entries; the selection itself is treated as constant.
inline std::vector<int> top_k_row_indices(const double* row, int64_t m, int k) {
    std::vector<int> idx(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int x, int y) {
        if (row[x] != row[y]) return row[x] > row[y];
        return x < y;
    });
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline Tensor top_k_mask(const Tensor& a, int k) {
    detail::require(a.rank() >= 1, "top_k_mask: expected rank >= 1");
    int64_t m = a.dim(a.rank() - 1);
    if (k < 1 || k > m) throw ParamError("top_k_mask: k=" + std::to_string(k) + " out of range for last axis " +
                                         std::to_string(m));
    int64_t rows = a.size() / m;
    for (double v : a.vec())
        if (!std::isfinite(v)) throw NumericError("top_k_mask: non-finite input");

    Tensor out(a.shape());
    auto kept = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(a.size()), 0);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * m;
        std::vector<int> sel = top_k_row_indices(row, m, k);
        double* orow = out.data() + r * m;
        for (int64_t j = 0; j < m; ++j) orow[j] = ninf;
        for (int j : sel) {
            orow[j] = row[j];
            (*kept)[static_cast<size_t>(r * m + j)] = 1;
        }
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record([ai, oi, kept] {
            if (!has_grad(oi) || !ai->requires_grad) return;
            auto& ga = grad_of(ai);
            for (size_t i = 0; i < oi->grad.size(); ++i)
                if ((*kept)[i]) ga[i] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    detail::require(a.rank() >= 1, "layer_norm: expected rank >= 1");
    int64_t d = a.dim(a.rank() - 1);
    detail::require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
                    "layer_norm: gamma/beta must be [D]");
    if (eps <= 0.0) throw ParamError("layer_norm: eps must be positive");
    int64_t rows = a.size() / d;

    Tensor out(a.shape());
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            double xh = (row[j] - mu) * inv;
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            out[r * d + j] = xh * gamma[j] + beta[j];
        }
    }
    finite_guard(out, "layer_norm");
    if (tracing({&a, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        Tape::active()->record([ai, gi, bi, oi, xhat, inv_std, rows, d] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            if (gi->requires_grad) {
                auto& gg = grad_of(gi);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gg[j] += go[r * d + j] * (*xhat)[static_cast<size_t>(r * d + j)];
            }
            if (bi->requires_grad) {
                auto& gb = grad_of(bi);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
            }
            if (ai->requires_grad) {
                auto& ga = grad_of(ai);
                for (int64_t r = 0; r < rows; ++r) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        double gj = go[r * d + j] * gi->value[j];
                        mean_g += gj;
                        mean_gx += gj * (*xhat)[static_cast<size_t>(r * d + j)];
                    }
                    mean_g /= static_cast<double>(d);
                    mean_gx /= static_cast<double>(d);
                    double inv = (*inv_std)[static_cast<size_t>(r)];
                    for (int64_t j = 0; j < d; ++j) {
                        double gj = go[r * d + j] * gi->value[j];
                        double xh = (*xhat)[static_cast<size_t>(r * d + j)];
                        ga[r * d + j] += inv * (gj - mean_g - xh * mean_gx);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation with zero padding)

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1, int padding = 0,
                     int groups = 1) {
    detail::require(x.rank() == 3 && w.rank() == 4, "conv2d: expected x [C x H x W] and w [O x C/g x kh x kw]");
    int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
    int cout = w.dim(0), icg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    if (padding < 0) throw ParamError("conv2d: padding must be >= 0");
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ShapeError("conv2d: groups must divide input and output channels");
    detail::require(icg == cin / groups, "conv2d: weight channel extent disagrees with groups");
    detail::require(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bias must be [C_out]");
    if (kh > h + 2 * padding || kw > ww + 2 * padding)
        throw ShapeError("conv2d: kernel larger than padded input");

    int ho = (h + 2 * padding - kh) / stride + 1;
    int wo = (ww + 2 * padding - kw) / stride + 1;
    int ocg = cout / groups;

    Tensor out(Shape{cout, ho, wo});
    const double* px = x.data();
    const double* pw = w.data();
    double* po = out.data();
    for (int oc = 0; oc < cout; ++oc) {
        int g = oc / ocg;
        double b = bias[oc];
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = b;
                for (int icr = 0; icr < icg; ++icr) {
                    int ic = g * icg + icr;
                    const double* xc = px + static_cast<int64_t>(ic) * h * ww;
                    const double* wc = pw + ((static_cast<int64_t>(oc) * icg + icr) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride + ky - padding;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= ww) continue;
                            acc += xc[static_cast<int64_t>(iy) * ww + ix] * wc[static_cast<int64_t>(ky) * kw + kx];
                        }
                    }
                }
                po[(static_cast<int64_t>(oc) * ho + oy) * wo + ox] = acc;
            }
    }
    finite_guard(out, "conv2d");
    if (tracing({&x, &w, &bias})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), bi = bias.impl(), oi = out.impl();
        Tape::active()->record([xi, wi, bi, oi, cin, h, ww, cout, icg, kh, kw, stride, padding, ho, wo, ocg] {
            if (!has_grad(oi)) return;
            const auto& go = oi->grad;
            const bool need_x = xi->requires_grad;
            const bool need_w = wi->requires_grad;
            const bool need_b = bi->requires_grad;
            auto* gx = need_x ? &grad_of(xi) : nullptr;
            auto* gw = need_w ? &grad_of(wi) : nullptr;
            auto* gb = need_b ? &grad_of(bi) : nullptr;
            for (int oc = 0; oc < cout; ++oc) {
                int g = oc / ocg;
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        double gv = go[(static_cast<int64_t>(oc) * ho + oy) * wo + ox];
                        if (gv == 0.0) continue;
                        if (need_b) (*gb)[static_cast<size_t>(oc)] += gv;
                        if (!need_x && !need_w) continue;
                        for (int icr = 0; icr < icg; ++icr) {
                            int ic = g * icg + icr;
                            for (int ky = 0; ky < kh; ++ky) {
                                int iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int ix = ox * stride + kx - padding;
                                    if (ix < 0 || ix >= ww) continue;
                                    int64_t xoff = (static_cast<int64_t>(ic) * h + iy) * ww + ix;
                                    int64_t woff = ((static_cast<int64_t>(oc) * icg + icr) * kh + ky) * kw + kx;
                                    if (need_w) (*gw)[static_cast<size_t>(woff)] += gv * xi->value[static_cast<size_t>(xoff)];
                                    if (need_x) (*gx)[static_cast<size_t>(xoff)] += gv * wi->value[static_cast<size_t>(woff)];
                                }
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patch <-> token layout (non-overlapping patches, raster order; columns
// ordered channel-major then py, px)

inline Tensor extract_patches(const Tensor& x, int p) {
    detail::require(x.rank() == 3, "extract_patches: expected [C x H x W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw ShapeError("extract_patches: patch size must divide spatial extents");
    int gh = h / p, gw = w / p;
    int n = gh * gw, d = c * p * p;
    Tensor out(Shape{n, d});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int64_t row = static_cast<int64_t>(gy) * gw + gx;
            for (int ch = 0; ch < c; ++ch)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        out[row * d + (static_cast<int64_t>(ch) * p + py) * p + px] =
                            x[(static_cast<int64_t>(ch) * h + gy * p + py) * w + gx * p + px];
        }
    if (tracing({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape::active()->record([xi, oi, c, h, w, p, gh, gw, d] {
            if (!has_grad(oi) || !xi->requires_grad) return;
            auto& gx_ = grad_of(xi);
            for (int gy = 0; gy < gh; ++gy)
                for (int gx = 0; gx < gw; ++gx) {
                    int64_t row = static_cast<int64_t>(gy) * gw + gx;
                    for (int ch = 0; ch < c; ++ch)
                        for (int py = 0; py < p; ++py)
                            for (int px = 0; px < p; ++px)
                                gx_[(static_cast<int64_t>(ch) * h + gy * p + py) * w + gx * p + px] +=
                                    oi->grad[row * d + (static_cast<int64_t>(ch) * p + py) * p + px];
                }
        });
    }
    return out;
}

inline Tensor fold_patches(const Tensor& t, int c, int h, int w, int p) {
    detail::require(t.rank() == 2, "fold_patches: expected [N x (C*p*p)]");
    if (p < 1 || h % p != 0 || w % p != 0) throw ShapeError("fold_patches: patch size must divide extents");
    int gh = h / p, gw = w / p;
    detail::require(t.dim(0) == gh * gw && t.dim(1) == c * p * p,
                    "fold_patches: token shape " + shape_str(t.shape()) + " does not match target");
    int d = c * p * p;
    Tensor out(Shape{c, h, w});
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int64_t row = static_cast<int64_t>(gy) * gw + gx;
            for (int ch = 0; ch < c; ++ch)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        out[(static_cast<int64_t>(ch) * h + gy * p + py) * w + gx * p + px] =
                            t[row * d + (static_cast<int64_t>(ch) * p + py) * p + px];
        }
    if (tracing({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl(), oi = out.impl();
        Tape::active()->record([ti, oi, c, h, w, p, gh, gw, d] {
            if (!has_grad(oi) || !ti->requires_grad) return;
            auto& gt = grad_of(ti);
            for (int gy = 0; gy < gh; ++gy)
                for (int gx = 0; gx < gw; ++gx) {
                    int64_t row = static_cast<int64_t>(gy) * gw + gx;
                    for (int ch = 0; ch < c; ++ch)
                        for (int py = 0; py < p; ++py)
                            for (int px = 0; px < p; ++px)
                                gt[row * d + (static_cast<int64_t>(ch) * p + py) * p + px] +=
                                    oi->grad[(static_cast<int64_t>(ch) * h + gy * p + py) * w + gx * p + px];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses

inline Tensor cross_entropy(const Tensor& logits, int label) {
    detail::require(logits.rank() == 1, "cross_entropy: expected logits [K]");
    int64_t k = logits.dim(0);
    if (label < 0 || label >= k) throw ParamError("cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < k; ++i) mx = std::max(mx, logits[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < k; ++i) denom += std::exp(logits[i] - mx);
    double loss = std::log(denom) + mx - logits[label];
    Tensor out = Tensor::from_data({1}, {loss});
    finite_guard(out, "cross_entropy");
    if (tracing({&logits})) {
        out.set_requires_grad(true);
        auto li = logits.impl(), oi = out.impl();
        Tape::active()->record([li, oi, k, label, mx, denom] {
            if (!has_grad(oi) || !li->requires_grad) return;
            auto& gl = grad_of(li);
            double g = oi->grad[0];
            for (int64_t i = 0; i < k; ++i) {
                double p = std::exp(li->value[static_cast<size_t>(i)] - mx) / denom;
                gl[static_cast<size_t>(i)] += g * (p - (i == label ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

// mean per-pixel cross-entropy for [K x H x W] logits against integer labels
inline Tensor cross_entropy_map(const Tensor& logits, const std::vector<int>& labels) {
    detail::require(logits.rank() == 3, "cross_entropy_map: expected [K x H x W]");
    int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    int64_t npix = static_cast<int64_t>(h) * w;
    if (static_cast<int64_t>(labels.size()) != npix) throw ShapeError("cross_entropy_map: label count mismatch");
    for (int lab : labels)
        if (lab < 0 || lab >= k) throw ParamError("cross_entropy_map: label out of range");

    double total = 0.0;
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(logits.size()));
    for (int64_t px = 0; px < npix; ++px) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) mx = std::max(mx, logits[c * npix + px]);
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(logits[c * npix + px] - mx);
        for (int c = 0; c < k; ++c)
            (*probs)[static_cast<size_t>(c * npix + px)] = std::exp(logits[c * npix + px] - mx) / denom;
        total += std::log(denom) + mx - logits[static_cast<int64_t>(labels[static_cast<size_t>(px)]) * npix + px];
    }
    Tensor out = Tensor::from_data({1}, {total / static_cast<double>(npix)});
    finite_guard(out, "cross_entropy_map");
    if (tracing({&logits})) {
        out.set_requires_grad(true);
        auto li = logits.impl(), oi = out.impl();
        Tape::active()->record([li, oi, probs, labels, k, npix] {
            if (!has_grad(oi) || !li->requires_grad) return;
            auto& gl = grad_of(li);
            double g = oi->grad[0] / static_cast<double>(npix);
            for (int64_t px = 0; px < npix; ++px)
                for (int c = 0; c < k; ++c) {
                    double p = (*probs)[static_cast<size_t>(c * npix + px)];
                    gl[static_cast<size_t>(c * npix + px)] +=
                        g * (p - (c == labels[static_cast<size_t>(px)] ? 1.0 : 0.0));
                }
        });
    }
    return out;
}

inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
    detail::require(same_shape(a.shape(), b.shape()), "l1_loss: shape mismatch");
    int64_t n = a.size();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) total += std::abs(a[i] - b[i]);
    Tensor out = Tensor::from_data({1}, {total / static_cast<double>(n)});
    finite_guard(out, "l1_loss");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi, n] {
            if (!has_grad(oi)) return;
            double g = oi->grad[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                double d = ai->value[static_cast<size_t>(i)] - bi->value[static_cast<size_t>(i)];
                double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (ai->requires_grad) grad_of(ai)[static_cast<size_t>(i)] += g * s;
                if (bi->requires_grad) grad_of(bi)[static_cast<size_t>(i)] -= g * s;
            }
        });
    }
    return out;
}

inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
    detail::require(same_shape(a.shape(), b.shape()), "mse_loss: shape mismatch");
    int64_t n = a.size();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a[i] - b[i];
        total += d * d;
    }
    Tensor out = Tensor::from_data({1}, {total / static_cast<double>(n)});
    finite_guard(out, "mse_loss");
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record([ai, bi, oi, n] {
            if (!has_grad(oi)) return;
            double g = 2.0 * oi->grad[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                double d = ai->value[static_cast<size_t>(i)] - bi->value[static_cast<size_t>(i)];
                if (ai->requires_grad) grad_of(ai)[static_cast<size_t>(i)] += g * d;
                if (bi->requires_grad) grad_of(bi)[static_cast<size_t>(i)] -= g * d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Value-level helpers (no gradient participation)

inline std::vector<double> softmax_values(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (double& x : out) x /= denom;
    return out;
}

inline int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Tensor clamp01(const Tensor& a) {
    Tensor out = a.detach();
    for (double& v : out.vec()) v = clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace mowe
