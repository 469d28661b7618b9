#pragma once

// Reverse-mode autodiff over dense tensors.
//
// A Tape records every operation in creation order (which is topological),
// and backward() replays the trace once in reverse. Leaves created with
// requires_grad=false (frozen parameters, inputs, constants) never get a
// gradient buffer; everything reachable from them stays gradient-free unless
// another parent requires gradients. Tensors are immutable once pushed.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stdf/error.hpp"
#include "stdf/tensor.hpp"

namespace stdf {

namespace detail {

// C(p×r) += A(p×q) · B(q×r)
template <typename S>
void mm_nn(const S* a, const S* b, S* c, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        const S* arow = a + i * q;
        S* crow = c + i * r;
        for (int64_t k = 0; k < q; ++k) {
            S aik = arow[k];
            const S* brow = b + k * r;
            for (int64_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C(p×r) += A(p×q) · B(r×q)^T
template <typename S>
void mm_nt(const S* a, const S* b, S* c, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        const S* arow = a + i * q;
        S* crow = c + i * r;
        for (int64_t j = 0; j < r; ++j) {
            const S* brow = b + j * q;
            S acc = S(0);
            for (int64_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C(p×r) += A(q×p)^T · B(q×r)
template <typename S>
void mm_tn(const S* a, const S* b, S* c, int64_t p, int64_t q, int64_t r) {
    for (int64_t k = 0; k < q; ++k) {
        const S* arow = a + k * p;
        const S* brow = b + k * r;
        for (int64_t i = 0; i < p; ++i) {
            S aki = arow[i];
            S* crow = c + i * r;
            for (int64_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
        }
    }
}

}  // namespace detail

template <typename S>
class Tape;

// Records which leaf id holds which named parameter, so gradients can be
// mapped back to parameter storage after backward().
template <typename S>
using BindLog = std::vector<std::pair<std::string, int32_t>>;

template <typename S>
class Tape {
public:
    using Id = int32_t;

    struct Node {
        TensorData<S> value;
        std::unique_ptr<TensorData<S>> grad;  // present iff requires_grad
        bool requires_grad = false;
        const char* op = "leaf";
        std::function<void(Tape&)> backward;  // empty for leaves
    };

    Id leaf(TensorData<S> v, bool requires_grad) {
        return push(std::move(v), requires_grad, "leaf", {});
    }

    Id constant(TensorData<S> v) { return leaf(std::move(v), false); }

    Id scalar_constant(S v) { return constant(TensorData<S>(Shape{1}, std::vector<S>{v})); }

    const TensorData<S>& value(Id id) const { return node(id).value; }

    // nullptr when the tensor is frozen / gradient-free
    const TensorData<S>* grad(Id id) const {
        return node(id).grad ? node(id).grad.get() : nullptr;
    }

    // for custom-op backward closures
    void accumulate_grad(Id id, const TensorData<S>& contribution) {
        if (!node(id).grad) return;
        auto& g = *node(id).grad;
        for (int64_t i = 0; i < contribution.size(); ++i) g[i] += contribution[i];
    }

    size_t size() const { return nodes_.size(); }

    // -- elementwise ---------------------------------------------------------

    Id add(Id a, Id b) { return binary(a, b, "add", BinOp::Add); }
    Id sub(Id a, Id b) { return binary(a, b, "sub", BinOp::Sub); }
    Id mul(Id a, Id b) { return binary(a, b, "mul", BinOp::Mul); }

    Id scale(Id x, S c) {
        TensorData<S> out = value(x);
        for (auto& v : out.data) v *= c;
        Id xid = x;
        Id out_id = push(std::move(out), node(x).requires_grad, "scale", {});
        set_backward(out_id, [this, xid, out_id, c](Tape&) {
            if (!node(xid).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gx = *node(xid).grad;
            for (int64_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        });
        return out_id;
    }

    Id relu(Id x) {
        TensorData<S> out = value(x);
        for (auto& v : out.data) v = v > S(0) ? v : S(0);
        Id out_id = push(std::move(out), node(x).requires_grad, "relu", {});
        set_backward(out_id, [this, x, out_id](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            const auto& xv = node(x).value;
            auto& gx = *node(x).grad;
            for (int64_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > S(0) ? g[i] : S(0);
        });
        return out_id;
    }

    Id silu(Id x) {
        const auto& xv = value(x);
        TensorData<S> out(xv.shape);
        for (int64_t i = 0; i < xv.size(); ++i) {
            S sig = S(1) / (S(1) + std::exp(-xv[i]));
            out[i] = xv[i] * sig;
        }
        Id out_id = push(std::move(out), node(x).requires_grad, "silu", {});
        set_backward(out_id, [this, x, out_id](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            const auto& xv = node(x).value;
            auto& gx = *node(x).grad;
            for (int64_t i = 0; i < g.size(); ++i) {
                S sig = S(1) / (S(1) + std::exp(-xv[i]));
                gx[i] += g[i] * sig * (S(1) + xv[i] * (S(1) - sig));
            }
        });
        return out_id;
    }

    Id abs_val(Id x) {
        TensorData<S> out = value(x);
        for (auto& v : out.data) v = std::abs(v);
        Id out_id = push(std::move(out), node(x).requires_grad, "abs", {});
        set_backward(out_id, [this, x, out_id](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            const auto& xv = node(x).value;
            auto& gx = *node(x).grad;
            for (int64_t i = 0; i < g.size(); ++i) {
                gx[i] += xv[i] > S(0) ? g[i] : (xv[i] < S(0) ? -g[i] : S(0));
            }
        });
        return out_id;
    }

    // -- reductions ----------------------------------------------------------

    Id sum_all(Id x) {
        S acc = S(0);
        for (S v : value(x).data) acc += v;
        Id out_id = push(TensorData<S>(Shape{1}, std::vector<S>{acc}), node(x).requires_grad,
                         "sum_all", {});
        set_backward(out_id, [this, x, out_id](Tape&) {
            if (!node(x).grad) return;
            S g = (*node(out_id).grad)[0];
            for (auto& v : node(x).grad->data) v += g;
        });
        return out_id;
    }

    Id mean_all(Id x) {
        int64_t n = value(x).size();
        S acc = S(0);
        for (S v : value(x).data) acc += v;
        acc /= static_cast<S>(n);
        Id out_id = push(TensorData<S>(Shape{1}, std::vector<S>{acc}), node(x).requires_grad,
                         "mean_all", {});
        set_backward(out_id, [this, x, out_id, n](Tape&) {
            if (!node(x).grad) return;
            S g = (*node(out_id).grad)[0] / static_cast<S>(n);
            for (auto& v : node(x).grad->data) v += g;
        });
        return out_id;
    }

    // -- shape ops -----------------------------------------------------------

    Id reshape(Id x, Shape new_shape) {
        if (numel(new_shape) != value(x).size()) {
            throw ShapeError("reshape: cannot view " + shape_str(value(x).shape) + " as " +
                             shape_str(new_shape));
        }
        TensorData<S> out(new_shape, value(x).data);
        Id out_id = push(std::move(out), node(x).requires_grad, "reshape", {});
        set_backward(out_id, [this, x, out_id](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gx = *node(x).grad;
            for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
        return out_id;
    }

    Id permute3(Id x, std::array<int, 3> perm) {
        const auto& xv = value(x);
        if (xv.rank() != 3) throw ShapeError("permute3: expected rank 3, got " + shape_str(xv.shape));
        std::array<bool, 3> seen{false, false, false};
        for (int p : perm) {
            if (p < 0 || p > 2 || seen[p]) throw ConfigError("permute3: invalid permutation");
            seen[p] = true;
        }
        Shape os{xv.shape[perm[0]], xv.shape[perm[1]], xv.shape[perm[2]]};
        TensorData<S> out(os);
        std::array<int64_t, 3> in_stride{xv.shape[1] * xv.shape[2], xv.shape[2], 1};
        int64_t idx = 0;
        for (int64_t i = 0; i < os[0]; ++i)
            for (int64_t j = 0; j < os[1]; ++j)
                for (int64_t k = 0; k < os[2]; ++k)
                    out[idx++] = xv[i * in_stride[perm[0]] + j * in_stride[perm[1]] +
                                    k * in_stride[perm[2]]];
        Id out_id = push(std::move(out), node(x).requires_grad, "permute3", {});
        set_backward(out_id, [this, x, out_id, perm, in_stride](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gx = *node(x).grad;
            const Shape& os = node(out_id).value.shape;
            int64_t idx = 0;
            for (int64_t i = 0; i < os[0]; ++i)
                for (int64_t j = 0; j < os[1]; ++j)
                    for (int64_t k = 0; k < os[2]; ++k)
                        gx[i * in_stride[perm[0]] + j * in_stride[perm[1]] +
                           k * in_stride[perm[2]]] += g[idx++];
        });
        return out_id;
    }

    Id transpose_last2(Id x) {
        const auto& xv = value(x);
        if (xv.rank() == 2) {
            Shape os{xv.shape[1], xv.shape[0]};
            TensorData<S> out(os);
            for (int64_t i = 0; i < xv.shape[0]; ++i)
                for (int64_t j = 0; j < xv.shape[1]; ++j) out.at2(j, i) = xv.at2(i, j);
            Id out_id = push(std::move(out), node(x).requires_grad, "transpose", {});
            set_backward(out_id, [this, x, out_id](Tape&) {
                if (!node(x).grad) return;
                const auto& g = *node(out_id).grad;
                auto& gx = *node(x).grad;
                const Shape& xs = node(x).value.shape;
                for (int64_t i = 0; i < xs[0]; ++i)
                    for (int64_t j = 0; j < xs[1]; ++j) gx[i * xs[1] + j] += g.at2(j, i);
            });
            return out_id;
        }
        if (xv.rank() == 3) return permute3(x, {0, 2, 1});
        throw ShapeError("transpose_last2: expected rank 2 or 3, got " + shape_str(xv.shape));
    }

    Id concat_last(const std::vector<Id>& parts) {
        if (parts.empty()) throw UsageError("concat_last: no inputs");
        const Shape& first = value(parts[0]).shape;
        int64_t lead = numel(first) / first.back();
        int64_t width = 0;
        bool rg = false;
        for (Id p : parts) {
            const Shape& s = value(p).shape;
            if (s.size() != first.size() ||
                !std::equal(s.begin(), s.end() - 1, first.begin())) {
                throw ShapeError("concat_last: leading extents differ: " + shape_str(first) +
                                 " vs " + shape_str(s));
            }
            width += s.back();
            rg = rg || node(p).requires_grad;
        }
        Shape os = first;
        os.back() = width;
        TensorData<S> out(os);
        int64_t col = 0;
        for (Id p : parts) {
            const auto& pv = value(p);
            int64_t w = pv.shape.back();
            for (int64_t row = 0; row < lead; ++row)
                for (int64_t j = 0; j < w; ++j) out[row * width + col + j] = pv[row * w + j];
            col += w;
        }
        std::vector<Id> part_ids = parts;
        Id out_id = push(std::move(out), rg, "concat_last", {});
        set_backward(out_id, [this, part_ids, out_id, lead, width](Tape&) {
            const auto& g = *node(out_id).grad;
            int64_t col = 0;
            for (Id p : part_ids) {
                int64_t w = node(p).value.shape.back();
                if (node(p).grad) {
                    auto& gp = *node(p).grad;
                    for (int64_t row = 0; row < lead; ++row)
                        for (int64_t j = 0; j < w; ++j) gp[row * w + j] += g[row * width + col + j];
                }
                col += w;
            }
        });
        return out_id;
    }

    Id slice_last(Id x, int64_t start, int64_t len) {
        const auto& xv = value(x);
        int64_t width = xv.shape.back();
        if (start < 0 || len <= 0 || start + len > width) {
            throw IndexError("slice_last: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") outside width " +
                             std::to_string(width));
        }
        Shape os = xv.shape;
        os.back() = len;
        int64_t lead = numel(xv.shape) / width;
        TensorData<S> out(os);
        for (int64_t row = 0; row < lead; ++row)
            for (int64_t j = 0; j < len; ++j) out[row * len + j] = xv[row * width + start + j];
        Id out_id = push(std::move(out), node(x).requires_grad, "slice_last", {});
        set_backward(out_id, [this, x, out_id, start, len, width, lead](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gx = *node(x).grad;
            for (int64_t row = 0; row < lead; ++row)
                for (int64_t j = 0; j < len; ++j) gx[row * width + start + j] += g[row * len + j];
        });
        return out_id;
    }

    // x[m,k] replicated across a new middle axis -> [m,n,k]
    Id broadcast_nodes(Id x, int64_t n) {
        const auto& xv = value(x);
        if (xv.rank() != 2) throw ShapeError("broadcast_nodes: expected rank 2, got " +
                                             shape_str(xv.shape));
        int64_t m = xv.shape[0], k = xv.shape[1];
        TensorData<S> out(Shape{m, n, k});
        for (int64_t t = 0; t < m; ++t)
            for (int64_t j = 0; j < n; ++j)
                for (int64_t c = 0; c < k; ++c) out.at3(t, j, c) = xv.at2(t, c);
        Id out_id = push(std::move(out), node(x).requires_grad, "broadcast_nodes", {});
        set_backward(out_id, [this, x, out_id, m, n, k](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gx = *node(x).grad;
            for (int64_t t = 0; t < m; ++t)
                for (int64_t j = 0; j < n; ++j)
                    for (int64_t c = 0; c < k; ++c) gx[t * k + c] += g[(t * n + j) * k + c];
        });
        return out_id;
    }

    // out[t,:] = table[idx[t],:]; gradient flows only to indexed rows
    Id lookup_rows(Id table, std::vector<int64_t> idx) {
        const auto& tv = value(table);
        if (tv.rank() != 2) throw ShapeError("lookup_rows: table must be rank 2, got " +
                                             shape_str(tv.shape));
        int64_t vocab = tv.shape[0], k = tv.shape[1];
        for (int64_t i : idx) {
            if (i < 0 || i >= vocab) {
                throw IndexError("lookup_rows: index " + std::to_string(i) +
                                 " outside vocabulary of size " + std::to_string(vocab));
            }
        }
        int64_t m = static_cast<int64_t>(idx.size());
        TensorData<S> out(Shape{m, k});
        for (int64_t t = 0; t < m; ++t)
            for (int64_t c = 0; c < k; ++c) out.at2(t, c) = tv.at2(idx[t], c);
        Id out_id = push(std::move(out), node(table).requires_grad, "lookup_rows", {});
        set_backward(out_id, [this, table, out_id, idx = std::move(idx), k](Tape&) {
            if (!node(table).grad) return;
            const auto& g = *node(out_id).grad;
            auto& gt = *node(table).grad;
            for (size_t t = 0; t < idx.size(); ++t)
                for (int64_t c = 0; c < k; ++c)
                    gt[idx[t] * k + c] += g[static_cast<int64_t>(t) * k + c];
        });
        return out_id;
    }

    // -- matmul --------------------------------------------------------------

    // Supported: [p,q]x[q,r], [B,p,q]x[q,r], [B,p,q]x[B,q,r].
    Id matmul(Id a, Id b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        auto bad = [&]() -> ShapeError {
            return ShapeError("matmul: cannot multiply a" + shape_str(av.shape) + " by b" +
                              shape_str(bv.shape));
        };
        if (av.rank() < 2 || bv.rank() < 2 || av.rank() > 3 || bv.rank() > 3 ||
            bv.rank() > av.rank()) {
            throw bad();
        }
        int64_t q = av.shape[av.rank() - 1];
        if (bv.shape[bv.rank() - 2] != q) throw bad();
        int64_t p = av.shape[av.rank() - 2];
        int64_t r = bv.shape[bv.rank() - 1];
        int64_t batch = av.rank() == 3 ? av.shape[0] : 1;
        bool b_batched = bv.rank() == 3;
        if (b_batched && bv.shape[0] != batch) throw bad();

        Shape os = av.rank() == 3 ? Shape{batch, p, r} : Shape{p, r};
        TensorData<S> out(os);
        for (int64_t bi = 0; bi < batch; ++bi) {
            detail::mm_nn(av.data.data() + bi * p * q,
                          bv.data.data() + (b_batched ? bi * q * r : 0),
                          out.data.data() + bi * p * r, p, q, r);
        }
        bool rg = node(a).requires_grad || node(b).requires_grad;
        Id out_id = push(std::move(out), rg, "matmul", {});
        set_backward(out_id, [this, a, b, out_id, p, q, r, batch, b_batched](Tape&) {
            const auto& g = *node(out_id).grad;
            const auto& av = node(a).value;
            const auto& bv = node(b).value;
            if (node(a).grad) {
                auto& ga = *node(a).grad;
                for (int64_t bi = 0; bi < batch; ++bi) {
                    detail::mm_nt(g.data.data() + bi * p * r,
                                  bv.data.data() + (b_batched ? bi * q * r : 0),
                                  ga.data.data() + bi * p * q, p, r, q);
                }
            }
            if (node(b).grad) {
                auto& gb = *node(b).grad;
                for (int64_t bi = 0; bi < batch; ++bi) {
                    detail::mm_tn(av.data.data() + bi * p * q, g.data.data() + bi * p * r,
                                  gb.data.data() + (b_batched ? bi * q * r : 0), q, p, r);
                }
            }
        });
        return out_id;
    }

    // -- softmax / normalization ---------------------------------------------

    Id softmax_last(Id x) {
        const auto& xv = value(x);
        int64_t k = xv.shape.back();
        int64_t rows = xv.size() / k;
        TensorData<S> out(xv.shape);
        for (int64_t row = 0; row < rows; ++row) {
            const S* in = xv.data.data() + row * k;
            S* o = out.data.data() + row * k;
            S mx = in[0];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
            S sum = S(0);
            for (int64_t j = 0; j < k; ++j) {
                o[j] = std::exp(in[j] - mx);
                sum += o[j];
            }
            for (int64_t j = 0; j < k; ++j) o[j] /= sum;
        }
        Id out_id = push(std::move(out), node(x).requires_grad, "softmax_last", {});
        set_backward(out_id, [this, x, out_id, k, rows](Tape&) {
            if (!node(x).grad) return;
            const auto& g = *node(out_id).grad;
            const auto& y = node(out_id).value;
            auto& gx = *node(x).grad;
            for (int64_t row = 0; row < rows; ++row) {
                const S* gr = g.data.data() + row * k;
                const S* yr = y.data.data() + row * k;
                S dot = S(0);
                for (int64_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
                S* gxr = gx.data.data() + row * k;
                for (int64_t j = 0; j < k; ++j) gxr[j] += yr[j] * (gr[j] - dot);
            }
        });
        return out_id;
    }

    // out = x / sqrt(mean(x^2) + eps) * gamma, per last-axis slice
    Id rmsnorm(Id x, Id gamma, S eps) {
        const auto& xv = value(x);
        const auto& gv = value(gamma);
        int64_t k = xv.shape.back();
        if (gv.rank() != 1 || gv.shape[0] != k) {
            throw ShapeError("rmsnorm: gain shape " + shape_str(gv.shape) +
                             " does not match last extent of " + shape_str(xv.shape));
        }
        int64_t rows = xv.size() / k;
        TensorData<S> out(xv.shape);
        for (int64_t row = 0; row < rows; ++row) {
            const S* in = xv.data.data() + row * k;
            S* o = out.data.data() + row * k;
            S ms = S(0);
            for (int64_t j = 0; j < k; ++j) ms += in[j] * in[j];
            S inv = S(1) / std::sqrt(ms / static_cast<S>(k) + eps);
            for (int64_t j = 0; j < k; ++j) o[j] = in[j] * inv * gv[j];
        }
        bool rg = node(x).requires_grad || node(gamma).requires_grad;
        Id out_id = push(std::move(out), rg, "rmsnorm", {});
        set_backward(out_id, [this, x, gamma, out_id, k, rows, eps](Tape&) {
            const auto& g = *node(out_id).grad;
            const auto& xv = node(x).value;
            const auto& gv = node(gamma).value;
            for (int64_t row = 0; row < rows; ++row) {
                const S* gr = g.data.data() + row * k;
                const S* xr = xv.data.data() + row * k;
                S ms = S(0);
                for (int64_t j = 0; j < k; ++j) ms += xr[j] * xr[j];
                S rsq = ms / static_cast<S>(k) + eps;
                S inv = S(1) / std::sqrt(rsq);
                if (node(x).grad) {
                    // d/dx_j = g_j*gamma_j/r - x_j/(k*r^3) * sum_i g_i*gamma_i*x_i
                    S dot = S(0);
                    for (int64_t j = 0; j < k; ++j) dot += gr[j] * gv[j] * xr[j];
                    S scal = dot * inv * inv * inv / static_cast<S>(k);
                    S* gxr = node(x).grad->data.data() + row * k;
                    for (int64_t j = 0; j < k; ++j) gxr[j] += gr[j] * gv[j] * inv - xr[j] * scal;
                }
                if (node(gamma).grad) {
                    auto& gg = *node(gamma).grad;
                    for (int64_t j = 0; j < k; ++j) gg[j] += gr[j] * xr[j] * inv;
                }
            }
        });
        return out_id;
    }

    // -- convolution -----------------------------------------------------------

    // 1-D convolution along the time axis, per node, zero same-padding.
    // x: [T,N,c_in], kernel: [w,c_in,c_out] with odd w -> [T,N,c_out]
    Id conv_time(Id x, Id kernel) {
        const auto& xv = value(x);
        const auto& kv = value(kernel);
        if (xv.rank() != 3) throw ShapeError("conv_time: input must be rank 3, got " +
                                             shape_str(xv.shape));
        if (kv.rank() != 3) throw ShapeError("conv_time: kernel must be rank 3, got " +
                                             shape_str(kv.shape));
        int64_t w = kv.shape[0];
        if (w % 2 == 0) throw ConfigError("conv_time: kernel width must be odd, got " +
                                          std::to_string(w));
        if (kv.shape[1] != xv.shape[2]) {
            throw ShapeError("conv_time: kernel channels " + shape_str(kv.shape) +
                             " do not match input " + shape_str(xv.shape));
        }
        int64_t T = xv.shape[0], N = xv.shape[1], ci = xv.shape[2], co = kv.shape[2];
        int64_t half = w / 2;
        TensorData<S> out(Shape{T, N, co});
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t j = 0; j < w; ++j) {
                int64_t src = t + j - half;
                if (src < 0 || src >= T) continue;
                for (int64_t n = 0; n < N; ++n) {
                    const S* xrow = xv.data.data() + (src * N + n) * ci;
                    S* orow = out.data.data() + (t * N + n) * co;
                    const S* krow = kv.data.data() + j * ci * co;
                    for (int64_t a = 0; a < ci; ++a) {
                        S xa = xrow[a];
                        const S* kr = krow + a * co;
                        for (int64_t b = 0; b < co; ++b) orow[b] += xa * kr[b];
                    }
                }
            }
        }
        bool rg = node(x).requires_grad || node(kernel).requires_grad;
        Id out_id = push(std::move(out), rg, "conv_time", {});
        set_backward(out_id, [this, x, kernel, out_id, T, N, ci, co, w, half](Tape&) {
            const auto& g = *node(out_id).grad;
            const auto& xv = node(x).value;
            const auto& kv = node(kernel).value;
            for (int64_t t = 0; t < T; ++t) {
                for (int64_t j = 0; j < w; ++j) {
                    int64_t src = t + j - half;
                    if (src < 0 || src >= T) continue;
                    for (int64_t n = 0; n < N; ++n) {
                        const S* grow = g.data.data() + (t * N + n) * co;
                        if (node(x).grad) {
                            S* gxrow = node(x).grad->data.data() + (src * N + n) * ci;
                            const S* krow = kv.data.data() + j * ci * co;
                            for (int64_t a = 0; a < ci; ++a) {
                                const S* kr = krow + a * co;
                                S acc = S(0);
                                for (int64_t b = 0; b < co; ++b) acc += grow[b] * kr[b];
                                gxrow[a] += acc;
                            }
                        }
                        if (node(kernel).grad) {
                            const S* xrow = xv.data.data() + (src * N + n) * ci;
                            S* gkrow = node(kernel).grad->data.data() + j * ci * co;
                            for (int64_t a = 0; a < ci; ++a) {
                                S xa = xrow[a];
                                S* gk = gkrow + a * co;
                                for (int64_t b = 0; b < co; ++b) gk[b] += xa * grow[b];
                            }
                        }
                    }
                }
            }
        });
        return out_id;
    }

    // -- test hook -------------------------------------------------------------

    // Registers an op with caller-supplied value and backward. Used by tests
    // to inject deliberately wrong gradients into the finite-difference check.
    Id custom(const char* name, std::vector<Id> parents, TensorData<S> out,
              std::function<void(Tape&, Id)> bw) {
        bool rg = false;
        for (Id p : parents) rg = rg || node(p).requires_grad;
        Id out_id = push(std::move(out), rg, name, {});
        set_backward(out_id, [bw = std::move(bw), out_id](Tape& t) { bw(t, out_id); });
        return out_id;
    }

    // -- backward --------------------------------------------------------------

    void backward(Id loss) {
        const auto& lv = value(loss);
        if (lv.size() != 1) {
            throw UsageError("backward: loss must be scalar, got shape " + shape_str(lv.shape));
        }
        if (!node(loss).requires_grad) return;  // everything in scope is frozen
        (*node(loss).grad)[0] += S(1);
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.requires_grad && n.backward) n.backward(*this);
        }
    }

private:
    enum class BinOp { Add, Sub, Mul };

    std::vector<Node> nodes_;

    Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(Id id) const { return nodes_[static_cast<size_t>(id)]; }

    Id push(TensorData<S> value, bool requires_grad, const char* op,
            std::function<void(Tape&)> bw) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        n.backward = std::move(bw);
        if (requires_grad) n.grad = std::make_unique<TensorData<S>>(n.value.shape);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    void set_backward(Id id, std::function<void(Tape&)> bw) {
        node(id).backward = std::move(bw);
    }

    // Elementwise with leading-axis broadcast: either shapes match, or the
    // smaller operand's shape is a suffix of the larger's and is repeated
    // across the leading axes. No other implicit promotion.
    Id binary(Id a, Id b, const char* name, BinOp op) {
        const auto& av = value(a);
        const auto& bv = value(b);
        auto suffix_of = [](const Shape& small, const Shape& big) {
            if (small.size() > big.size()) return false;
            return std::equal(small.rbegin(), small.rend(), big.rbegin());
        };
        bool b_small = false, a_small = false;
        if (av.shape == bv.shape) {
            // plain elementwise
        } else if (suffix_of(bv.shape, av.shape)) {
            b_small = true;
        } else if (suffix_of(av.shape, bv.shape)) {
            a_small = true;
        } else {
            throw ShapeError(std::string(name) + ": shapes not broadcast-compatible: " +
                             shape_str(av.shape) + " vs " + shape_str(bv.shape));
        }
        const auto& big = a_small ? bv : av;
        const auto& small = a_small ? av : (b_small ? bv : bv);
        int64_t inner = small.size();
        int64_t outer = big.size() / std::max<int64_t>(inner, 1);
        TensorData<S> out(big.shape);
        for (int64_t o = 0; o < outer; ++o) {
            const S* abuf;
            const S* bbuf;
            if (a_small) {
                abuf = av.data.data();
                bbuf = bv.data.data() + o * inner;
            } else if (b_small) {
                abuf = av.data.data() + o * inner;
                bbuf = bv.data.data();
            } else {
                abuf = av.data.data() + o * inner;
                bbuf = bv.data.data() + o * inner;
            }
            S* obuf = out.data.data() + o * inner;
            switch (op) {
                case BinOp::Add:
                    for (int64_t i = 0; i < inner; ++i) obuf[i] = abuf[i] + bbuf[i];
                    break;
                case BinOp::Sub:
                    for (int64_t i = 0; i < inner; ++i) obuf[i] = abuf[i] - bbuf[i];
                    break;
                case BinOp::Mul:
                    for (int64_t i = 0; i < inner; ++i) obuf[i] = abuf[i] * bbuf[i];
                    break;
            }
        }
        bool rg = node(a).requires_grad || node(b).requires_grad;
        Id out_id = push(std::move(out), rg, name, {});
        set_backward(out_id, [this, a, b, out_id, op, a_small, b_small, inner, outer](Tape&) {
            const auto& g = *node(out_id).grad;
            const auto& av = node(a).value;
            const auto& bv = node(b).value;
            auto accum = [&](Id target, bool target_small, bool is_a) {
                if (!node(target).grad) return;
                auto& gt = *node(target).grad;
                for (int64_t o = 0; o < outer; ++o) {
                    const S* gbuf = g.data.data() + o * inner;
                    const S* other_buf = nullptr;
                    if (op == BinOp::Mul) {
                        const auto& other = is_a ? bv : av;
                        bool other_small = is_a ? b_small : a_small;
                        other_buf = other.data.data() + (other_small ? 0 : o * inner);
                    }
                    S* tbuf = gt.data.data() + (target_small ? 0 : o * inner);
                    for (int64_t i = 0; i < inner; ++i) {
                        S contrib = gbuf[i];
                        if (op == BinOp::Mul) contrib *= other_buf[i];
                        if (op == BinOp::Sub && !is_a) contrib = -contrib;
                        tbuf[i] += contrib;
                    }
                }
            };
            accum(a, a_small, true);
            accum(b, b_small, false);
        });
        return out_id;
    }
};

}  // namespace stdf
