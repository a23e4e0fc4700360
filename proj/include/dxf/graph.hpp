#pragma once

// Tape-based reverse-mode autodiff over dense tensors. Operations append a
// node holding the forward value and a backward closure; backward() replays
// the closures in reverse creation order. Gradients of a tensor feeding
// several consumers accumulate additively.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dxf/kernels.hpp"
#include "dxf/tensor.hpp"

namespace dxf {

template <typename S>
class Graph {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<S> val;
        std::vector<S> grad;  // allocated iff requires_grad
        bool requires_grad = false;
        bool is_leaf = false;
        std::function<void(Graph&)> backward;
    };

    std::vector<Node> nodes;

    int leaf(const Tensor<S>& t, bool requires_grad) {
        Node n;
        n.shape = t.shape;
        n.val = t.data;
        n.requires_grad = requires_grad;
        n.is_leaf = true;
        if (requires_grad) n.grad.assign(n.val.size(), S(0));
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int constant(const Tensor<S>& t) { return leaf(t, false); }

    int make(std::vector<int> shape, bool requires_grad) {
        Node n;
        n.shape = std::move(shape);
        n.val.assign(static_cast<size_t>(numel_of(n.shape)), S(0));
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad.assign(n.val.size(), S(0));
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    std::vector<S>& val(int id) { return nodes[static_cast<size_t>(id)].val; }
    const std::vector<S>& val(int id) const { return nodes[static_cast<size_t>(id)].val; }
    std::vector<S>& grad(int id) { return nodes[static_cast<size_t>(id)].grad; }
    const std::vector<int>& shape(int id) const { return nodes[static_cast<size_t>(id)].shape; }
    bool requires_grad(int id) const { return nodes[static_cast<size_t>(id)].requires_grad; }

    Tensor<S> tensor(int id) const { return Tensor<S>(shape(id), val(id)); }

    // Propagates d(loss)/d(node) into every requires_grad node reachable
    // backwards from `loss`. Leaf gradients accumulate across calls;
    // interior gradients are reset each call.
    void backward(int loss) {
        auto& ln = nodes[static_cast<size_t>(loss)];
        if (ln.val.size() != 1) throw ShapeError("backward requires a scalar loss, got shape " + shape_str(ln.shape));
        if (!ln.requires_grad) return;
        std::vector<std::vector<S>> saved_leaf_grads(nodes.size());
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i].requires_grad) continue;
            if (nodes[i].is_leaf)
                saved_leaf_grads[i] = nodes[i].grad;
            nodes[i].grad.assign(nodes[i].grad.size(), S(0));
        }
        ln.grad[0] = S(1);
        for (int id = loss; id >= 0; --id) {
            auto& n = nodes[static_cast<size_t>(id)];
            if (n.backward && n.requires_grad) n.backward(*this);
        }
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (!saved_leaf_grads[i].empty())
                for (size_t j = 0; j < nodes[i].grad.size(); ++j) nodes[i].grad[j] += saved_leaf_grads[i][j];
        }
    }
};

namespace ops {

template <typename S>
void check_same_shape(const Graph<S>& g, int a, int b, const char* what) {
    if (g.shape(a) != g.shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(g.shape(a)) + " vs " +
                         shape_str(g.shape(b)));
}

template <typename S>
int add(Graph<S>& g, int a, int b) {
    check_same_shape(g, a, b, "add");
    bool rg = g.requires_grad(a) || g.requires_grad(b);
    int out = g.make(g.shape(a), rg);
    auto& y = g.val(out);
    const auto& xa = g.val(a);
    const auto& xb = g.val(b);
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
    if (rg)
        g.nodes.back().backward = [a, b, out](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            if (gg.requires_grad(a)) {
                auto& ga = gg.grad(a);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (gg.requires_grad(b)) {
                auto& gb = gg.grad(b);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        };
    return out;
}

template <typename S>
int mul(Graph<S>& g, int a, int b) {
    check_same_shape(g, a, b, "mul");
    bool rg = g.requires_grad(a) || g.requires_grad(b);
    int out = g.make(g.shape(a), rg);
    auto& y = g.val(out);
    const auto& xa = g.val(a);
    const auto& xb = g.val(b);
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
    if (rg)
        g.nodes.back().backward = [a, b, out](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            if (gg.requires_grad(a)) {
                auto& ga = gg.grad(a);
                const auto& vb = gg.val(b);
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
            }
            if (gg.requires_grad(b)) {
                auto& gb = gg.grad(b);
                const auto& va = gg.val(a);
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
            }
        };
    return out;
}

template <typename S>
int scale(Graph<S>& g, int a, S c) {
    bool rg = g.requires_grad(a);
    int out = g.make(g.shape(a), rg);
    auto& y = g.val(out);
    const auto& xa = g.val(a);
    for (size_t i = 0; i < y.size(); ++i) y[i] = c * xa[i];
    if (rg)
        g.nodes.back().backward = [a, out, c](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            auto& ga = gg.grad(a);
            for (size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
        };
    return out;
}

// Subgradient at exactly 0 is 0.
template <typename S>
int relu(Graph<S>& g, int a) {
    bool rg = g.requires_grad(a);
    int out = g.make(g.shape(a), rg);
    auto& y = g.val(out);
    const auto& xa = g.val(a);
    for (size_t i = 0; i < y.size(); ++i) y[i] = xa[i] > S(0) ? xa[i] : S(0);
    if (rg)
        g.nodes.back().backward = [a, out](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            const auto& xa2 = gg.val(a);
            auto& ga = gg.grad(a);
            for (size_t i = 0; i < go.size(); ++i)
                if (xa2[i] > S(0)) ga[i] += go[i];
        };
    return out;
}

template <typename S>
int matmul(Graph<S>& g, int a, int b) {
    const auto& sa = g.shape(a);
    const auto& sb = g.shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    const int m = sa[0], k = sa[1], n = sb[1];
    bool rg = g.requires_grad(a) || g.requires_grad(b);
    int out = g.make({m, n}, rg);
    kernels::matmul(m, k, n, g.val(a).data(), g.val(b).data(), g.val(out).data());
    if (rg)
        g.nodes.back().backward = [a, b, out, m, k, n](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            if (gg.requires_grad(a))
                kernels::matmul_nt_acc(m, n, k, go.data(), gg.val(b).data(), gg.grad(a).data());
            if (gg.requires_grad(b))
                kernels::matmul_tn_acc(m, k, n, gg.val(a).data(), go.data(), gg.grad(b).data());
        };
    return out;
}

// y[c, t] = x[c, t] + bias[c]
template <typename S>
int bias_rows(Graph<S>& g, int x, int bias) {
    const auto& sx = g.shape(x);
    const auto& sbv = g.shape(bias);
    if (sx.size() != 2 || sbv.size() != 1 || sbv[0] != sx[0])
        throw ShapeError("bias_rows: " + shape_str(sx) + " vs " + shape_str(sbv));
    const int C = sx[0], T = sx[1];
    bool rg = g.requires_grad(x) || g.requires_grad(bias);
    int out = g.make(sx, rg);
    auto& y = g.val(out);
    const auto& xv = g.val(x);
    const auto& bv = g.val(bias);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) y[static_cast<size_t>(c) * T + t] = xv[static_cast<size_t>(c) * T + t] + bv[static_cast<size_t>(c)];
    if (rg)
        g.nodes.back().backward = [x, bias, out, C, T](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            if (gg.requires_grad(x)) {
                auto& gx = gg.grad(x);
                for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (gg.requires_grad(bias)) {
                auto& gb = gg.grad(bias);
                for (int c = 0; c < C; ++c) {
                    S acc = S(0);
                    for (int t = 0; t < T; ++t) acc += go[static_cast<size_t>(c) * T + t];
                    gb[static_cast<size_t>(c)] += acc;
                }
            }
        };
    return out;
}

// 1x1 channel projection: w[O x I] * x[I x T] (+ bias[O]).
template <typename S>
int linear(Graph<S>& g, int w, int x, int bias = -1) {
    int y = matmul(g, w, x);
    return bias >= 0 ? bias_rows(g, y, bias) : y;
}

template <typename S>
int conv1d(Graph<S>& g, int x, int w, int bias, int dilation) {
    const auto& sx = g.shape(x);
    const auto& sw = g.shape(w);
    if (sx.size() != 2 || sw.size() != 3 || sw[1] != sx[0])
        throw ShapeError("conv1d: x " + shape_str(sx) + " vs w " + shape_str(sw));
    const int c_in = sx[0], T = sx[1], c_out = sw[0], ksz = sw[2];
    if (ksz % 2 == 0) throw ConfigError("conv1d kernel size must be odd, got " + std::to_string(ksz));
    if (dilation < 1) throw ConfigError("conv1d dilation must be >= 1, got " + std::to_string(dilation));
    if (bias >= 0 && (g.shape(bias).size() != 1 || g.shape(bias)[0] != c_out))
        throw ShapeError("conv1d bias shape " + shape_str(g.shape(bias)));
    bool rg = g.requires_grad(x) || g.requires_grad(w) || (bias >= 0 && g.requires_grad(bias));
    int out = g.make({c_out, T}, rg);
    kernels::conv1d(c_in, c_out, T, ksz, dilation, g.val(x).data(), g.val(w).data(),
                    bias >= 0 ? g.val(bias).data() : nullptr, g.val(out).data());
    if (rg)
        g.nodes.back().backward = [x, w, bias, out, c_in, c_out, T, ksz, dilation](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            if (gg.requires_grad(x))
                kernels::conv1d_bwd_x(c_in, c_out, T, ksz, dilation, gg.val(w).data(), go.data(),
                                      gg.grad(x).data());
            if (gg.requires_grad(w))
                kernels::conv1d_bwd_w(c_in, c_out, T, ksz, dilation, gg.val(x).data(), go.data(),
                                      gg.grad(w).data());
            if (bias >= 0 && gg.requires_grad(bias))
                kernels::conv1d_bwd_b(c_out, T, go.data(), gg.grad(bias).data());
        };
    return out;
}

// Concatenation of 2-D tensors along axis 0 or 1.
template <typename S>
int concat(Graph<S>& g, const std::vector<int>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    const auto& s0 = g.shape(xs[0]);
    if (s0.size() != 2) throw ShapeError("concat: expects rank-2 tensors");
    int other = 1 - axis;
    int total = 0;
    bool rg = false;
    for (int x : xs) {
        const auto& s = g.shape(x);
        if (s.size() != 2 || s[static_cast<size_t>(other)] != s0[static_cast<size_t>(other)])
            throw ShapeError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
        total += s[static_cast<size_t>(axis)];
        rg = rg || g.requires_grad(x);
    }
    std::vector<int> oshape = s0;
    oshape[static_cast<size_t>(axis)] = total;
    int out = g.make(oshape, rg);
    auto& y = g.val(out);
    const int R = oshape[0], C = oshape[1];
    int off = 0;
    for (int x : xs) {
        const auto& xv = g.val(x);
        const auto& s = g.shape(x);
        if (axis == 0) {
            std::copy(xv.begin(), xv.end(), y.begin() + static_cast<std::int64_t>(off) * C);
            off += s[0];
        } else {
            for (int r = 0; r < R; ++r)
                std::copy(xv.begin() + static_cast<std::int64_t>(r) * s[1],
                          xv.begin() + static_cast<std::int64_t>(r + 1) * s[1],
                          y.begin() + static_cast<std::int64_t>(r) * C + off);
            off += s[1];
        }
    }
    if (rg) {
        std::vector<int> inputs = xs;
        g.nodes.back().backward = [inputs, out, axis, R, C](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            int off2 = 0;
            for (int x : inputs) {
                const auto& s = gg.shape(x);
                int ext = s[static_cast<size_t>(axis)];
                if (gg.requires_grad(x)) {
                    auto& gx = gg.grad(x);
                    if (axis == 0) {
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(ext) * C; ++i)
                            gx[static_cast<size_t>(i)] += go[static_cast<size_t>(static_cast<std::int64_t>(off2) * C + i)];
                    } else {
                        for (int r = 0; r < R; ++r)
                            for (int c = 0; c < ext; ++c)
                                gx[static_cast<size_t>(r) * ext + c] += go[static_cast<size_t>(r) * C + off2 + c];
                    }
                }
                off2 += ext;
            }
        };
    }
    return out;
}

// Stable softmax along `axis` of a 2-D tensor.
template <typename S>
int softmax(Graph<S>& g, int x, int axis) {
    const auto& sx = g.shape(x);
    if (sx.size() != 2 || (axis != 0 && axis != 1))
        throw ShapeError("softmax: expects rank-2 tensor and axis in {0,1}");
    const int R = sx[0], C = sx[1];
    bool rg = g.requires_grad(x);
    int out = g.make(sx, rg);
    auto& y = g.val(out);
    const auto& xv = g.val(x);
    const int nlines = axis == 0 ? C : R;
    const int len = axis == 0 ? R : C;
    auto idx = [&](int line, int i) {
        return axis == 0 ? static_cast<size_t>(i) * C + line : static_cast<size_t>(line) * C + i;
    };
    for (int l = 0; l < nlines; ++l) {
        S mx = xv[idx(l, 0)];
        for (int i = 1; i < len; ++i) mx = std::max(mx, xv[idx(l, i)]);
        S denom = S(0);
        for (int i = 0; i < len; ++i) {
            S e = std::exp(xv[idx(l, i)] - mx);
            y[idx(l, i)] = e;
            denom += e;
        }
        for (int i = 0; i < len; ++i) y[idx(l, i)] /= denom;
    }
    if (rg)
        g.nodes.back().backward = [x, out, axis, R, C](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            const auto& yv = gg.val(out);
            auto& gx = gg.grad(x);
            const int nl = axis == 0 ? C : R;
            const int ln = axis == 0 ? R : C;
            auto idx2 = [&](int line, int i) {
                return axis == 0 ? static_cast<size_t>(i) * C + line : static_cast<size_t>(line) * C + i;
            };
            for (int l = 0; l < nl; ++l) {
                S dot = S(0);
                for (int i = 0; i < ln; ++i) dot += go[idx2(l, i)] * yv[idx2(l, i)];
                for (int i = 0; i < ln; ++i) gx[idx2(l, i)] += yv[idx2(l, i)] * (go[idx2(l, i)] - dot);
            }
        };
    return out;
}

// log-softmax over the class axis (axis 0) of [C x T].
template <typename S>
int log_softmax_cols(Graph<S>& g, int x) {
    const auto& sx = g.shape(x);
    if (sx.size() != 2) throw ShapeError("log_softmax_cols: expects rank-2 tensor");
    const int C = sx[0], T = sx[1];
    bool rg = g.requires_grad(x);
    int out = g.make(sx, rg);
    auto& y = g.val(out);
    const auto& xv = g.val(x);
    for (int t = 0; t < T; ++t) {
        S mx = xv[static_cast<size_t>(t)];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xv[static_cast<size_t>(c) * T + t]);
        S denom = S(0);
        for (int c = 0; c < C; ++c) denom += std::exp(xv[static_cast<size_t>(c) * T + t] - mx);
        S lse = mx + std::log(denom);
        for (int c = 0; c < C; ++c) y[static_cast<size_t>(c) * T + t] = xv[static_cast<size_t>(c) * T + t] - lse;
    }
    if (rg)
        g.nodes.back().backward = [x, out, C, T](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            const auto& yv = gg.val(out);
            auto& gx = gg.grad(x);
            for (int t = 0; t < T; ++t) {
                S tot = S(0);
                for (int c = 0; c < C; ++c) tot += go[static_cast<size_t>(c) * T + t];
                for (int c = 0; c < C; ++c)
                    gx[static_cast<size_t>(c) * T + t] +=
                        go[static_cast<size_t>(c) * T + t] - std::exp(yv[static_cast<size_t>(c) * T + t]) * tot;
            }
        };
    return out;
}

template <typename S>
int sum_all(Graph<S>& g, int x) {
    bool rg = g.requires_grad(x);
    int out = g.make({1}, rg);
    const auto& xv = g.val(x);
    S acc = S(0);
    for (S v : xv) acc += v;
    g.val(out)[0] = acc;
    if (rg)
        g.nodes.back().backward = [x, out](Graph<S>& gg) {
            const S go = gg.grad(out)[0];
            auto& gx = gg.grad(x);
            for (auto& v : gx) v += go;
        };
    return out;
}

// Zeroes padded time columns of [C x T].
template <typename S>
int mask_cols(Graph<S>& g, int x, const std::vector<uint8_t>& mask) {
    const auto& sx = g.shape(x);
    if (sx.size() != 2 || static_cast<size_t>(sx[1]) != mask.size())
        throw ShapeError("mask_cols: mask length " + std::to_string(mask.size()) + " vs " + shape_str(sx));
    const int C = sx[0], T = sx[1];
    bool rg = g.requires_grad(x);
    int out = g.make(sx, rg);
    auto& y = g.val(out);
    const auto& xv = g.val(x);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            y[static_cast<size_t>(c) * T + t] = mask[static_cast<size_t>(t)] ? xv[static_cast<size_t>(c) * T + t] : S(0);
    if (rg)
        g.nodes.back().backward = [x, out, C, T, mask](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            auto& gx = gg.grad(x);
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t)
                    if (mask[static_cast<size_t>(t)]) gx[static_cast<size_t>(c) * T + t] += go[static_cast<size_t>(c) * T + t];
        };
    return out;
}

// Per-channel normalization over the valid frames of [C x T].
// Padded frames are zero in the output and receive zero gradient.
template <typename S>
int instance_norm(Graph<S>& g, int x, const std::vector<uint8_t>& mask, S eps = S(1e-5)) {
    const auto& sx = g.shape(x);
    if (sx.size() != 2 || static_cast<size_t>(sx[1]) != mask.size())
        throw ShapeError("instance_norm: mask length vs " + shape_str(sx));
    const int C = sx[0], T = sx[1];
    int m = 0;
    for (uint8_t v : mask) m += v ? 1 : 0;
    bool rg = g.requires_grad(x);
    int out = g.make(sx, rg);
    auto& y = g.val(out);
    const auto& xv = g.val(x);
    auto invstd = std::make_shared<std::vector<S>>(static_cast<size_t>(C), S(0));
    for (int c = 0; c < C; ++c) {
        S mu = S(0);
        for (int t = 0; t < T; ++t)
            if (mask[static_cast<size_t>(t)]) mu += xv[static_cast<size_t>(c) * T + t];
        if (m > 0) mu /= static_cast<S>(m);
        S var = S(0);
        for (int t = 0; t < T; ++t)
            if (mask[static_cast<size_t>(t)]) {
                S d = xv[static_cast<size_t>(c) * T + t] - mu;
                var += d * d;
            }
        if (m > 0) var /= static_cast<S>(m);
        S is = S(1) / std::sqrt(var + eps);
        (*invstd)[static_cast<size_t>(c)] = is;
        for (int t = 0; t < T; ++t)
            y[static_cast<size_t>(c) * T + t] =
                mask[static_cast<size_t>(t)] ? (xv[static_cast<size_t>(c) * T + t] - mu) * is : S(0);
    }
    if (rg)
        g.nodes.back().backward = [x, out, C, T, m, mask, invstd](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            const auto& yv = gg.val(out);
            auto& gx = gg.grad(x);
            if (m == 0) return;
            for (int c = 0; c < C; ++c) {
                S sum_dy = S(0), sum_dyy = S(0);
                for (int t = 0; t < T; ++t)
                    if (mask[static_cast<size_t>(t)]) {
                        sum_dy += go[static_cast<size_t>(c) * T + t];
                        sum_dyy += go[static_cast<size_t>(c) * T + t] * yv[static_cast<size_t>(c) * T + t];
                    }
                const S is = (*invstd)[static_cast<size_t>(c)];
                const S inv_m = S(1) / static_cast<S>(m);
                for (int t = 0; t < T; ++t)
                    if (mask[static_cast<size_t>(t)])
                        gx[static_cast<size_t>(c) * T + t] +=
                            is * (go[static_cast<size_t>(c) * T + t] - inv_m * sum_dy -
                                  yv[static_cast<size_t>(c) * T + t] * inv_m * sum_dyy);
            }
        };
    return out;
}

// Chunked attention over channel-first q,k,v of shape [d x T]. The
// sequence is split into consecutive chunks of `w` frames; each query
// attends only within its chunk, scores scaled by 1/sqrt(d). Padded
// frames get zero attention weight and zero output.
template <typename S>
int windowed_attention(Graph<S>& g, int q, int k, int v, int w, const std::vector<uint8_t>& mask) {
    const auto& sq = g.shape(q);
    if (sq.size() != 2) throw ShapeError("windowed_attention: q must be rank 2");
    check_same_shape(g, q, k, "windowed_attention q/k");
    check_same_shape(g, q, v, "windowed_attention q/v");
    if (w < 1) throw ConfigError("windowed_attention: window must be >= 1, got " + std::to_string(w));
    const int d = sq[0], T = sq[1];
    if (static_cast<size_t>(T) != mask.size()) throw ShapeError("windowed_attention: mask length vs " + shape_str(sq));
    const S scl = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d)));
    bool rg = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v);
    int out = g.make(sq, rg);

    const int nchunks = (T + w - 1) / w;
    // Per-chunk softmax weights, kept for backward.
    auto weights = std::make_shared<std::vector<std::vector<S>>>(static_cast<size_t>(nchunks));

    const auto& qv = g.val(q);
    const auto& kv = g.val(k);
    const auto& vv = g.val(v);
    auto& y = g.val(out);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < nchunks; ++ch) {
        const int t0 = ch * w;
        const int cs = std::min(w, T - t0);
        auto& A = (*weights)[static_cast<size_t>(ch)];
        A.assign(static_cast<size_t>(cs) * cs, S(0));
        for (int a = 0; a < cs; ++a) {
            if (!mask[static_cast<size_t>(t0 + a)]) continue;  // padded query: zero row
            S mx = S(0);
            bool any = false;
            for (int b = 0; b < cs; ++b) {
                if (!mask[static_cast<size_t>(t0 + b)]) continue;
                S s = S(0);
                for (int c = 0; c < d; ++c)
                    s += qv[static_cast<size_t>(c) * T + t0 + a] * kv[static_cast<size_t>(c) * T + t0 + b];
                s *= scl;
                A[static_cast<size_t>(a) * cs + b] = s;
                if (!any || s > mx) mx = s;
                any = true;
            }
            S denom = S(0);
            for (int b = 0; b < cs; ++b) {
                if (!mask[static_cast<size_t>(t0 + b)]) continue;
                S e = std::exp(A[static_cast<size_t>(a) * cs + b] - mx);
                A[static_cast<size_t>(a) * cs + b] = e;
                denom += e;
            }
            for (int b = 0; b < cs; ++b)
                if (mask[static_cast<size_t>(t0 + b)]) A[static_cast<size_t>(a) * cs + b] /= denom;
            for (int c = 0; c < d; ++c) {
                S acc = S(0);
                for (int b = 0; b < cs; ++b)
                    acc += A[static_cast<size_t>(a) * cs + b] * vv[static_cast<size_t>(c) * T + t0 + b];
                y[static_cast<size_t>(c) * T + t0 + a] = acc;
            }
        }
    }
    if (rg)
        g.nodes.back().backward = [q, k, v, out, w, d, T, nchunks, scl, mask, weights](Graph<S>& gg) {
            const auto& go = gg.grad(out);
            const auto& qv2 = gg.val(q);
            const auto& kv2 = gg.val(k);
            const auto& vv2 = gg.val(v);
            const bool need_q = gg.requires_grad(q);
            const bool need_k = gg.requires_grad(k);
            const bool need_v = gg.requires_grad(v);
#pragma omp parallel for schedule(static)
            for (int ch = 0; ch < nchunks; ++ch) {
                const int t0 = ch * w;
                const int cs = std::min(w, T - t0);
                const auto& A = (*weights)[static_cast<size_t>(ch)];
                std::vector<S> dS(static_cast<size_t>(cs) * cs, S(0));
                for (int a = 0; a < cs; ++a) {
                    if (!mask[static_cast<size_t>(t0 + a)]) continue;
                    // dA then dS = A * (dA - rowdot)
                    std::vector<S> dA(static_cast<size_t>(cs), S(0));
                    for (int b = 0; b < cs; ++b) {
                        S acc = S(0);
                        for (int c = 0; c < d; ++c)
                            acc += go[static_cast<size_t>(c) * T + t0 + a] * vv2[static_cast<size_t>(c) * T + t0 + b];
                        dA[static_cast<size_t>(b)] = acc;
                    }
                    S rowdot = S(0);
                    for (int b = 0; b < cs; ++b) rowdot += dA[static_cast<size_t>(b)] * A[static_cast<size_t>(a) * cs + b];
                    for (int b = 0; b < cs; ++b)
                        dS[static_cast<size_t>(a) * cs + b] =
                            A[static_cast<size_t>(a) * cs + b] * (dA[static_cast<size_t>(b)] - rowdot);
                }
                if (need_v) {
                    auto& gv = gg.grad(v);
                    for (int b = 0; b < cs; ++b)
                        for (int c = 0; c < d; ++c) {
                            S acc = S(0);
                            for (int a = 0; a < cs; ++a)
                                if (mask[static_cast<size_t>(t0 + a)])
                                    acc += A[static_cast<size_t>(a) * cs + b] * go[static_cast<size_t>(c) * T + t0 + a];
                            gv[static_cast<size_t>(c) * T + t0 + b] += acc;
                        }
                }
                if (need_q) {
                    auto& gq = gg.grad(q);
                    for (int a = 0; a < cs; ++a)
                        for (int c = 0; c < d; ++c) {
                            S acc = S(0);
                            for (int b = 0; b < cs; ++b)
                                acc += dS[static_cast<size_t>(a) * cs + b] * kv2[static_cast<size_t>(c) * T + t0 + b];
                            gq[static_cast<size_t>(c) * T + t0 + a] += scl * acc;
                        }
                }
                if (need_k) {
                    auto& gk = gg.grad(k);
                    for (int b = 0; b < cs; ++b)
                        for (int c = 0; c < d; ++c) {
                            S acc = S(0);
                            for (int a = 0; a < cs; ++a)
                                acc += dS[static_cast<size_t>(a) * cs + b] * qv2[static_cast<size_t>(c) * T + t0 + a];
                            gk[static_cast<size_t>(c) * T + t0 + b] += scl * acc;
                        }
                }
            }
        };
    return out;
}

// Mean negative picked log-probability over valid frames:
// -(1/m) * sum_t logp[labels[t], t].
template <typename S>
int nll_pick(Graph<S>& g, int logp, const std::vector<int>& labels, const std::vector<uint8_t>& mask) {
    const auto& sx = g.shape(logp);
    if (sx.size() != 2) throw ShapeError("nll_pick: expects rank-2 log-probabilities");
    const int C = sx[0], T = sx[1];
    if (labels.size() != static_cast<size_t>(T) || mask.size() != static_cast<size_t>(T))
        throw ShapeError("nll_pick: labels/mask length vs " + shape_str(sx));
    int m = 0;
    for (int t = 0; t < T; ++t)
        if (mask[static_cast<size_t>(t)]) {
            if (labels[static_cast<size_t>(t)] < 0 || labels[static_cast<size_t>(t)] >= C)
                throw DataError("label " + std::to_string(labels[static_cast<size_t>(t)]) + " out of range [0," +
                                std::to_string(C) + ") at frame " + std::to_string(t));
            ++m;
        }
    bool rg = g.requires_grad(logp);
    int out = g.make({1}, rg);
    const auto& xv = g.val(logp);
    S acc = S(0);
    for (int t = 0; t < T; ++t)
        if (mask[static_cast<size_t>(t)]) acc -= xv[static_cast<size_t>(labels[static_cast<size_t>(t)]) * T + t];
    g.val(out)[0] = m > 0 ? acc / static_cast<S>(m) : S(0);
    if (rg && m > 0)
        g.nodes.back().backward = [logp, out, labels, mask, m, T](Graph<S>& gg) {
            const S go = gg.grad(out)[0];
            auto& gx = gg.grad(logp);
            for (int t = 0; t < T; ++t)
                if (mask[static_cast<size_t>(t)])
                    gx[static_cast<size_t>(labels[static_cast<size_t>(t)]) * T + t] -= go / static_cast<S>(m);
        };
    return out;
}

// Truncated MSE between consecutive frames' log-probabilities, with the
// previous frame gradient-stopped. Mean over classes and valid frame
// pairs, each squared difference clipped at tau^2. When `frozen_prev`
// is non-null it supplies the detached previous-frame values (used by
// the finite-difference harness to pin the stop-gradient branch).
template <typename S>
int smoothing_penalty(Graph<S>& g, int logp, const std::vector<uint8_t>& mask, S tau,
                      const std::vector<S>* frozen_prev = nullptr) {
    const auto& sx = g.shape(logp);
    if (sx.size() != 2) throw ShapeError("smoothing_penalty: expects rank-2 log-probabilities");
    const int C = sx[0], T = sx[1];
    if (tau <= S(0)) throw ConfigError("smoothing_penalty: tau must be > 0");
    int npairs = 0;
    for (int t = 1; t < T; ++t)
        if (mask[static_cast<size_t>(t)] && mask[static_cast<size_t>(t - 1)]) ++npairs;
    bool rg = g.requires_grad(logp);
    int out = g.make({1}, rg);  // may reallocate node storage; take refs after
    if (npairs == 0) return out;
    const auto& xv = g.val(logp);
    const std::vector<S>& prev = frozen_prev ? *frozen_prev : xv;
    const S tau2 = tau * tau;
    const S norm = static_cast<S>(C) * static_cast<S>(npairs);
    S acc = S(0);
    auto dvals = std::make_shared<std::vector<S>>(static_cast<size_t>(C) * T, S(0));
    for (int t = 1; t < T; ++t) {
        if (!(mask[static_cast<size_t>(t)] && mask[static_cast<size_t>(t - 1)])) continue;
        for (int c = 0; c < C; ++c) {
            S delta = xv[static_cast<size_t>(c) * T + t] - prev[static_cast<size_t>(c) * T + t - 1];
            (*dvals)[static_cast<size_t>(c) * T + t] = delta;
            acc += std::min(tau2, delta * delta);
        }
    }
    g.val(out)[0] = acc / norm;
    if (rg)
        g.nodes.back().backward = [logp, out, mask, C, T, tau2, norm, dvals](Graph<S>& gg) {
            const S go = gg.grad(out)[0];
            auto& gx = gg.grad(logp);
            for (int t = 1; t < T; ++t) {
                if (!(mask[static_cast<size_t>(t)] && mask[static_cast<size_t>(t - 1)])) continue;
                for (int c = 0; c < C; ++c) {
                    S delta = (*dvals)[static_cast<size_t>(c) * T + t];
                    if (delta * delta < tau2) gx[static_cast<size_t>(c) * T + t] += go * S(2) * delta / norm;
                }
            }
        };
    return out;
}

}  // namespace ops
}  // namespace dxf
