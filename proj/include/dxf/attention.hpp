#pragma once

// Dual dilated attention: two conv+attention branches with opposing
// window schedules (2^i growing, 2^(N-i) shrinking), fused by a 1x1
// convolution with a residual path. Encoder blocks self-attend; decoder
// blocks derive Q/K (or Q/V, see cross_qv_mode) from the concatenation
// of the branch features and the corresponding encoder block features.

#include <string>
#include <vector>

#include "dxf/graph.hpp"

namespace dxf {

enum class Role { encoder, decoder };
enum class Branch { increasing, decreasing };

// Branch window sizes: increasing -> 2^i, decreasing -> 2^(N-i).
inline int window_size(Branch b, int i, int N) {
    if (N < 1 || i < 1 || i > N)
        throw ConfigError("window_size: block index " + std::to_string(i) + " out of range [1," +
                          std::to_string(N) + "]");
    const int e = b == Branch::increasing ? i : N - i;
    return 1 << e;
}

struct BlockSpec {
    int index = 1;  // i, 1-based
    int total = 9;  // N
    Role role = Role::encoder;

    int w_inc() const { return window_size(Branch::increasing, index, total); }
    int w_dec() const { return window_size(Branch::decreasing, index, total); }
};

struct ParamDef {
    std::string name;
    std::vector<int> shape;
    int fan_in;
};

// Parameter layout of one DA block. Both branches have identical shapes;
// the Q/K (or Q/V) projections take 2F input channels in decoder wiring.
inline void append_block_params(std::vector<ParamDef>& defs, const std::string& prefix, int F,
                                int d, bool decoder_wiring, bool cross_qv_mode) {
    const int concat_ch = 2 * F;
    const int q_in = decoder_wiring ? concat_ch : F;
    const int k_in = decoder_wiring ? (cross_qv_mode ? F : concat_ch) : F;
    const int v_in = decoder_wiring ? (cross_qv_mode ? concat_ch : F) : F;
    for (const char* br : {"inc", "dec"}) {
        std::string p = prefix + "." + br + ".";
        defs.push_back({p + "conv.w", {F, F, 3}, 3 * F});
        defs.push_back({p + "conv.b", {F}, 3 * F});
        defs.push_back({p + "q.w", {d, q_in}, q_in});
        defs.push_back({p + "q.b", {d}, q_in});
        // no key bias: a per-key-constant score offset is cancelled by softmax
        defs.push_back({p + "k.w", {d, k_in}, k_in});
        defs.push_back({p + "v.w", {d, v_in}, v_in});
        defs.push_back({p + "v.b", {d}, v_in});
        defs.push_back({p + "out.w", {F, d}, d});
        defs.push_back({p + "out.b", {F}, d});
    }
    defs.push_back({prefix + ".fuse.w", {F, 2 * F}, 2 * F});
    defs.push_back({prefix + ".fuse.b", {F}, 2 * F});
}

template <typename S>
struct BlockBranchIds {
    int conv_w, conv_b, q_w, q_b, k_w, v_w, v_b, out_w, out_b;
};

template <typename S>
struct BlockParamIds {
    BlockBranchIds<S> inc, dec;
    int fuse_w, fuse_b;
};

namespace detail {

template <typename S>
int da_branch(Graph<S>& g, int xn, int cross, Role role, int w, const BlockBranchIds<S>& p,
              const std::vector<uint8_t>& mask, bool cross_qv_mode) {
    int h = ops::relu(g, ops::conv1d(g, xn, p.conv_w, p.conv_b, w));
    h = ops::mask_cols(g, h, mask);
    int q_in = h, k_in = h, v_in = h;
    if (role == Role::decoder) {
        int hc = ops::concat(g, std::vector<int>{h, cross}, 0);
        q_in = hc;
        if (cross_qv_mode)
            v_in = hc;  // concat drives Q and V, K from previous layer
        else
            k_in = hc;  // concat drives Q and K, V from previous layer
    }
    int Q = ops::linear(g, p.q_w, q_in, p.q_b);
    int K = ops::linear(g, p.k_w, k_in);
    int V = ops::linear(g, p.v_w, v_in, p.v_b);
    int att = ops::windowed_attention(g, Q, K, V, w, mask);
    return ops::linear(g, p.out_w, att, p.out_b);
}

}  // namespace detail

// One DA block: instance norm, two dilated conv+attention branches with
// windows w_inc / w_dec (conv dilation equals the branch window), 1x1
// fusion of the concatenated branch outputs, residual add.
// `cross` must be a valid node id iff spec.role == decoder.
template <typename S>
int da_block_forward(Graph<S>& g, int x, int cross, const BlockSpec& spec,
                     const BlockParamIds<S>& p, const std::vector<uint8_t>& mask,
                     bool cross_qv_mode = false) {
    if (spec.role == Role::decoder && cross < 0)
        throw ConfigError("da_block_forward: decoder block requires a cross-connection input");
    if (spec.role == Role::encoder && cross >= 0)
        throw ConfigError("da_block_forward: encoder block must not receive a cross input");
    if (cross >= 0 && g.shape(cross) != g.shape(x))
        throw ShapeError("da_block_forward: cross shape " + shape_str(g.shape(cross)) +
                         " != input shape " + shape_str(g.shape(x)));
    int xn = ops::instance_norm(g, x, mask);
    int b1 = detail::da_branch(g, xn, cross, spec.role, spec.w_inc(), p.inc, mask, cross_qv_mode);
    int b2 = detail::da_branch(g, xn, cross, spec.role, spec.w_dec(), p.dec, mask, cross_qv_mode);
    int both = ops::concat(g, std::vector<int>{b1, b2}, 0);
    int fused = ops::linear(g, p.fuse_w, both, p.fuse_b);
    fused = ops::mask_cols(g, fused, mask);
    return ops::add(g, x, fused);
}

}  // namespace dxf
