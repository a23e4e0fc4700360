#pragma once

// DXFormer assembly: one encoder and `num_decoders` decoders, each a
// stack of N DA blocks. Decoder block j cross-attends the encoder's
// block-j features; stage s (s >= 1) consumes the class softmax of the
// previous stage's logits.

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dxf/attention.hpp"
#include "dxf/graph.hpp"

namespace dxf {

struct ModelConfig {
    int input_dim = 32;       // D
    int model_dim = 64;       // F
    int num_classes = 2;      // C
    int blocks_per_stage = 9; // N (9 small-dataset preset, 7 large-dataset preset)
    int num_decoders = 3;
    bool cross_qv_mode = false;          // concat drives Q,V instead of Q,K
    bool use_cross_connections = true;   // false = no-CC ablation (self-attention decoders)
    std::uint64_t seed = 1;

    int attn_dim() const { return std::max(4, model_dim / 4); }

    void validate() const {
        if (input_dim < 1 || model_dim < 1) throw ConfigError("model dims must be positive");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
        if (num_decoders < 0) throw ConfigError("num_decoders must be >= 0");
    }
};

template <typename S>
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<Tensor<S>> values;  // Tensor::grad used by the optimizer
    std::unordered_map<std::string, int> index;

    int find(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& t : values) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& t : values) t.zero_grad();
    }

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        out.names = names;
        out.index = index;
        for (const auto& t : values) out.values.push_back(t.template cast<U>());
        return out;
    }
};

inline std::vector<ParamDef> param_layout(const ModelConfig& cfg) {
    cfg.validate();
    const int F = cfg.model_dim, D = cfg.input_dim, C = cfg.num_classes, N = cfg.blocks_per_stage;
    const int d = cfg.attn_dim();
    std::vector<ParamDef> defs;
    defs.push_back({"enc.in.w", {F, D}, D});
    defs.push_back({"enc.in.b", {F}, D});
    for (int j = 0; j < N; ++j)
        append_block_params(defs, "enc.blk" + std::to_string(j), F, d, false, cfg.cross_qv_mode);
    defs.push_back({"enc.out.w", {C, F}, F});
    defs.push_back({"enc.out.b", {C}, F});
    for (int s = 0; s < cfg.num_decoders; ++s) {
        std::string p = "dec" + std::to_string(s);
        defs.push_back({p + ".in.w", {F, C}, C});
        defs.push_back({p + ".in.b", {F}, C});
        for (int j = 0; j < N; ++j)
            append_block_params(defs, p + ".blk" + std::to_string(j), F, d,
                                cfg.use_cross_connections, cfg.cross_qv_mode);
        defs.push_back({p + ".out.w", {C, F}, F});
        defs.push_back({p + ".out.b", {C}, F});
    }
    return defs;
}

// Seeded uniform fan-in initializer: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero.
template <typename S>
ParameterSet<S> init_params(const ModelConfig& cfg) {
    ParameterSet<S> ps;
    std::mt19937_64 rng(cfg.seed);
    for (const auto& def : param_layout(cfg)) {
        Tensor<S> t = Tensor<S>::zeros(def.shape);
        const bool is_bias = def.name.size() >= 2 && def.name.compare(def.name.size() - 2, 2, ".b") == 0;
        if (!is_bias) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(def.fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : t.data) v = static_cast<S>(dist(rng));
        }
        ps.index[def.name] = static_cast<int>(ps.values.size());
        ps.names.push_back(def.name);
        ps.values.push_back(std::move(t));
    }
    return ps;
}

// Parameters bound as graph leaves for one forward/backward pass.
template <typename S>
struct BoundModel {
    Graph<S>* g = nullptr;
    const ModelConfig* cfg = nullptr;
    std::unordered_map<std::string, int> ids;

    int id(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw ConfigError("unbound parameter " + name);
        return it->second;
    }

    BlockParamIds<S> block(const std::string& prefix) const {
        auto branch = [&](const char* br) {
            std::string p = prefix + "." + br + ".";
            return BlockBranchIds<S>{id(p + "conv.w"), id(p + "conv.b"), id(p + "q.w"),
                                     id(p + "q.b"),    id(p + "k.w"),    id(p + "v.w"),
                                     id(p + "v.b"),    id(p + "out.w"),  id(p + "out.b")};
        };
        return BlockParamIds<S>{branch("inc"), branch("dec"), id(prefix + ".fuse.w"),
                                id(prefix + ".fuse.b")};
    }
};

template <typename S>
BoundModel<S> bind_params(Graph<S>& g, const ModelConfig& cfg, const ParameterSet<S>& ps,
                          bool requires_grad = true) {
    BoundModel<S> bm;
    bm.g = &g;
    bm.cfg = &cfg;
    for (size_t i = 0; i < ps.values.size(); ++i) bm.ids[ps.names[i]] = g.leaf(ps.values[i], requires_grad);
    return bm;
}

// Adds the bound-leaf gradients into the parameter grad buffers.
template <typename S>
void accumulate_grads(const BoundModel<S>& bm, ParameterSet<S>& ps) {
    for (size_t i = 0; i < ps.values.size(); ++i) {
        int id = bm.id(ps.names[i]);
        const auto& gsrc = bm.g->grad(id);
        ps.values[i].ensure_grad();
        for (size_t j = 0; j < gsrc.size(); ++j) ps.values[i].grad[j] += gsrc[j];
    }
}

struct StageOutput {
    int logits = -1;                // [C x T]
    std::vector<int> block_feats;   // N post-residual feature maps [F x T]
};

template <typename S>
StageOutput encoder_forward(BoundModel<S>& bm, int features, const std::vector<uint8_t>& mask) {
    Graph<S>& g = *bm.g;
    const ModelConfig& cfg = *bm.cfg;
    for (S v : g.val(features))
        if (!std::isfinite(static_cast<double>(v))) throw DataError("encoder_forward: non-finite input feature");
    if (g.shape(features).size() != 2 || g.shape(features)[0] != cfg.input_dim)
        throw ShapeError("encoder_forward: features " + shape_str(g.shape(features)) + ", expected [" +
                         std::to_string(cfg.input_dim) + " x T]");
    StageOutput so;
    int h = ops::mask_cols(g, ops::linear(g, bm.id("enc.in.w"), features, bm.id("enc.in.b")), mask);
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
        BlockSpec spec{j + 1, cfg.blocks_per_stage, Role::encoder};
        h = da_block_forward(g, h, -1, spec, bm.block("enc.blk" + std::to_string(j)), mask,
                             cfg.cross_qv_mode);
        so.block_feats.push_back(h);
    }
    so.logits = ops::linear(g, bm.id("enc.out.w"), h, bm.id("enc.out.b"));
    return so;
}

template <typename S>
StageOutput decoder_forward(BoundModel<S>& bm, int dec_index, int prev_probs,
                            const std::vector<int>& enc_feats, const std::vector<uint8_t>& mask) {
    Graph<S>& g = *bm.g;
    const ModelConfig& cfg = *bm.cfg;
    if (static_cast<int>(enc_feats.size()) != cfg.blocks_per_stage)
        throw ConfigError("decoder_forward: got " + std::to_string(enc_feats.size()) +
                          " encoder feature maps, expected " + std::to_string(cfg.blocks_per_stage));
    const std::string p = "dec" + std::to_string(dec_index);
    StageOutput so;
    int h = ops::mask_cols(g, ops::linear(g, bm.id(p + ".in.w"), prev_probs, bm.id(p + ".in.b")), mask);
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
        Role role = cfg.use_cross_connections ? Role::decoder : Role::encoder;
        BlockSpec spec{j + 1, cfg.blocks_per_stage, role};
        int cross = cfg.use_cross_connections ? enc_feats[static_cast<size_t>(j)] : -1;
        h = da_block_forward(g, h, cross, spec, bm.block(p + ".blk" + std::to_string(j)), mask,
                             cfg.cross_qv_mode);
        so.block_feats.push_back(h);
    }
    so.logits = ops::linear(g, bm.id(p + ".out.w"), h, bm.id(p + ".out.b"));
    return so;
}

// Full pipeline: encoder stage then num_decoders refinement stages, each
// fed the class softmax of the previous stage's logits. All decoders
// cross-attend the single encoder's block features.
template <typename S>
std::vector<StageOutput> dxformer_forward(BoundModel<S>& bm, int features,
                                          const std::vector<uint8_t>& mask) {
    Graph<S>& g = *bm.g;
    std::vector<StageOutput> stages;
    stages.push_back(encoder_forward(bm, features, mask));
    for (int s = 0; s < bm.cfg->num_decoders; ++s) {
        int probs = ops::softmax(g, stages.back().logits, 0);
        stages.push_back(decoder_forward(bm, s, probs, stages.front().block_feats, mask));
    }
    return stages;
}

// Per-frame argmax over classes of [C x T] logits.
template <typename S>
std::vector<int> argmax_cols(const Graph<S>& g, int logits) {
    const auto& s = g.shape(logits);
    const int C = s[0], T = s[1];
    const auto& v = g.val(logits);
    std::vector<int> out(static_cast<size_t>(T), 0);
    for (int t = 0; t < T; ++t) {
        S best = v[static_cast<size_t>(t)];
        for (int c = 1; c < C; ++c)
            if (v[static_cast<size_t>(c) * T + t] > best) {
                best = v[static_cast<size_t>(c) * T + t];
                out[static_cast<size_t>(t)] = c;
            }
    }
    return out;
}

}  // namespace dxf
