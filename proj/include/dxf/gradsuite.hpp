#pragma once

// The 64-bit finite-difference verification suite: every differentiable
// op, the DA block in both roles, the segmentation loss, and a full toy
// encoder+decoder model. Shared by the gradcheck CLI subcommand and the
// acceptance tests.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dxf/attention.hpp"
#include "dxf/gradcheck.hpp"
#include "dxf/model.hpp"
#include "dxf/training.hpp"

namespace dxf {

struct GradSuiteEntry {
    std::string name;
    double tolerance;
    double max_rel_err;
};

namespace gradsuite_detail {

inline Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scl = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(-scl, scl);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

inline BoundModel<double> rebind(Graph<double>& g, const ModelConfig& cfg,
                                 const std::vector<std::string>& names,
                                 const std::vector<int>& ids) {
    BoundModel<double> bm;
    bm.g = &g;
    bm.cfg = &cfg;
    for (size_t i = 0; i < names.size(); ++i) bm.ids[names[i]] = ids[i];
    return bm;
}

}  // namespace gradsuite_detail

// `seeds` controls how many random restarts each component gets; the
// reported error is the worst over seeds.
inline std::vector<GradSuiteEntry> run_grad_suite(int seeds = 20) {
    using gradsuite_detail::random_tensor;
    std::vector<GradSuiteEntry> results;

    auto run = [&](const std::string& name, double tol,
                   const std::function<double(std::mt19937_64&)>& one) {
        double worst = 0;
        for (int s = 0; s < seeds; ++s) {
            std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
            worst = std::max(worst, one(rng));
        }
        results.push_back({name, tol, worst});
    };

    const std::vector<uint8_t> mask8(8, 1);

    run("matmul", 1e-5, [&](std::mt19937_64& rng) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 5}, rng);
        return grad_check(
            [](Graph<double>& g, const std::vector<int>& ids) {
                return ops::sum_all(g, ops::matmul(g, ids[0], ids[1]));
            },
            {a, b});
    });

    run("conv1d", 1e-5, [&](std::mt19937_64& rng) {
        auto x = random_tensor({3, 8}, rng);
        auto w = random_tensor({2, 3, 3}, rng);
        auto b = random_tensor({2}, rng);
        double worst = 0;
        for (int dil : {1, 2, 4})
            worst = std::max(worst, grad_check(
                                        [dil](Graph<double>& g, const std::vector<int>& ids) {
                                            return ops::sum_all(g, ops::conv1d(g, ids[0], ids[1], ids[2], dil));
                                        },
                                        {x, w, b}));
        return worst;
    });

    run("softmax", 1e-5, [&](std::mt19937_64& rng) {
        auto x = random_tensor({4, 6}, rng);
        auto wgt = random_tensor({4, 6}, rng);  // weighting makes the check non-degenerate
        double worst = 0;
        for (int axis : {0, 1})
            worst = std::max(worst, grad_check(
                                        [axis](Graph<double>& g, const std::vector<int>& ids) {
                                            int s = ops::softmax(g, ids[0], axis);
                                            return ops::sum_all(g, ops::mul(g, s, ids[1]));
                                        },
                                        {x, wgt}));
        return worst;
    });

    run("elementwise", 1e-5, [&](std::mt19937_64& rng) {
        auto a = random_tensor({3, 5}, rng);
        auto b = random_tensor({3, 5}, rng);
        return grad_check(
            [](Graph<double>& g, const std::vector<int>& ids) {
                int r = ops::relu(g, ids[0]);
                int m = ops::mul(g, r, ids[1]);
                int s = ops::scale(g, ops::add(g, m, ids[0]), 0.7);
                return ops::sum_all(g, ops::mul(g, s, s));
            },
            {a, b});
    });

    run("concat", 1e-5, [&](std::mt19937_64& rng) {
        auto a = random_tensor({2, 4}, rng);
        auto b = random_tensor({3, 4}, rng);
        auto w = random_tensor({5, 4}, rng);
        return grad_check(
            [](Graph<double>& g, const std::vector<int>& ids) {
                int c = ops::concat(g, std::vector<int>{ids[0], ids[1]}, 0);
                return ops::sum_all(g, ops::mul(g, c, ids[2]));
            },
            {a, b, w});
    });

    run("instance_norm", 1e-5, [&](std::mt19937_64& rng) {
        auto x = random_tensor({3, 8}, rng);
        auto w = random_tensor({3, 8}, rng);
        return grad_check(
            [&mask8](Graph<double>& g, const std::vector<int>& ids) {
                int y = ops::instance_norm(g, ids[0], mask8);
                return ops::sum_all(g, ops::mul(g, y, ids[1]));
            },
            {x, w});
    });

    run("windowed_attention", 1e-5, [&](std::mt19937_64& rng) {
        auto q = random_tensor({4, 8}, rng);
        auto k = random_tensor({4, 8}, rng);
        auto v = random_tensor({4, 8}, rng);
        auto w = random_tensor({4, 8}, rng);
        double worst = 0;
        for (int win : {1, 2, 4, 8, 16})
            worst = std::max(worst, grad_check(
                                        [win, &mask8](Graph<double>& g, const std::vector<int>& ids) {
                                            int o = ops::windowed_attention(g, ids[0], ids[1], ids[2], win, mask8);
                                            return ops::sum_all(g, ops::mul(g, o, ids[3]));
                                        },
                                        {q, k, v, w}));
        return worst;
    });

    run("softmax_cross_entropy", 1e-6, [&](std::mt19937_64& rng) {
        auto x = random_tensor({5, 1}, rng, 2.0);
        std::vector<int> labels{static_cast<int>(rng() % 5)};
        std::vector<uint8_t> m1(1, 1);
        return grad_check(
            [labels, m1](Graph<double>& g, const std::vector<int>& ids) {
                int lp = ops::log_softmax_cols(g, ids[0]);
                return ops::nll_pick(g, lp, labels, m1);
            },
            {x});
    });

    run("seg_loss", 1e-5, [&](std::mt19937_64& rng) {
        const int C = 3, T = 6;
        auto x = random_tensor({C, T}, rng, 2.0);
        std::vector<int> labels(T);
        for (auto& l : labels) l = static_cast<int>(rng() % C);
        std::vector<uint8_t> m(T, 1);
        // Stop-gradient convention: the detached previous-frame branch of
        // the smoothing term is frozen at the base point for the numeric
        // side, matching the gradient the analytic pass defines.
        Graph<double> g0;
        int x0 = g0.leaf(x, false);
        auto frozen = std::make_shared<std::vector<double>>(g0.val(ops::log_softmax_cols(g0, x0)));
        return grad_check(
            [labels, m, frozen](Graph<double>& g, const std::vector<int>& ids) {
                int lp = ops::log_softmax_cols(g, ids[0]);
                int ce = ops::nll_pick(g, lp, labels, m);
                int sm = ops::smoothing_penalty(g, lp, m, 4.0, frozen.get());
                return ops::add(g, ce, ops::scale(g, sm, 0.15));
            },
            {x});
    });

    // DA block, encoder and decoder wiring, T=8 F=4: gradient w.r.t. x,
    // cross and every block parameter.
    for (bool decoder : {false, true}) {
        run(decoder ? "da_block_decoder" : "da_block_encoder", 1e-5, [&, decoder](std::mt19937_64& rng) {
            const int F = 4, d = 4, N = 3, i = 2;
            std::vector<ParamDef> defs;
            append_block_params(defs, "blk", F, d, decoder, false);
            std::vector<Tensor<double>> leaves;
            leaves.push_back(random_tensor({F, 8}, rng));  // x
            if (decoder) leaves.push_back(random_tensor({F, 8}, rng));  // cross
            for (const auto& def : defs) leaves.push_back(random_tensor(def.shape, rng, 0.5));
            auto wsum = random_tensor({F, 8}, rng);
            leaves.push_back(wsum);
            return grad_check(
                [defs, decoder, i, N, &mask8](Graph<double>& g, const std::vector<int>& ids) {
                    size_t at = decoder ? 2 : 1;
                    std::unordered_map<std::string, int> pm;
                    for (const auto& def : defs) pm[def.name] = ids[at++];
                    auto branch = [&](const std::string& br) {
                        std::string p = "blk." + br + ".";
                        return BlockBranchIds<double>{pm[p + "conv.w"], pm[p + "conv.b"], pm[p + "q.w"],
                                                      pm[p + "q.b"],    pm[p + "k.w"],    pm[p + "v.w"],
                                                      pm[p + "v.b"],    pm[p + "out.w"],  pm[p + "out.b"]};
                    };
                    BlockParamIds<double> bp{branch("inc"), branch("dec"), pm["blk.fuse.w"], pm["blk.fuse.b"]};
                    BlockSpec spec{i, N, decoder ? Role::decoder : Role::encoder};
                    int y = da_block_forward(g, ids[0], decoder ? ids[1] : -1, spec, bp, mask8, false);
                    return ops::sum_all(g, ops::mul(g, y, ids[at]));
                },
                leaves);
        });
    }

    // Full toy model end-to-end: encoder + 1 decoder, T=8 F=4 N=3.
    run("end_to_end_toy", 1e-4, [&](std::mt19937_64& rng) {
        ModelConfig cfg;
        cfg.input_dim = 5;
        cfg.model_dim = 4;
        cfg.num_classes = 3;
        cfg.blocks_per_stage = 3;
        cfg.num_decoders = 1;
        cfg.seed = rng();
        auto layout = param_layout(cfg);
        std::vector<std::string> names;
        std::vector<Tensor<double>> leaves;
        // Draw scale 2/sqrt(fan_in): large enough that attention-score
        // gradients clear the finite-difference noise floor, small enough
        // to stay away from relu kinks and softmax saturation.
        for (const auto& def : layout) {
            names.push_back(def.name);
            leaves.push_back(random_tensor(def.shape, rng, 2.0 / std::sqrt(static_cast<double>(def.fan_in))));
        }
        auto feats = random_tensor({cfg.input_dim, 8}, rng);
        leaves.push_back(feats);
        std::vector<int> labels(8);
        for (auto& l : labels) l = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.num_classes));
        std::vector<uint8_t> m(8, 1);
        return grad_check(
            [cfg, names, labels, m](Graph<double>& g, const std::vector<int>& ids) {
                std::vector<int> pids(ids.begin(), ids.end() - 1);
                auto bm = gradsuite_detail::rebind(g, cfg, names, pids);
                auto stages = dxformer_forward(bm, ids.back(), m);
                std::vector<int> logits;
                for (const auto& st : stages) logits.push_back(st.logits);
                return seg_loss(g, logits, labels, m, 0.0, 4.0);
            },
            leaves);
    });

    return results;
}

}  // namespace dxf
