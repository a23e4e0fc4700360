#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "dxf/data_io.hpp"
#include "dxf/model.hpp"

using namespace dxf;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.model_dim = 8;
    cfg.num_classes = 3;
    cfg.blocks_per_stage = 3;
    cfg.num_decoders = 1;
    cfg.seed = 7;
    return cfg;
}

Tensor<float> rand_features(int D, int T, std::mt19937_64& rng) {
    Tensor<float> t = Tensor<float>::zeros({D, T});
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : t.data) v = static_cast<float>(dist(rng));
    return t;
}

// Closed-form parameter count mirroring the layout contract.
std::int64_t expected_param_count(const ModelConfig& cfg) {
    const std::int64_t F = cfg.model_dim, D = cfg.input_dim, C = cfg.num_classes;
    const std::int64_t d = cfg.attn_dim();
    auto branch = [&](std::int64_t q_in, std::int64_t k_in, std::int64_t v_in) {
        return F * F * 3 + F          // conv.w, conv.b
               + d * q_in + d          // q.w, q.b
               + d * k_in              // k.w (no bias)
               + d * v_in + d          // v.w, v.b
               + F * d + F;            // out.w, out.b
    };
    const std::int64_t enc_block = 2 * branch(F, F, F) + 2 * F * F + F;
    const std::int64_t q_in = 2 * F;
    const std::int64_t k_in = cfg.cross_qv_mode ? F : 2 * F;
    const std::int64_t v_in = cfg.cross_qv_mode ? 2 * F : F;
    const std::int64_t dec_block = cfg.use_cross_connections
                                       ? 2 * branch(q_in, k_in, v_in) + 2 * F * F + F
                                       : enc_block;
    std::int64_t total = F * D + F + cfg.blocks_per_stage * enc_block + C * F + C;
    total += cfg.num_decoders * (F * C + F + cfg.blocks_per_stage * dec_block + C * F + C);
    return total;
}

}  // namespace

TEST_CASE("init_params is seed-deterministic") {
    auto cfg = toy_config();
    auto a = init_params<float>(cfg);
    auto b = init_params<float>(cfg);
    REQUIRE(a.values.size() == b.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i].data == b.values[i].data);

    cfg.seed = 8;
    auto c = init_params<float>(cfg);
    bool differs = false;
    for (size_t i = 0; i < a.values.size(); ++i)
        if (a.values[i].data != c.values[i].data) differs = true;
    CHECK(differs);

    // biases start at zero
    for (size_t i = 0; i < a.names.size(); ++i)
        if (a.names[i].size() >= 2 && a.names[i].compare(a.names[i].size() - 2, 2, ".b") == 0)
            for (float v : a.values[i].data) CHECK(v == 0.0f);
}

TEST_CASE("parameter count matches the closed-form oracle") {
    for (bool qv : {false, true})
        for (bool cc : {false, true})
            for (int F : {8, 16, 64}) {
                ModelConfig cfg = toy_config();
                cfg.model_dim = F;
                cfg.cross_qv_mode = qv;
                cfg.use_cross_connections = cc;
                auto ps = init_params<float>(cfg);
                CHECK(ps.count() == expected_param_count(cfg));
            }

    ModelConfig enc_only = toy_config();
    enc_only.num_decoders = 0;
    auto ps = init_params<float>(enc_only);
    CHECK(ps.count() == expected_param_count(enc_only));
    for (const auto& n : ps.names) CHECK(n.substr(0, 4) == "enc.");
}

TEST_CASE("stage count and shape laws") {
    auto cfg = toy_config();
    std::mt19937_64 rng(1);
    const int T = 12;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);

    auto ps = init_params<float>(cfg);
    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto stages = dxformer_forward(bm, g.constant(feats), mask);
    REQUIRE(static_cast<int>(stages.size()) == 1 + cfg.num_decoders);
    for (const auto& st : stages) {
        CHECK(g.shape(st.logits) == std::vector<int>{cfg.num_classes, T});
        REQUIRE(static_cast<int>(st.block_feats.size()) == cfg.blocks_per_stage);
        for (int f : st.block_feats) CHECK(g.shape(f) == std::vector<int>{cfg.model_dim, T});
    }
    auto pred = argmax_cols(g, stages.back().logits);
    REQUIRE(static_cast<int>(pred.size()) == T);
    for (int p : pred) {
        CHECK(p >= 0);
        CHECK(p < cfg.num_classes);
    }

    ModelConfig enc_only = cfg;
    enc_only.num_decoders = 0;
    auto ps0 = init_params<float>(enc_only);
    Graph<float> g0;
    auto bm0 = bind_params(g0, enc_only, ps0, false);
    CHECK(dxformer_forward(bm0, g0.constant(feats), mask).size() == 1);
}

TEST_CASE("encoder matches a straight-line re-implementation bitwise") {
    auto cfg = toy_config();
    std::mt19937_64 rng(2);
    const int T = 16;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto so = encoder_forward(bm, g.constant(feats), mask);

    // straight-line version: same op sequence, no StageOutput bookkeeping
    Graph<float> r;
    auto id = [&](const std::string& n) { return r.constant(ps.values[static_cast<size_t>(ps.find(n))]); };
    int h = ops::mask_cols(r, ops::linear(r, id("enc.in.w"), r.constant(feats), id("enc.in.b")), mask);
    for (int j = 0; j < cfg.blocks_per_stage; ++j) {
        std::string p = "enc.blk" + std::to_string(j);
        auto branch = [&](const char* br) {
            std::string b = p + "." + br + ".";
            return BlockBranchIds<float>{id(b + "conv.w"), id(b + "conv.b"), id(b + "q.w"),
                                         id(b + "q.b"),    id(b + "k.w"),    id(b + "v.w"),
                                         id(b + "v.b"),    id(b + "out.w"),  id(b + "out.b")};
        };
        BlockParamIds<float> bp{branch("inc"), branch("dec"), id(p + ".fuse.w"), id(p + ".fuse.b")};
        h = da_block_forward(r, h, -1, BlockSpec{j + 1, cfg.blocks_per_stage, Role::encoder}, bp, mask, false);
    }
    int logits = ops::linear(r, id("enc.out.w"), h, id("enc.out.b"));

    CHECK(g.val(so.logits) == r.val(logits));
}

TEST_CASE("encoder rejects bad inputs") {
    auto cfg = toy_config();
    auto ps = init_params<float>(cfg);
    std::mt19937_64 rng(3);
    std::vector<uint8_t> mask(4, 1);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto bad = rand_features(cfg.input_dim, 4, rng);
    bad.data[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(encoder_forward(bm, g.constant(bad), mask), DataError);

    auto wrong_d = rand_features(cfg.input_dim + 1, 4, rng);
    CHECK_THROWS_AS(encoder_forward(bm, g.constant(wrong_d), mask), ShapeError);
}

TEST_CASE("decoder validates the cross-connection list and reacts to its order") {
    auto cfg = toy_config();
    std::mt19937_64 rng(4);
    const int T = 10;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto enc = encoder_forward(bm, g.constant(feats), mask);
    int probs = ops::softmax(g, enc.logits, 0);

    std::vector<int> short_list(enc.block_feats.begin(), enc.block_feats.end() - 1);
    CHECK_THROWS_AS(decoder_forward(bm, 0, probs, short_list, mask), ConfigError);

    auto dec = decoder_forward(bm, 0, probs, enc.block_feats, mask);
    std::vector<int> permuted = enc.block_feats;
    std::swap(permuted[0], permuted[2]);
    auto dec_perm = decoder_forward(bm, 0, probs, permuted, mask);
    CHECK(g.val(dec.logits) != g.val(dec_perm.logits));
}

TEST_CASE("perturbing enc_feats[j] leaves decoder blocks before j unchanged") {
    auto cfg = toy_config();
    std::mt19937_64 rng(5);
    const int T = 10;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto enc = encoder_forward(bm, g.constant(feats), mask);
    int probs = ops::softmax(g, enc.logits, 0);
    auto base = decoder_forward(bm, 0, probs, enc.block_feats, mask);

    const int j = 1;
    auto bumped_feat = g.tensor(enc.block_feats[static_cast<size_t>(j)]);
    bumped_feat.data[0] += 1.0f;
    std::vector<int> bumped = enc.block_feats;
    bumped[static_cast<size_t>(j)] = g.constant(bumped_feat);
    auto dec = decoder_forward(bm, 0, probs, bumped, mask);

    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        const auto& x = g.val(base.block_feats[static_cast<size_t>(b)]);
        const auto& y = g.val(dec.block_feats[static_cast<size_t>(b)]);
        if (b < j)
            CHECK(x == y);
        else
            CHECK(x != y);
    }
    CHECK(g.val(base.logits) != g.val(dec.logits));
}

TEST_CASE("no-CC ablation ignores the encoder features") {
    auto cfg = toy_config();
    cfg.use_cross_connections = false;
    std::mt19937_64 rng(6);
    const int T = 10;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto enc = encoder_forward(bm, g.constant(feats), mask);
    int probs = ops::softmax(g, enc.logits, 0);
    auto a = decoder_forward(bm, 0, probs, enc.block_feats, mask);
    std::vector<int> permuted = enc.block_feats;
    std::reverse(permuted.begin(), permuted.end());
    auto b = decoder_forward(bm, 0, probs, permuted, mask);
    CHECK(g.val(a.logits) == g.val(b.logits));
}

TEST_CASE("zero fusion weights reduce decoder logits to the conv-only path") {
    auto cfg = toy_config();
    std::mt19937_64 rng(7);
    const int T = 8;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);
    for (size_t i = 0; i < ps.names.size(); ++i)
        if (ps.names[i].find(".fuse.") != std::string::npos)
            ps.values[i].data.assign(ps.values[i].data.size(), 0.0f);

    Graph<float> g;
    auto bm = bind_params(g, cfg, ps, false);
    auto enc = encoder_forward(bm, g.constant(feats), mask);
    int probs = ops::softmax(g, enc.logits, 0);
    auto dec = decoder_forward(bm, 0, probs, enc.block_feats, mask);

    Graph<float> r;
    auto id = [&](const std::string& n) { return r.constant(ps.values[static_cast<size_t>(ps.find(n))]); };
    int h0 = ops::mask_cols(r, ops::linear(r, id("enc.in.w"), r.constant(feats), id("enc.in.b")), mask);
    int enc_logits = ops::linear(r, id("enc.out.w"), h0, id("enc.out.b"));
    int probs_r = ops::softmax(r, enc_logits, 0);
    int h1 = ops::mask_cols(r, ops::linear(r, id("dec0.in.w"), probs_r, id("dec0.in.b")), mask);
    int dec_logits = ops::linear(r, id("dec0.out.w"), h1, id("dec0.out.b"));

    CHECK(g.val(dec.logits) == r.val(dec_logits));
}

TEST_CASE("logits stay finite over many random seeds") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(9000 + static_cast<std::uint64_t>(seed));
        ModelConfig cfg = toy_config();
        cfg.seed = rng();
        const int T = 2 + static_cast<int>(rng() % 63);
        auto feats = rand_features(cfg.input_dim, T, rng);
        std::vector<uint8_t> mask(static_cast<size_t>(T), 1);
        auto ps = init_params<float>(cfg);
        Graph<float> g;
        auto bm = bind_params(g, cfg, ps, false);
        auto stages = dxformer_forward(bm, g.constant(feats), mask);
        for (const auto& st : stages)
            for (float v : g.val(st.logits)) CHECK(std::isfinite(v));
    }
}

TEST_CASE("checkpoint round-trip reproduces the forward pass bitwise") {
    auto cfg = toy_config();
    std::mt19937_64 rng(10);
    const int T = 14;
    auto feats = rand_features(cfg.input_dim, T, rng);
    std::vector<uint8_t> mask(T, 1);
    auto ps = init_params<float>(cfg);

    io::Checkpoint ck;
    ck.cfg = cfg;
    ck.params = ps;
    auto path = (std::filesystem::temp_directory_path() / "dxf_model_roundtrip.dxck").string();
    io::save_checkpoint(path, ck);
    auto loaded = io::load_checkpoint(path);
    std::filesystem::remove(path);

    Graph<float> g1, g2;
    auto bm1 = bind_params(g1, cfg, ps, false);
    auto bm2 = bind_params(g2, loaded.cfg, loaded.params, false);
    auto s1 = dxformer_forward(bm1, g1.constant(feats), mask);
    auto s2 = dxformer_forward(bm2, g2.constant(feats), mask);
    REQUIRE(s1.size() == s2.size());
    for (size_t i = 0; i < s1.size(); ++i) CHECK(g1.val(s1[i].logits) == g2.val(s2[i].logits));
}
