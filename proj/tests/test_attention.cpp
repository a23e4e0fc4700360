#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <unordered_map>

#include "dxf/attention.hpp"
#include "dxf/gradcheck.hpp"
#include "dxf/serial_ref.hpp"

using namespace dxf;

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, std::mt19937_64& rng, double scl = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(-scl, scl);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

// Binds fresh random leaves for one DA block and exposes them by name.
struct BlockFixture {
    std::vector<ParamDef> defs;
    std::unordered_map<std::string, int> ids;

    BlockFixture(Graph<double>& g, int F, int d, bool decoder_wiring, bool cross_qv_mode,
                 std::mt19937_64& rng, double scl = 0.5) {
        append_block_params(defs, "blk", F, d, decoder_wiring, cross_qv_mode);
        for (const auto& def : defs) ids[def.name] = g.leaf(rand_tensor(def.shape, rng, scl), false);
    }

    BlockBranchIds<double> branch(const std::string& br) const {
        auto id = [&](const std::string& k) { return ids.at("blk." + br + "." + k); };
        return BlockBranchIds<double>{id("conv.w"), id("conv.b"), id("q.w"), id("q.b"),
                                      id("k.w"),    id("v.w"),    id("v.b"), id("out.w"), id("out.b")};
    }

    BlockParamIds<double> all() const {
        return BlockParamIds<double>{branch("inc"), branch("dec"), ids.at("blk.fuse.w"),
                                     ids.at("blk.fuse.b")};
    }
};

}  // namespace

TEST_CASE("window sizes follow the 2^i / 2^(N-i) schedules") {
    CHECK(window_size(Branch::increasing, 1, 9) == 2);
    CHECK(window_size(Branch::decreasing, 1, 9) == 256);
    CHECK(window_size(Branch::decreasing, 9, 9) == 1);
    CHECK(window_size(Branch::increasing, 9, 9) == 512);
    CHECK(window_size(Branch::increasing, 1, 7) == 2);
    CHECK(window_size(Branch::decreasing, 1, 7) == 64);

    CHECK_THROWS_AS(window_size(Branch::increasing, 0, 9), ConfigError);
    CHECK_THROWS_AS(window_size(Branch::increasing, 10, 9), ConfigError);
    CHECK_THROWS_AS(window_size(Branch::decreasing, 1, 0), ConfigError);
}

TEST_CASE("branch window product is constant 2^N across a stage") {
    for (int N : {3, 5, 7, 9}) {
        for (int i = 1; i <= N; ++i) {
            BlockSpec spec{i, N, Role::encoder};
            CHECK(spec.w_inc() == (1 << i));
            CHECK(spec.w_dec() == (1 << (N - i)));
            CHECK(static_cast<long long>(spec.w_inc()) * spec.w_dec() == (1LL << N));
        }
    }
}

TEST_CASE("windowed attention equals dense block-diagonal attention (seed 42, T=6, w=2)") {
    std::mt19937_64 rng(42);
    const int d = 3, T = 6, w = 2;
    auto q = rand_tensor({d, T}, rng);
    auto k = rand_tensor({d, T}, rng);
    auto v = rand_tensor({d, T}, rng);
    std::vector<uint8_t> mask(T, 1);

    Graph<double> g;
    int out = ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), w, mask);

    std::vector<double> dense(static_cast<size_t>(d) * T), weights(static_cast<size_t>(T) * T);
    serial::dense_masked_attention<double>(
        d, T, q.data.data(), k.data.data(), v.data.data(), mask,
        [w](int a, int b) { return a / w == b / w; }, dense.data(), weights.data());

    for (size_t i = 0; i < dense.size(); ++i)
        CHECK(std::abs(g.val(out)[i] - dense[i]) <= 1e-12);
    // cross-chunk weights are exactly zero in the materialized dense matrix
    for (int a = 0; a < T; ++a)
        for (int b = 0; b < T; ++b)
            if (a / w != b / w) CHECK(weights[static_cast<size_t>(a) * T + b] == 0.0);
}

TEST_CASE("padded frames get zero weight and zero output") {
    std::mt19937_64 rng(11);
    const int d = 4, T = 7, w = 4;
    auto q = rand_tensor({d, T}, rng);
    auto k = rand_tensor({d, T}, rng);
    auto v = rand_tensor({d, T}, rng);
    std::vector<uint8_t> mask(T, 1);
    mask[2] = 0;
    mask[6] = 0;

    Graph<double> g;
    int out = ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), w, mask);
    for (int c = 0; c < d; ++c) {
        CHECK(g.val(out)[static_cast<size_t>(c) * T + 2] == 0.0);
        CHECK(g.val(out)[static_cast<size_t>(c) * T + 6] == 0.0);
    }

    std::vector<double> dense(static_cast<size_t>(d) * T), weights(static_cast<size_t>(T) * T);
    serial::dense_masked_attention<double>(
        d, T, q.data.data(), k.data.data(), v.data.data(), mask,
        [w](int a, int b) { return a / w == b / w; }, dense.data(), weights.data());
    for (int a = 0; a < T; ++a)
        for (int b = 0; b < T; ++b)
            if (!mask[static_cast<size_t>(a)] || !mask[static_cast<size_t>(b)] || a / w != b / w)
                CHECK(weights[static_cast<size_t>(a) * T + b] == 0.0);
    for (size_t i = 0; i < dense.size(); ++i)
        CHECK(std::abs(g.val(out)[i] - dense[i]) <= 1e-12);
}

TEST_CASE("w=1 returns V on unmasked frames") {
    std::mt19937_64 rng(12);
    const int d = 3, T = 5;
    auto q = rand_tensor({d, T}, rng);
    auto k = rand_tensor({d, T}, rng);
    auto v = rand_tensor({d, T}, rng);
    std::vector<uint8_t> mask(T, 1);
    mask[3] = 0;

    Graph<double> g;
    int out = ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), 1, mask);
    for (int c = 0; c < d; ++c)
        for (int t = 0; t < T; ++t) {
            double want = mask[static_cast<size_t>(t)] ? v.at(c, t) : 0.0;
            CHECK(g.val(out)[static_cast<size_t>(c) * T + t] == want);
        }
}

TEST_CASE("w >= T with zero Q averages the unmasked V frames") {
    std::mt19937_64 rng(13);
    const int d = 2, T = 6;
    auto q = Tensor<double>::zeros({d, T});
    auto k = rand_tensor({d, T}, rng);
    auto v = rand_tensor({d, T}, rng);
    std::vector<uint8_t> mask(T, 1);
    mask[0] = 0;

    Graph<double> g;
    int out = ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), 8, mask);
    for (int c = 0; c < d; ++c) {
        double mean = 0;
        int m = 0;
        for (int t = 0; t < T; ++t)
            if (mask[static_cast<size_t>(t)]) {
                mean += v.at(c, t);
                ++m;
            }
        mean /= m;
        for (int t = 1; t < T; ++t)
            CHECK(g.val(out)[static_cast<size_t>(c) * T + t] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("w >= T without padding equals unmasked dense attention bitwise") {
    std::mt19937_64 rng(14);
    const int d = 4, T = 9;
    auto q = rand_tensor({d, T}, rng);
    auto k = rand_tensor({d, T}, rng);
    auto v = rand_tensor({d, T}, rng);
    std::vector<uint8_t> mask(T, 1);

    Graph<double> g;
    int out = ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), 16, mask);
    std::vector<double> dense(static_cast<size_t>(d) * T);
    serial::dense_masked_attention<double>(d, T, q.data.data(), k.data.data(), v.data.data(), mask,
                                           [](int, int) { return true; }, dense.data());
    for (size_t i = 0; i < dense.size(); ++i) CHECK(g.val(out)[i] == dense[i]);
}

TEST_CASE("da block output shape equals input shape for every block index") {
    std::mt19937_64 rng(21);
    const int F = 4, d = 4, N = 4, T = 10;
    std::vector<uint8_t> mask(T, 1);
    for (int i = 1; i <= N; ++i) {
        Graph<double> g;
        BlockFixture fx(g, F, d, false, false, rng);
        int x = g.constant(rand_tensor({F, T}, rng));
        int y = da_block_forward(g, x, -1, BlockSpec{i, N, Role::encoder}, fx.all(), mask, false);
        CHECK(g.shape(y) == std::vector<int>{F, T});
    }
}

TEST_CASE("zero fusion weights make the block the identity map") {
    std::mt19937_64 rng(22);
    const int F = 4, d = 4, T = 8;
    std::vector<uint8_t> mask(T, 1);
    Graph<double> g;
    BlockFixture fx(g, F, d, false, false, rng);
    g.val(fx.ids.at("blk.fuse.w")).assign(static_cast<size_t>(F) * 2 * F, 0.0);
    g.val(fx.ids.at("blk.fuse.b")).assign(static_cast<size_t>(F), 0.0);
    auto xt = rand_tensor({F, T}, rng);
    int x = g.constant(xt);
    int y = da_block_forward(g, x, -1, BlockSpec{2, 3, Role::encoder}, fx.all(), mask, false);
    CHECK(g.val(y) == xt.data);
}

TEST_CASE("fusion selecting branch 1 matches a single-branch reference") {
    std::mt19937_64 rng(23);
    const int F = 4, d = 4, T = 8;
    const BlockSpec spec{2, 3, Role::encoder};
    std::vector<uint8_t> mask(T, 1);
    Graph<double> g;
    BlockFixture fx(g, F, d, false, false, rng);
    // zero the second half of the fusion input channels (branch 2)
    for (int o = 0; o < F; ++o)
        for (int i = F; i < 2 * F; ++i)
            g.val(fx.ids.at("blk.fuse.w"))[static_cast<size_t>(o) * 2 * F + i] = 0.0;
    const std::vector<double> fw = g.val(fx.ids.at("blk.fuse.w"));
    auto xt = rand_tensor({F, T}, rng);
    int y = da_block_forward(g, g.constant(xt), -1, spec, fx.all(), mask, false);

    // reference: single dilated-conv+attention branch, first half of the
    // fusion matrix as its F x F output projection, plus bias and residual
    Graph<double> r;
    auto rid = [&](const std::string& k) { return r.constant(Tensor<double>(g.shape(fx.ids.at(k)), g.val(fx.ids.at(k)))); };
    int xn = ops::instance_norm(r, r.constant(xt), mask);
    int h = ops::mask_cols(r, ops::relu(r, ops::conv1d(r, xn, rid("blk.inc.conv.w"), rid("blk.inc.conv.b"), spec.w_inc())), mask);
    int Q = ops::linear(r, rid("blk.inc.q.w"), h, rid("blk.inc.q.b"));
    int K = ops::linear(r, rid("blk.inc.k.w"), h);
    int V = ops::linear(r, rid("blk.inc.v.w"), h, rid("blk.inc.v.b"));
    int att = ops::windowed_attention(r, Q, K, V, spec.w_inc(), mask);
    int b1 = ops::linear(r, rid("blk.inc.out.w"), att, rid("blk.inc.out.b"));
    Tensor<double> fuse_left = Tensor<double>::zeros({F, F});
    for (int o = 0; o < F; ++o)
        for (int i = 0; i < F; ++i) fuse_left.at(o, i) = fw[static_cast<size_t>(o) * 2 * F + i];
    int fused = ops::linear(r, r.constant(fuse_left), b1, rid("blk.fuse.b"));
    fused = ops::mask_cols(r, fused, mask);
    int want = ops::add(r, r.constant(xt), fused);

    for (size_t i = 0; i < r.val(want).size(); ++i)
        CHECK(g.val(y)[i] == doctest::Approx(r.val(want)[i]).epsilon(1e-12));
}

TEST_CASE("decoder wiring errors and cross sensitivity") {
    std::mt19937_64 rng(24);
    const int F = 4, d = 4, T = 8;
    std::vector<uint8_t> mask(T, 1);

    Graph<double> g;
    BlockFixture enc_fx(g, F, d, false, false, rng);
    BlockFixture dec_fx(g, F, d, true, false, rng);
    int x = g.constant(rand_tensor({F, T}, rng));
    int cross = g.constant(rand_tensor({F, T}, rng));
    int bad_cross = g.constant(rand_tensor({F, T + 1}, rng));

    CHECK_THROWS_AS(da_block_forward(g, x, -1, BlockSpec{1, 3, Role::decoder}, dec_fx.all(), mask, false),
                    ConfigError);
    CHECK_THROWS_AS(da_block_forward(g, x, cross, BlockSpec{1, 3, Role::encoder}, enc_fx.all(), mask, false),
                    ConfigError);
    std::vector<uint8_t> mask9(T + 1, 1);
    CHECK_THROWS_AS(da_block_forward(g, x, bad_cross, BlockSpec{1, 3, Role::decoder}, dec_fx.all(), mask, false),
                    ShapeError);

    int y1 = da_block_forward(g, x, cross, BlockSpec{1, 3, Role::decoder}, dec_fx.all(), mask, false);
    auto bumped = g.tensor(cross);
    bumped.data[3] += 0.5;
    int y2 = da_block_forward(g, x, g.constant(bumped), BlockSpec{1, 3, Role::decoder}, dec_fx.all(), mask, false);
    CHECK(g.val(y1) != g.val(y2));
}

TEST_CASE("da block gradients match central differences in both roles") {
    const int F = 4, d = 4, T = 8;
    const std::vector<uint8_t> mask(T, 1);
    for (bool decoder : {false, true}) {
        for (int seed = 0; seed < 3; ++seed) {
            std::mt19937_64 rng(400 + static_cast<std::uint64_t>(seed));
            std::vector<ParamDef> defs;
            append_block_params(defs, "blk", F, d, decoder, false);
            std::vector<Tensor<double>> leaves;
            leaves.push_back(rand_tensor({F, T}, rng));
            if (decoder) leaves.push_back(rand_tensor({F, T}, rng));
            for (const auto& def : defs) leaves.push_back(rand_tensor(def.shape, rng, 0.5));
            leaves.push_back(rand_tensor({F, T}, rng));
            double e = grad_check(
                [defs, decoder, &mask](Graph<double>& g, const std::vector<int>& ids) {
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
                    BlockSpec spec{2, 3, decoder ? Role::decoder : Role::encoder};
                    int y = da_block_forward(g, ids[0], decoder ? ids[1] : -1, spec, bp, mask, false);
                    return ops::sum_all(g, ops::mul(g, y, ids[at]));
                },
                leaves);
            CHECK(e <= 1e-5);
        }
    }
}
