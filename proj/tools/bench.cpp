// Benchmark of the OpenMP kernels against the serial reference
// implementations, with an equality check on the outputs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "dxf/graph.hpp"
#include "dxf/kernels.hpp"
#include "dxf/serial_ref.hpp"

using clk = std::chrono::steady_clock;

namespace {

double ms_since(clk::time_point t0) {
    return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

std::vector<float> randvec(size_t n, std::mt19937_64& rng) {
    std::vector<float> v(n);
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    for (auto& x : v) x = d(rng);
    return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace

int main() {
    std::mt19937_64 rng(7);
    std::printf("threads=%d\n", dxf::kernels::num_threads());

    {
        const int m = 256, k = 256, n = 256;
        auto a = randvec(static_cast<size_t>(m) * k, rng);
        auto b = randvec(static_cast<size_t>(k) * n, rng);
        std::vector<float> c1(static_cast<size_t>(m) * n), c2(c1.size());
        auto t0 = clk::now();
        for (int r = 0; r < 10; ++r) dxf::serial::matmul(m, k, n, a.data(), b.data(), c1.data());
        double serial = ms_since(t0) / 10;
        t0 = clk::now();
        for (int r = 0; r < 10; ++r) dxf::kernels::matmul(m, k, n, a.data(), b.data(), c2.data());
        double par = ms_since(t0) / 10;
        std::printf("matmul_256      serial=%8.3fms parallel=%8.3fms speedup=%5.2fx max_diff=%g\n",
                    serial, par, serial / par, max_abs_diff(c1, c2));
    }

    {
        const int cin = 64, cout = 64, T = 2048, K = 3, dil = 8;
        auto x = randvec(static_cast<size_t>(cin) * T, rng);
        auto w = randvec(static_cast<size_t>(cout) * cin * K, rng);
        auto b = randvec(static_cast<size_t>(cout), rng);
        std::vector<float> y1(static_cast<size_t>(cout) * T), y2(y1.size());
        auto t0 = clk::now();
        for (int r = 0; r < 10; ++r) dxf::serial::conv1d(cin, cout, T, K, dil, x.data(), w.data(), b.data(), y1.data());
        double serial = ms_since(t0) / 10;
        t0 = clk::now();
        for (int r = 0; r < 10; ++r) dxf::kernels::conv1d(cin, cout, T, K, dil, x.data(), w.data(), b.data(), y2.data());
        double par = ms_since(t0) / 10;
        std::printf("conv1d_dil8     serial=%8.3fms parallel=%8.3fms speedup=%5.2fx max_diff=%g\n",
                    serial, par, serial / par, max_abs_diff(y1, y2));
    }

    {
        const int d = 16, T = 2048, w = 64;
        std::vector<uint8_t> mask(static_cast<size_t>(T), 1);
        auto qv = randvec(static_cast<size_t>(d) * T, rng);
        auto kv = randvec(static_cast<size_t>(d) * T, rng);
        auto vv = randvec(static_cast<size_t>(d) * T, rng);
        dxf::Tensor<float> q({d, T}, qv), k({d, T}, kv), v({d, T}, vv);
        std::vector<float> y1(static_cast<size_t>(d) * T);
        auto t0 = clk::now();
        for (int r = 0; r < 10; ++r)
            dxf::serial::dense_masked_attention(
                d, T, qv.data(), kv.data(), vv.data(), mask,
                [w](int a, int b) { return a / w == b / w; }, y1.data());
        double serial = ms_since(t0) / 10;
        t0 = clk::now();
        std::vector<float> y2;
        for (int r = 0; r < 10; ++r) {
            dxf::Graph<float> g;
            int out = dxf::ops::windowed_attention(g, g.constant(q), g.constant(k), g.constant(v), w, mask);
            y2 = g.val(out);
        }
        double par = ms_since(t0) / 10;
        std::printf("attention_w64   serial=%8.3fms parallel=%8.3fms speedup=%5.2fx max_diff=%g\n",
                    serial, par, serial / par, max_abs_diff(y1, y2));
    }
    return 0;
}
