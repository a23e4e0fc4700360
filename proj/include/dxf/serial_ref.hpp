#pragma once

// Naive single-threaded reference kernels. These are deliberately written
// as direct transcriptions of the definitions and are used by the tests
// and the benchmark as the ground truth for the parallel kernels.

#include <cmath>
#include <cstdint>
#include <vector>

namespace dxf::serial {

template <typename S>
void matmul(int m, int k, int n, const S* a, const S* b, S* c) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

template <typename S>
void conv1d(int c_in, int c_out, int T, int ksz, int dilation, const S* x, const S* w,
            const S* bias, S* y) {
    const int ctr = (ksz - 1) / 2;
    for (int o = 0; o < c_out; ++o)
        for (int t = 0; t < T; ++t) {
            S acc = bias ? bias[o] : S(0);
            for (int c = 0; c < c_in; ++c)
                for (int j = 0; j < ksz; ++j) {
                    int src = t + dilation * (j - ctr);
                    if (src >= 0 && src < T) acc += w[(o * c_in + c) * ksz + j] * x[c * T + src];
                }
            y[o * T + t] = acc;
        }
}

// Dense masked attention over channel-first tensors q,k,v [d x T].
// mask_pair(a, b) == true means query a may attend to key b. Materializes
// the full T x T weight matrix (returned via `weights` when non-null).
// Rows of fully-masked or padded queries are all-zero.
template <typename S, typename MaskPair>
void dense_masked_attention(int d, int T, const S* q, const S* k, const S* v,
                            const std::vector<uint8_t>& frame_mask, MaskPair mask_pair, S* out,
                            S* weights = nullptr) {
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d)));
    std::vector<S> row(static_cast<size_t>(T));
    for (int c = 0; c < d * T; ++c) out[c] = S(0);
    for (int a = 0; a < T; ++a) {
        bool any = false;
        S mx = S(0);
        for (int b = 0; b < T; ++b) {
            bool ok = frame_mask[static_cast<size_t>(a)] && frame_mask[static_cast<size_t>(b)] &&
                      mask_pair(a, b);
            if (ok) {
                S s = S(0);
                for (int c = 0; c < d; ++c) s += q[c * T + a] * k[c * T + b];
                s *= scale;
                row[static_cast<size_t>(b)] = s;
                if (!any || s > mx) mx = s;
                any = true;
            } else {
                row[static_cast<size_t>(b)] = S(0);
            }
        }
        S denom = S(0);
        for (int b = 0; b < T; ++b) {
            bool ok = frame_mask[static_cast<size_t>(a)] && frame_mask[static_cast<size_t>(b)] &&
                      mask_pair(a, b);
            row[static_cast<size_t>(b)] = ok ? std::exp(row[static_cast<size_t>(b)] - mx) : S(0);
            denom += row[static_cast<size_t>(b)];
        }
        for (int b = 0; b < T; ++b) {
            S wv = denom > S(0) ? row[static_cast<size_t>(b)] / denom : S(0);
            if (weights) weights[a * T + b] = wv;
            if (wv != S(0))
                for (int c = 0; c < d; ++c) out[c * T + a] += wv * v[c * T + b];
        }
    }
}

}  // namespace dxf::serial
