#pragma once

// Low-level numeric kernels. Each output element is owned by exactly one
// thread, so results are bitwise identical for any thread count.
// Serial counterparts used for differential testing live in serial_ref.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dxf::kernels {

// C[m x n] = A[m x k] * B[k x n]
template <typename S>
void matmul(int m, int k, int n, const S* a, const S* b, S* c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + static_cast<std::int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            S av = arow[p];
            const S* brow = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename S>
void matmul_nt_acc(int m, int k, int n, const S* a, const S* b, S* c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<std::int64_t>(i) * k;
        S* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<std::int64_t>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename S>
void matmul_tn_acc(int m, int k, int n, const S* a, const S* b, S* c) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
        S* crow = c + static_cast<std::int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            S av = a[static_cast<std::int64_t>(i) * k + p];
            const S* brow = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Dilated 1-D convolution with symmetric zero padding, output length == T.
// x[c_in x T], w[c_out x c_in x ksz], bias[c_out] -> y[c_out x T]
template <typename S>
void conv1d(int c_in, int c_out, int T, int ksz, int dilation, const S* x, const S* w, const S* bias,
            S* y) {
    const int ctr = (ksz - 1) / 2;
#pragma omp parallel for schedule(static)
    for (int o = 0; o < c_out; ++o) {
        S* yrow = y + static_cast<std::int64_t>(o) * T;
        for (int t = 0; t < T; ++t) yrow[t] = bias ? bias[o] : S(0);
        for (int c = 0; c < c_in; ++c) {
            const S* xrow = x + static_cast<std::int64_t>(c) * T;
            const S* wrow = w + (static_cast<std::int64_t>(o) * c_in + c) * ksz;
            for (int j = 0; j < ksz; ++j) {
                const int off = dilation * (j - ctr);
                const S wv = wrow[j];
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                for (int t = t0; t < t1; ++t) yrow[t] += wv * xrow[t + off];
            }
        }
    }
}

// dx[c_in x T] += sum_{o,j} w[o,c,j] * dy[o, t - dilation*(j-ctr)]
template <typename S>
void conv1d_bwd_x(int c_in, int c_out, int T, int ksz, int dilation, const S* w, const S* dy,
                  S* dx) {
    const int ctr = (ksz - 1) / 2;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < c_in; ++c) {
        S* dxrow = dx + static_cast<std::int64_t>(c) * T;
        for (int o = 0; o < c_out; ++o) {
            const S* dyrow = dy + static_cast<std::int64_t>(o) * T;
            const S* wrow = w + (static_cast<std::int64_t>(o) * c_in + c) * ksz;
            for (int j = 0; j < ksz; ++j) {
                const int off = dilation * (j - ctr);
                const S wv = wrow[j];
                const int t0 = std::max(0, off);
                const int t1 = std::min(T, T + off);
                for (int t = t0; t < t1; ++t) dxrow[t] += wv * dyrow[t - off];
            }
        }
    }
}

// dw[o,c,j] += sum_t dy[o,t] * x[c, t + dilation*(j-ctr)]
template <typename S>
void conv1d_bwd_w(int c_in, int c_out, int T, int ksz, int dilation, const S* x, const S* dy,
                  S* dw) {
    const int ctr = (ksz - 1) / 2;
#pragma omp parallel for schedule(static)
    for (int o = 0; o < c_out; ++o) {
        const S* dyrow = dy + static_cast<std::int64_t>(o) * T;
        for (int c = 0; c < c_in; ++c) {
            const S* xrow = x + static_cast<std::int64_t>(c) * T;
            S* dwrow = dw + (static_cast<std::int64_t>(o) * c_in + c) * ksz;
            for (int j = 0; j < ksz; ++j) {
                const int off = dilation * (j - ctr);
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                S acc = S(0);
                for (int t = t0; t < t1; ++t) acc += dyrow[t] * xrow[t + off];
                dwrow[j] += acc;
            }
        }
    }
}

template <typename S>
void conv1d_bwd_b(int c_out, int T, const S* dy, S* db) {
    for (int o = 0; o < c_out; ++o) {
        const S* dyrow = dy + static_cast<std::int64_t>(o) * T;
        S acc = S(0);
        for (int t = 0; t < T; ++t) acc += dyrow[t];
        db[o] += acc;
    }
}

inline int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace dxf::kernels
