#pragma once

#include <cstdint>
#include <string>

namespace interlock::kernels {

// Geometry of a 2-D cross-correlation. Input x is NCHW, weights are
// [f][c][kh][kw], output is [n][f][oh][ow].
struct ConvShape {
    int n, c, h, w;
    int f, kh, kw;
    int pad, stride;
    int oh, ow;
};

// Inner-loop kernels behind the tensor ops. Scalar implementations are the
// reference; the AVX2 variants are selected at runtime when the CPU supports
// them. Per-output accumulation order is preserved by the vector variants of
// every kernel except gemm_nt and conv2d_wgrad, which reduce four lanes at the
// end (exact for the rest, ~1 ulp reassociation for those two).
struct Backend {
    const char* name;

    // C[m x n] += A[m x k] * B[k x n]
    void (*gemm_nn)(const double* a, const double* b, double* c, int m, int k, int n);
    // C[m x n] += A[m x k] * B[n x k]^T
    void (*gemm_nt)(const double* a, const double* b, double* c, int m, int k, int n);
    // C[k x n] += A[m x k]^T * B[m x n]
    void (*gemm_tn)(const double* a, const double* b, double* c, int m, int k, int n);

    // y += cross_correlate(x, w)
    void (*conv2d_fwd)(const double* x, const double* w, double* y, const ConvShape& s);
    // dx += full_correlate(g, w)
    void (*conv2d_dgrad)(const double* g, const double* w, double* dx, const ConvShape& s);
    // dw += correlate(x, g)
    void (*conv2d_wgrad)(const double* g, const double* x, double* dw, const ConvShape& s);

    void (*relu_fwd)(const double* x, double* y, std::int64_t n);
    // dx += g where x > 0
    void (*relu_bwd)(const double* x, const double* g, double* dx, std::int64_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::int64_t n);
};

const Backend& scalar_backend();

// Active backend: AVX2 when available, overridable with the INTERLOCK_KERNELS
// environment variable ("scalar" | "avx2" | "auto") or force().
const Backend& active();
void force(const std::string& name);
bool avx2_supported();

}  // namespace interlock::kernels
