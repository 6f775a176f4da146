// Scalar reference kernels. Loop nests are ordered so that each output
// element accumulates its terms in a fixed sequence; the SIMD variants follow
// the same per-element order, which keeps scalar/vector results bit-identical
// for the order-preserving kernels.

#include "interlock/kernels.hpp"

namespace interlock::kernels {

namespace {

void gemm_nn_scalar(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        double* crow = c + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        double* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        const double* brow = b + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void conv2d_fwd_scalar(const double* x, const double* w, double* y, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    for (int img = 0; img < s.n; ++img) {
        const double* xin = x + static_cast<std::int64_t>(img) * s.c * in_plane;
        for (int f = 0; f < s.f; ++f) {
            double* yout = y + (static_cast<std::int64_t>(img) * s.f + f) * out_plane;
            const double* wf = w + static_cast<std::int64_t>(f) * s.c * s.kh * s.kw;
            for (int c = 0; c < s.c; ++c) {
                const double* xc = xin + c * in_plane;
                const double* wc = wf + static_cast<std::int64_t>(c) * s.kh * s.kw;
                for (int ky = 0; ky < s.kh; ++ky) {
                    for (int kx = 0; kx < s.kw; ++kx) {
                        const double wv = wc[ky * s.kw + kx];
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.h) continue;
                            const double* xrow = xc + static_cast<std::int64_t>(iy) * s.w;
                            double* yrow = yout + static_cast<std::int64_t>(oy) * s.ow;
                            for (int ox = 0; ox < s.ow; ++ox) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= s.w) continue;
                                yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_dgrad_scalar(const double* g, const double* w, double* dx, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    for (int img = 0; img < s.n; ++img) {
        double* dxin = dx + static_cast<std::int64_t>(img) * s.c * in_plane;
        for (int f = 0; f < s.f; ++f) {
            const double* gout = g + (static_cast<std::int64_t>(img) * s.f + f) * out_plane;
            const double* wf = w + static_cast<std::int64_t>(f) * s.c * s.kh * s.kw;
            for (int c = 0; c < s.c; ++c) {
                double* dxc = dxin + c * in_plane;
                const double* wc = wf + static_cast<std::int64_t>(c) * s.kh * s.kw;
                for (int ky = 0; ky < s.kh; ++ky) {
                    for (int kx = 0; kx < s.kw; ++kx) {
                        const double wv = wc[ky * s.kw + kx];
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.h) continue;
                            double* dxrow = dxc + static_cast<std::int64_t>(iy) * s.w;
                            const double* grow = gout + static_cast<std::int64_t>(oy) * s.ow;
                            for (int ox = 0; ox < s.ow; ++ox) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= s.w) continue;
                                dxrow[ix] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_wgrad_scalar(const double* g, const double* x, double* dw, const ConvShape& s) {
    const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    for (int f = 0; f < s.f; ++f) {
        for (int c = 0; c < s.c; ++c) {
            double* dwc = dw + (static_cast<std::int64_t>(f) * s.c + c) * s.kh * s.kw;
            for (int ky = 0; ky < s.kh; ++ky) {
                for (int kx = 0; kx < s.kw; ++kx) {
                    double acc = 0.0;
                    for (int img = 0; img < s.n; ++img) {
                        const double* gout = g + (static_cast<std::int64_t>(img) * s.f + f) * out_plane;
                        const double* xc = x + (static_cast<std::int64_t>(img) * s.c + c) * in_plane;
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.h) continue;
                            const double* grow = gout + static_cast<std::int64_t>(oy) * s.ow;
                            const double* xrow = xc + static_cast<std::int64_t>(iy) * s.w;
                            for (int ox = 0; ox < s.ow; ++ox) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= s.w) continue;
                                acc += grow[ox] * xrow[ix];
                            }
                        }
                    }
                    dwc[ky * s.kw + kx] += acc;
                }
            }
        }
    }
}

void relu_fwd_scalar(const double* x, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_scalar(const double* x, const double* g, double* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dx[i] += g[i];
}

void axpy_scalar(double a, const double* x, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend backend = {
        "scalar",
        gemm_nn_scalar,
        gemm_nt_scalar,
        gemm_tn_scalar,
        conv2d_fwd_scalar,
        conv2d_dgrad_scalar,
        conv2d_wgrad_scalar,
        relu_fwd_scalar,
        relu_bwd_scalar,
        axpy_scalar,
    };
    return backend;
}

}  // namespace interlock::kernels
