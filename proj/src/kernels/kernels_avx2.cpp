// AVX2 variants of the inner-loop kernels. Built with -mavx2 only (no FMA):
// each multiply/add rounds exactly like the scalar reference, so kernels that
// also preserve per-output accumulation order (gemm_nn, gemm_tn, conv fwd and
// dgrad, relu, axpy) produce bit-identical results. gemm_nt and conv2d_wgrad
// accumulate four partial lanes and reduce them in a fixed order at the end.
//
// Convolution paths cover stride 1 (the only stride the presets use) via
// zero-padded row buffers; other geometries fall through to the scalar code.

#include "interlock/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <vector>

namespace interlock::kernels {

const Backend& avx2_backend_impl();

namespace {

void gemm_nn_avx2(const double* a, const double* b, double* c, int m, int k, int n) {
    constexpr int kTile = 16;  // 4 ymm accumulators
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        double* crow = c + static_cast<std::int64_t>(i) * n;
        int j0 = 0;
        for (; j0 + kTile <= n; j0 += kTile) {
            __m256d acc0 = _mm256_loadu_pd(crow + j0);
            __m256d acc1 = _mm256_loadu_pd(crow + j0 + 4);
            __m256d acc2 = _mm256_loadu_pd(crow + j0 + 8);
            __m256d acc3 = _mm256_loadu_pd(crow + j0 + 12);
            for (int p = 0; p < k; ++p) {
                const __m256d av = _mm256_set1_pd(arow[p]);
                const double* brow = b + static_cast<std::int64_t>(p) * n + j0;
                acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(av, _mm256_loadu_pd(brow)));
                acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 4)));
                acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 8)));
                acc3 = _mm256_add_pd(acc3, _mm256_mul_pd(av, _mm256_loadu_pd(brow + 12)));
            }
            _mm256_storeu_pd(crow + j0, acc0);
            _mm256_storeu_pd(crow + j0 + 4, acc1);
            _mm256_storeu_pd(crow + j0 + 8, acc2);
            _mm256_storeu_pd(crow + j0 + 12, acc3);
        }
        for (; j0 + 4 <= n; j0 += 4) {
            __m256d acc = _mm256_loadu_pd(crow + j0);
            for (int p = 0; p < k; ++p) {
                const __m256d av = _mm256_set1_pd(arow[p]);
                acc = _mm256_add_pd(acc, _mm256_mul_pd(av, _mm256_loadu_pd(b + static_cast<std::int64_t>(p) * n + j0)));
            }
            _mm256_storeu_pd(crow + j0, acc);
        }
        for (; j0 < n; ++j0) {
            double acc = crow[j0];
            for (int p = 0; p < k; ++p) acc += arow[p] * b[static_cast<std::int64_t>(p) * n + j0];
            crow[j0] = acc;
        }
    }
}

inline double hsum_ordered(__m256d v) {
    alignas(32) double lane[4];
    _mm256_store_pd(lane, v);
    return ((lane[0] + lane[1]) + lane[2]) + lane[3];
}

void gemm_nt_avx2(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        double* crow = c + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::int64_t>(j) * k;
            __m256d acc = _mm256_setzero_pd();
            int p = 0;
            for (; p + 4 <= k; p += 4)
                acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p)));
            double sum = hsum_ordered(acc);
            for (; p < k; ++p) sum += arow[p] * brow[p];
            crow[j] += sum;
        }
    }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        const double* brow = b + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const __m256d av = _mm256_set1_pd(arow[p]);
            double* crow = c + static_cast<std::int64_t>(p) * n;
            int j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(crow + j,
                                 _mm256_add_pd(_mm256_loadu_pd(crow + j),
                                               _mm256_mul_pd(av, _mm256_loadu_pd(brow + j))));
            for (; j < n; ++j) crow[j] += arow[p] * brow[j];
        }
    }
}

// Zero-padded copies of the C input planes for one image, padding `pad`.
thread_local std::vector<double> tl_padded;

void pad_planes(const double* src, int planes, int h, int w, int pad, int& ph, int& pw) {
    ph = h + 2 * pad;
    pw = w + 2 * pad;
    tl_padded.assign(static_cast<std::size_t>(planes) * ph * pw, 0.0);
    for (int c = 0; c < planes; ++c) {
        const double* sp = src + static_cast<std::int64_t>(c) * h * w;
        double* dp = tl_padded.data() + static_cast<std::int64_t>(c) * ph * pw;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) dp[(y + pad) * pw + (x + pad)] = sp[y * w + x];
    }
}

void conv2d_fwd_avx2(const double* x, const double* w, double* y, const ConvShape& s) {
    if (s.stride != 1) {
        scalar_backend().conv2d_fwd(x, w, y, s);
        return;
    }
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    int ph, pw;
    for (int img = 0; img < s.n; ++img) {
        pad_planes(x + static_cast<std::int64_t>(img) * s.c * s.h * s.w, s.c, s.h, s.w, s.pad, ph, pw);
        for (int f = 0; f < s.f; ++f) {
            const double* wf = w + static_cast<std::int64_t>(f) * s.c * s.kh * s.kw;
            double* yout = y + (static_cast<std::int64_t>(img) * s.f + f) * out_plane;
            for (int oy = 0; oy < s.oh; ++oy) {
                double* yrow = yout + static_cast<std::int64_t>(oy) * s.ow;
                int ox0 = 0;
                for (; ox0 + 4 <= s.ow; ox0 += 4) {
                    __m256d acc = _mm256_loadu_pd(yrow + ox0);
                    for (int c = 0; c < s.c; ++c) {
                        const double* xc = tl_padded.data() + static_cast<std::int64_t>(c) * ph * pw;
                        const double* wc = wf + static_cast<std::int64_t>(c) * s.kh * s.kw;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const double* xrow = xc + static_cast<std::int64_t>(oy + ky) * pw + ox0;
                            for (int kx = 0; kx < s.kw; ++kx) {
                                const __m256d wv = _mm256_set1_pd(wc[ky * s.kw + kx]);
                                acc = _mm256_add_pd(acc, _mm256_mul_pd(wv, _mm256_loadu_pd(xrow + kx)));
                            }
                        }
                    }
                    _mm256_storeu_pd(yrow + ox0, acc);
                }
                for (; ox0 < s.ow; ++ox0) {
                    double acc = yrow[ox0];
                    for (int c = 0; c < s.c; ++c) {
                        const double* xc = tl_padded.data() + static_cast<std::int64_t>(c) * ph * pw;
                        const double* wc = wf + static_cast<std::int64_t>(c) * s.kh * s.kw;
                        for (int ky = 0; ky < s.kh; ++ky)
                            for (int kx = 0; kx < s.kw; ++kx)
                                acc += wc[ky * s.kw + kx] * xc[(oy + ky) * pw + ox0 + kx];
                    }
                    yrow[ox0] = acc;
                }
            }
        }
    }
}

thread_local std::vector<double> tl_gpad;

void conv2d_dgrad_avx2(const double* g, const double* w, double* dx, const ConvShape& s) {
    if (s.stride != 1) {
        scalar_backend().conv2d_dgrad(g, w, dx, s);
        return;
    }
    // dx[c,iy,ix] sums g[f, iy+pad-ky, ix+pad-kx] * w[f,c,ky,kx]; pad the grad
    // planes by (kh-1, kw-1) so every access is in range.
    const int gpy = s.kh - 1, gpx = s.kw - 1;
    const int gph = s.oh + 2 * gpy, gpw = s.ow + 2 * gpx;
    const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;
    for (int img = 0; img < s.n; ++img) {
        tl_gpad.assign(static_cast<std::size_t>(s.f) * gph * gpw, 0.0);
        for (int f = 0; f < s.f; ++f) {
            const double* gp = g + (static_cast<std::int64_t>(img) * s.f + f) * s.oh * s.ow;
            double* dp = tl_gpad.data() + static_cast<std::int64_t>(f) * gph * gpw;
            for (int y = 0; y < s.oh; ++y)
                for (int x = 0; x < s.ow; ++x) dp[(y + gpy) * gpw + (x + gpx)] = gp[y * s.ow + x];
        }
        for (int c = 0; c < s.c; ++c) {
            double* dxc = dx + (static_cast<std::int64_t>(img) * s.c + c) * in_plane;
            for (int iy = 0; iy < s.h; ++iy) {
                double* dxrow = dxc + static_cast<std::int64_t>(iy) * s.w;
                int ix0 = 0;
                for (; ix0 + 4 <= s.w; ix0 += 4) {
                    __m256d acc = _mm256_loadu_pd(dxrow + ix0);
                    for (int f = 0; f < s.f; ++f) {
                        const double* gf = tl_gpad.data() + static_cast<std::int64_t>(f) * gph * gpw;
                        const double* wc = w + (static_cast<std::int64_t>(f) * s.c + c) * s.kh * s.kw;
                        for (int ky = 0; ky < s.kh; ++ky) {
                            const int gy = iy + s.pad - ky + gpy;
                            const double* grow = gf + static_cast<std::int64_t>(gy) * gpw;
                            for (int kx = 0; kx < s.kw; ++kx) {
                                const __m256d wv = _mm256_set1_pd(wc[ky * s.kw + kx]);
                                acc = _mm256_add_pd(
                                    acc, _mm256_mul_pd(wv, _mm256_loadu_pd(grow + ix0 + s.pad - kx + gpx)));
                            }
                        }
                    }
                    _mm256_storeu_pd(dxrow + ix0, acc);
                }
                for (; ix0 < s.w; ++ix0) {
                    double acc = dxrow[ix0];
                    for (int f = 0; f < s.f; ++f) {
                        const double* gf = tl_gpad.data() + static_cast<std::int64_t>(f) * gph * gpw;
                        const double* wc = w + (static_cast<std::int64_t>(f) * s.c + c) * s.kh * s.kw;
                        for (int ky = 0; ky < s.kh; ++ky)
                            for (int kx = 0; kx < s.kw; ++kx)
                                acc += wc[ky * s.kw + kx] *
                                       gf[(iy + s.pad - ky + gpy) * gpw + ix0 + s.pad - kx + gpx];
                    }
                    dxrow[ix0] = acc;
                }
            }
        }
    }
}

void conv2d_wgrad_avx2(const double* g, const double* x, double* dw, const ConvShape& s) {
    if (s.stride != 1) {
        scalar_backend().conv2d_wgrad(g, x, dw, s);
        return;
    }
    const std::int64_t in_plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(s.oh) * s.ow;
    for (int f = 0; f < s.f; ++f) {
        for (int c = 0; c < s.c; ++c) {
            double* dwc = dw + (static_cast<std::int64_t>(f) * s.c + c) * s.kh * s.kw;
            for (int ky = 0; ky < s.kh; ++ky) {
                for (int kx = 0; kx < s.kw; ++kx) {
                    __m256d vacc = _mm256_setzero_pd();
                    double tail = 0.0;
                    for (int img = 0; img < s.n; ++img) {
                        const double* gout = g + (static_cast<std::int64_t>(img) * s.f + f) * out_plane;
                        const double* xc = x + (static_cast<std::int64_t>(img) * s.c + c) * in_plane;
                        for (int oy = 0; oy < s.oh; ++oy) {
                            const int iy = oy - s.pad + ky;
                            if (iy < 0 || iy >= s.h) continue;
                            const double* grow = gout + static_cast<std::int64_t>(oy) * s.ow;
                            const double* xrow = xc + static_cast<std::int64_t>(iy) * s.w;
                            const int xlo = s.pad - kx > 0 ? s.pad - kx : 0;
                            int xhi = s.w + s.pad - kx;
                            if (xhi > s.ow) xhi = s.ow;
                            int ox = xlo;
                            for (; ox + 4 <= xhi; ox += 4)
                                vacc = _mm256_add_pd(vacc, _mm256_mul_pd(_mm256_loadu_pd(grow + ox),
                                                                         _mm256_loadu_pd(xrow + ox - s.pad + kx)));
                            for (; ox < xhi; ++ox) tail += grow[ox] * xrow[ox - s.pad + kx];
                        }
                    }
                    dwc[ky * s.kw + kx] += hsum_ordered(vacc) + tail;
                }
            }
        }
    }
}

void relu_fwd_avx2(const double* x, double* y, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_avx2(const double* x, const double* g, double* dx, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gv = _mm256_and_pd(mask, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gv));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dx[i] += g[i];
}

void axpy_avx2(double a, const double* x, double* y, std::int64_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(av, _mm256_loadu_pd(x + i))));
    for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Backend& avx2_backend_impl() {
    static const Backend backend = {
        "avx2",
        gemm_nn_avx2,
        gemm_nt_avx2,
        gemm_tn_avx2,
        conv2d_fwd_avx2,
        conv2d_dgrad_avx2,
        conv2d_wgrad_avx2,
        relu_fwd_avx2,
        relu_bwd_avx2,
        axpy_avx2,
    };
    return backend;
}

}  // namespace interlock::kernels

#endif  // __AVX2__
