#include "interlock/ops.hpp"

#include <cmath>
#include <limits>

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"

namespace interlock {

namespace {

kernels::ConvShape conv_shape(const Tensor& x, const Tensor& w, int pad, int stride) {
    kernels::ConvShape s{};
    s.n = x.dim(0);
    s.c = x.dim(1);
    s.h = x.dim(2);
    s.w = x.dim(3);
    s.f = w.dim(0);
    s.kh = w.dim(2);
    s.kw = w.dim(3);
    s.pad = pad;
    s.stride = stride;
    const int hn = s.h + 2 * pad - s.kh;
    const int wn = s.w + 2 * pad - s.kw;
    if (hn < 0 || wn < 0)
        throw ConfigError("conv2d kernel does not fit padded input: input " + x.shape_str() +
                          ", kernel " + w.shape_str() + ", padding " + std::to_string(pad));
    if (hn % stride != 0 || wn % stride != 0)
        throw ConfigError("conv2d output size is not integral: input " + x.shape_str() +
                          ", kernel " + w.shape_str() + ", padding " + std::to_string(pad) +
                          ", stride " + std::to_string(stride));
    s.oh = hn / stride + 1;
    s.ow = wn / stride + 1;
    return s;
}

}  // namespace

Value matmul(Tape& t, Value a, Value b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
        throw ShapeError("matmul shape mismatch: " + av.shape_str() + " x " + bv.shape_str());
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tape::Node node;
    node.op = Op::Matmul;
    node.a = a.id;
    node.b = b.id;
    node.value = Tensor({m, n});
    kernels::active().gemm_nn(av.data(), bv.data(), node.value.data(), m, k, n);
    return t.push(std::move(node));
}

Value add_bias(Tape& t, Value x, Value b) {
    const Tensor& xv = t.val(x);
    const Tensor& bv = t.val(b);
    if (xv.ndim() != 2 || bv.ndim() != 1 || xv.dim(1) != bv.dim(0))
        throw ShapeError("add_bias shape mismatch: " + xv.shape_str() + " + " + bv.shape_str());
    Tape::Node node;
    node.op = Op::AddBias;
    node.a = x.id;
    node.b = b.id;
    node.value = xv;
    const int n = xv.dim(0), f = xv.dim(1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) node.value.at(i, j) += bv.at(j);
    return t.push(std::move(node));
}

Value add(Tape& t, Value a, Value b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (!av.same_shape(bv))
        throw ShapeError("add shape mismatch: " + av.shape_str() + " + " + bv.shape_str());
    Tape::Node node;
    node.op = Op::Add;
    node.a = a.id;
    node.b = b.id;
    node.value = av;
    kernels::active().axpy(1.0, bv.data(), node.value.data(), node.value.size());
    return t.push(std::move(node));
}

Value scale(Tape& t, Value x, double c) {
    const Tensor& xv = t.val(x);
    Tape::Node node;
    node.op = Op::Scale;
    node.a = x.id;
    node.d0 = c;
    node.value = Tensor(xv.shape());
    kernels::active().axpy(c, xv.data(), node.value.data(), node.value.size());
    return t.push(std::move(node));
}

Value relu(Tape& t, Value x) {
    const Tensor& xv = t.val(x);
    Tape::Node node;
    node.op = Op::Relu;
    node.a = x.id;
    node.value = Tensor(xv.shape());
    kernels::active().relu_fwd(xv.data(), node.value.data(), xv.size());
    return t.push(std::move(node));
}

Value conv2d(Tape& t, Value x, Value w, int pad, int stride) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    if (xv.ndim() != 4 || wv.ndim() != 4)
        throw ShapeError("conv2d expects NCHW input and FCKK weights, got " + xv.shape_str() + " and " +
                         wv.shape_str());
    if (xv.dim(1) != wv.dim(1))
        throw ShapeError("conv2d channel mismatch: input " + xv.shape_str() + ", weights " + wv.shape_str());
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d padding must be >= 0");
    const auto s = conv_shape(xv, wv, pad, stride);
    Tape::Node node;
    node.op = Op::Conv2d;
    node.a = x.id;
    node.b = w.id;
    node.i0 = pad;
    node.i1 = stride;
    node.value = Tensor({s.n, s.f, s.oh, s.ow});
    kernels::active().conv2d_fwd(xv.data(), wv.data(), node.value.data(), s);
    return t.push(std::move(node));
}

Value maxpool2d(Tape& t, Value x, int kernel, int stride) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() != 4) throw ShapeError("maxpool2d expects NCHW input, got " + xv.shape_str());
    if (kernel < 1 || stride < 1) throw ConfigError("maxpool2d kernel and stride must be >= 1");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (kernel > h || kernel > w)
        throw ConfigError("maxpool2d kernel " + std::to_string(kernel) + " larger than input " + xv.shape_str());
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    Tape::Node node;
    node.op = Op::MaxPool2d;
    node.a = x.id;
    node.i0 = kernel;
    node.i1 = stride;
    node.value = Tensor({n, c, oh, ow});
    node.idx.resize(static_cast<std::size_t>(node.value.size()));
    std::int64_t o = 0;
    for (int img = 0; img < n; ++img) {
        for (int ch = 0; ch < c; ++ch) {
            const std::int64_t base = (static_cast<std::int64_t>(img) * c + ch) * h * w;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_at = -1;
                    // first occurrence in row-major window order wins ties
                    for (int ky = 0; ky < kernel; ++ky) {
                        for (int kx = 0; kx < kernel; ++kx) {
                            const std::int64_t at = base + static_cast<std::int64_t>(oy * stride + ky) * w +
                                                    (ox * stride + kx);
                            if (xv[at] > best) {
                                best = xv[at];
                                best_at = at;
                            }
                        }
                    }
                    node.value[o] = best;
                    node.idx[static_cast<std::size_t>(o)] = static_cast<std::int32_t>(best_at);
                    ++o;
                }
            }
        }
    }
    return t.push(std::move(node));
}

Value global_avg_pool(Tape& t, Value x) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() != 4) throw ShapeError("global_avg_pool expects NCHW input, got " + xv.shape_str());
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tape::Node node;
    node.op = Op::GlobalAvgPool;
    node.a = x.id;
    node.value = Tensor({n, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int img = 0; img < n; ++img) {
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            const double* plane = xv.data() + (static_cast<std::int64_t>(img) * c + ch) * h * w;
            for (int i = 0; i < h * w; ++i) acc += plane[i];
            node.value.at(img, ch) = acc * inv;
        }
    }
    return t.push(std::move(node));
}

Value reshape(Tape& t, Value x, std::vector<int> shape) {
    const Tensor& xv = t.val(x);
    if (shape_numel(shape) != xv.size())
        throw ShapeError("reshape element count mismatch: " + xv.shape_str());
    Tape::Node node;
    node.op = Op::Reshape;
    node.a = x.id;
    node.value = Tensor::from(std::move(shape), xv.vec());
    return t.push(std::move(node));
}

Value flatten(Tape& t, Value x) {
    const Tensor& xv = t.val(x);
    if (xv.ndim() < 2) throw ShapeError("flatten expects rank >= 2, got " + xv.shape_str());
    const int n = xv.dim(0);
    return reshape(t, x, {n, static_cast<int>(xv.size() / n)});
}

Value stop_gradient(Tape& t, Value x) {
    Tape::Node node;
    node.op = Op::StopGradient;
    node.a = x.id;
    node.value = t.val(x);
    return t.push(std::move(node));
}

Value batchnorm(Tape& t, Value x, Value gamma, Value beta, const BatchNormStats& stats, bool training) {
    const Tensor& xv = t.val(x);
    const Tensor& gv = t.val(gamma);
    const Tensor& bv = t.val(beta);
    if (xv.ndim() != 2 && xv.ndim() != 4)
        throw ShapeError("batchnorm expects [N x C] or NCHW input, got " + xv.shape_str());
    const int n = xv.dim(0), c = xv.dim(1);
    const int spatial = xv.ndim() == 4 ? xv.dim(2) * xv.dim(3) : 1;
    if (gv.ndim() != 1 || gv.dim(0) != c || !gv.same_shape(bv))
        throw ShapeError("batchnorm gamma/beta must be [C] with C=" + std::to_string(c));
    if (training && n < 2)
        throw ConfigError("batchnorm: degenerate batch of size " + std::to_string(n) + " in train mode");

    Tape::Node node;
    node.op = Op::BatchNorm;
    node.a = x.id;
    node.b = gamma.id;
    node.c = beta.id;
    node.i0 = training ? 1 : 0;
    node.value = Tensor(xv.shape());
    node.s0 = Tensor(xv.shape());  // normalized input
    node.s1 = Tensor({c});         // 1/sqrt(var + eps)

    const std::int64_t m = static_cast<std::int64_t>(n) * spatial;
    for (int ch = 0; ch < c; ++ch) {
        double mean, inv;
        if (training) {
            double sum = 0.0, sq = 0.0;
            for (int img = 0; img < n; ++img) {
                const double* p = xv.data() + (static_cast<std::int64_t>(img) * c + ch) * spatial;
                for (int i = 0; i < spatial; ++i) {
                    sum += p[i];
                    sq += p[i] * p[i];
                }
            }
            mean = sum / static_cast<double>(m);
            double var = sq / static_cast<double>(m) - mean * mean;
            if (var < 0.0) var = 0.0;  // rounding guard
            inv = 1.0 / std::sqrt(var + stats.eps);
            if (stats.running_mean) {
                (*stats.running_mean)[ch] = (1.0 - stats.momentum) * (*stats.running_mean)[ch] + stats.momentum * mean;
                (*stats.running_var)[ch] = (1.0 - stats.momentum) * (*stats.running_var)[ch] + stats.momentum * var;
            }
        } else {
            if (!stats.running_mean) throw InternalError("batchnorm eval mode without running stats");
            mean = (*stats.running_mean)[ch];
            inv = 1.0 / std::sqrt((*stats.running_var)[ch] + stats.eps);
        }
        node.s1[ch] = inv;
        const double g = gv[ch], b = bv[ch];
        for (int img = 0; img < n; ++img) {
            const std::int64_t off = (static_cast<std::int64_t>(img) * c + ch) * spatial;
            const double* p = xv.data() + off;
            double* xh = node.s0.data() + off;
            double* out = node.value.data() + off;
            for (int i = 0; i < spatial; ++i) {
                xh[i] = (p[i] - mean) * inv;
                out[i] = g * xh[i] + b;
            }
        }
    }
    return t.push(std::move(node));
}

Value softmax_cross_entropy(Tape& t, Value logits, const std::vector<int>& targets) {
    const Tensor& lv = t.val(logits);
    if (lv.ndim() != 2) throw ShapeError("softmax_cross_entropy expects [N x K] logits, got " + lv.shape_str());
    const int n = lv.dim(0), k = lv.dim(1);
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                         std::to_string(n));
    for (int i = 0; i < n; ++i)
        if (targets[i] < 0 || targets[i] >= k)
            throw DataError("target " + std::to_string(targets[i]) + " out of range [0, " + std::to_string(k) +
                            ") at row " + std::to_string(i));

    Tape::Node node;
    node.op = Op::SoftmaxXent;
    node.a = logits.id;
    node.s0 = Tensor({n, k});  // softmax probabilities
    node.idx.assign(targets.begin(), targets.end());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = lv.data() + static_cast<std::int64_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double logz = std::log(z);
        for (int j = 0; j < k; ++j) node.s0.at(i, j) = std::exp(row[j] - mx) / z;
        loss += (mx + logz) - row[targets[static_cast<std::size_t>(i)]];
    }
    node.value = Tensor::scalar(loss / n);
    return t.push(std::move(node));
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("softmax_rows expects [N x K], got " + logits.shape_str());
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out({n, k});
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::int64_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < k; ++j) out.at(i, j) = std::exp(row[j] - mx) / z;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward rules. Reads the pass-local gradient of node `id` and adds each
// operand's contribution to its pass-local buffer.
// ---------------------------------------------------------------------------

void Tape::backward_node(int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = pending(id);
    const auto& k = kernels::active();

    switch (n.op) {
        case Op::Leaf:
        case Op::StopGradient:
            break;

        case Op::Matmul: {
            const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            const int m = a.dim(0), kk = a.dim(1), nn = b.dim(1);
            k.gemm_nt(g.data(), b.data(), pend(n.a).data(), m, nn, kk);
            k.gemm_tn(a.data(), g.data(), pend(n.b).data(), m, kk, nn);
            break;
        }

        case Op::AddBias: {
            Tensor& dx = pend(n.a);
            k.axpy(1.0, g.data(), dx.data(), dx.size());
            Tensor& db = pend(n.b);
            const int rows = g.dim(0), cols = g.dim(1);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) db[j] += g.at(i, j);
            break;
        }

        case Op::Add: {
            Tensor& da = pend(n.a);
            k.axpy(1.0, g.data(), da.data(), da.size());
            Tensor& db = pend(n.b);
            k.axpy(1.0, g.data(), db.data(), db.size());
            break;
        }

        case Op::Scale: {
            Tensor& dx = pend(n.a);
            k.axpy(n.d0, g.data(), dx.data(), dx.size());
            break;
        }

        case Op::Relu: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            k.relu_bwd(x.data(), g.data(), pend(n.a).data(), x.size());
            break;
        }

        case Op::Conv2d: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& w = nodes_[static_cast<std::size_t>(n.b)].value;
            const auto s = conv_shape(x, w, n.i0, n.i1);
            k.conv2d_dgrad(g.data(), w.data(), pend(n.a).data(), s);
            k.conv2d_wgrad(g.data(), x.data(), pend(n.b).data(), s);
            break;
        }

        case Op::MaxPool2d: {
            Tensor& dx = pend(n.a);
            for (std::int64_t o = 0; o < g.size(); ++o) dx[n.idx[static_cast<std::size_t>(o)]] += g[o];
            break;
        }

        case Op::GlobalAvgPool: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            Tensor& dx = pend(n.a);
            const int imgs = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
            const double inv = 1.0 / plane;
            for (int img = 0; img < imgs; ++img) {
                for (int ch = 0; ch < c; ++ch) {
                    const double gv = g.at(img, ch) * inv;
                    double* p = dx.data() + (static_cast<std::int64_t>(img) * c + ch) * plane;
                    for (int i = 0; i < plane; ++i) p[i] += gv;
                }
            }
            break;
        }

        case Op::BatchNorm: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& gamma = nodes_[static_cast<std::size_t>(n.b)].value;
            const int imgs = x.dim(0), c = x.dim(1);
            const int spatial = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
            const std::int64_t m = static_cast<std::int64_t>(imgs) * spatial;
            Tensor& dx = pend(n.a);
            Tensor& dgamma = pend(n.b);
            Tensor& dbeta = pend(n.c);
            for (int ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int img = 0; img < imgs; ++img) {
                    const std::int64_t off = (static_cast<std::int64_t>(img) * c + ch) * spatial;
                    const double* gp = g.data() + off;
                    const double* xh = n.s0.data() + off;
                    for (int i = 0; i < spatial; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * xh[i];
                    }
                }
                dgamma[ch] += sum_gx;
                dbeta[ch] += sum_g;
                const double inv = n.s1[ch];
                if (n.i0) {  // train mode: batch statistics participate
                    const double coef = gamma[ch] * inv / static_cast<double>(m);
                    for (int img = 0; img < imgs; ++img) {
                        const std::int64_t off = (static_cast<std::int64_t>(img) * c + ch) * spatial;
                        const double* gp = g.data() + off;
                        const double* xh = n.s0.data() + off;
                        double* dp = dx.data() + off;
                        for (int i = 0; i < spatial; ++i)
                            dp[i] += coef * (static_cast<double>(m) * gp[i] - xh[i] * sum_gx - sum_g);
                    }
                } else {  // eval mode: running stats are constants
                    const double coef = gamma[ch] * inv;
                    for (int img = 0; img < imgs; ++img) {
                        const std::int64_t off = (static_cast<std::int64_t>(img) * c + ch) * spatial;
                        const double* gp = g.data() + off;
                        double* dp = dx.data() + off;
                        for (int i = 0; i < spatial; ++i) dp[i] += coef * gp[i];
                    }
                }
            }
            break;
        }

        case Op::Reshape: {
            Tensor& dx = pend(n.a);
            k.axpy(1.0, g.data(), dx.data(), dx.size());
            break;
        }

        case Op::SoftmaxXent: {
            const double gv = g.item();
            const int rows = n.s0.dim(0), cols = n.s0.dim(1);
            Tensor& dl = pend(n.a);
            const double inv = gv / rows;
            for (int i = 0; i < rows; ++i) {
                const double* p = n.s0.data() + static_cast<std::int64_t>(i) * cols;
                double* d = dl.data() + static_cast<std::int64_t>(i) * cols;
                for (int j = 0; j < cols; ++j) d[j] += inv * p[j];
                d[n.idx[static_cast<std::size_t>(i)]] -= inv;
            }
            break;
        }
    }
}

}  // namespace interlock
