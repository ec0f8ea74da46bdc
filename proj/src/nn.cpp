#include "netsift/nn.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "netsift/errors.hpp"

#ifdef NETSIFT_USE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int) __attribute__((weak));
#endif

namespace netsift::nn {

namespace {

int g_threads = 1;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Shape helpers: leading batch dimension is optional on every op.
struct Bcl {
    size_t b, c, l;
    bool batched;
};

Bcl as_bcl(const Tensor& x, const char* what) {
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
    throw ConfigError(std::string(what) + ": expected [C,L] or [B,C,L] input");
}

struct Bn {
    size_t b, n;
    bool batched;
};

Bn as_bn(const Tensor& x, const char* what) {
    if (x.rank() == 1) return {1, x.dim(0), false};
    if (x.rank() == 2) return {x.dim(0), x.dim(1), true};
    throw ConfigError(std::string(what) + ": expected [N] or [B,N] input");
}

std::vector<size_t> shape_like(const Bcl& v, size_t c, size_t l) {
    if (v.batched) return {v.b, c, l};
    return {c, l};
}

std::vector<size_t> shape_like(const Bn& v, size_t n) {
    if (v.batched) return {v.b, n};
    return {n};
}

// COLS[c*W+w, b*L+l] = x[b, c, l + w - pad] (zero outside). Shared by the
// forward GEMM and both backward GEMMs.
Tensor im2col(const Tensor& x, const Bcl& v, size_t width) {
    size_t pad = (width - 1) / 2;
    Tensor cols({v.c * width, v.b * v.l});
    const double* xd = x.data.data();
    for (size_t c = 0; c < v.c; ++c) {
        for (size_t w = 0; w < width; ++w) {
            double* row = cols.data.data() + (c * width + w) * (v.b * v.l);
            for (size_t b = 0; b < v.b; ++b) {
                const double* xrow = xd + (b * v.c + c) * v.l;
                double* out = row + b * v.l;
                // l + w - pad in [0, L)
                ptrdiff_t shift = static_cast<ptrdiff_t>(w) - static_cast<ptrdiff_t>(pad);
                size_t lo = shift < 0 ? static_cast<size_t>(-shift) : 0;
                size_t hi = shift > 0 ? v.l - static_cast<size_t>(shift) : v.l;
                for (size_t l = lo; l < hi; ++l)
                    out[l] = xrow[static_cast<size_t>(static_cast<ptrdiff_t>(l) + shift)];
            }
        }
    }
    return cols;
}

}  // namespace

void set_num_threads(int n) {
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    g_threads = n;
#ifdef NETSIFT_USE_CBLAS
    if (openblas_set_num_threads) openblas_set_num_threads(n);
#endif
}

int num_threads() { return g_threads; }

void matmul(const double* a, const double* b, double* c, size_t m, size_t n, size_t k,
            bool trans_a, bool trans_b, double alpha, double beta) {
#ifdef NETSIFT_USE_CBLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n),
                beta, c, static_cast<int>(n));
#else
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) {
                double av = trans_a ? a[p * m + i] : a[i * k + p];
                double bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = alpha * acc + beta * c[i * n + j];
        }
    }
#endif
}

// -- convolution --------------------------------------------------------

Tensor conv1d(const Tensor& x, const Conv1dParams& p) {
    Bcl v = as_bcl(x, "conv1d");
    size_t out_c = p.kernels.dim(0), in_c = p.kernels.dim(1), width = p.kernels.dim(2);
    if (in_c != v.c)
        throw ConfigError("conv1d: input has " + std::to_string(v.c) +
                          " channels, kernels expect " + std::to_string(in_c));

    Tensor cols = im2col(x, v, width);
    Tensor out({out_c, v.b * v.l});
    matmul(p.kernels.data.data(), cols.data.data(), out.data.data(), out_c, v.b * v.l,
           in_c * width, false, false);

    Tensor y(shape_like(v, out_c, v.l));
    for (size_t b = 0; b < v.b; ++b)
        for (size_t co = 0; co < out_c; ++co) {
            const double* src = out.data.data() + co * (v.b * v.l) + b * v.l;
            double* dst = y.data.data() + (b * out_c + co) * v.l;
            double bias = p.bias[co];
            for (size_t l = 0; l < v.l; ++l) dst[l] = src[l] + bias;
        }
    return y;
}

Conv1dGrads conv1d_backward(const Tensor& x, const Conv1dParams& p, const Tensor& dy) {
    Bcl v = as_bcl(x, "conv1d_backward");
    size_t out_c = p.kernels.dim(0), in_c = p.kernels.dim(1), width = p.kernels.dim(2);
    size_t pad = (width - 1) / 2;

    // dOUT[co, b*L+l] = dy[b, co, l]
    Tensor dout({out_c, v.b * v.l});
    for (size_t b = 0; b < v.b; ++b)
        for (size_t co = 0; co < out_c; ++co) {
            const double* src = dy.data.data() + (b * out_c + co) * v.l;
            double* dst = dout.data.data() + co * (v.b * v.l) + b * v.l;
            std::copy(src, src + v.l, dst);
        }

    Conv1dGrads g;
    g.dp.kernels = Tensor(p.kernels.shape);
    g.dp.bias = Tensor(p.bias.shape);
    g.dx = Tensor(x.shape);

    for (size_t co = 0; co < out_c; ++co) {
        const double* row = dout.data.data() + co * (v.b * v.l);
        double acc = 0.0;
        for (size_t i = 0; i < v.b * v.l; ++i) acc += row[i];
        g.dp.bias[co] = acc;
    }

    Tensor cols = im2col(x, v, width);
    matmul(dout.data.data(), cols.data.data(), g.dp.kernels.data.data(), out_c,
           in_c * width, v.b * v.l, false, true);

    Tensor dcols({in_c * width, v.b * v.l});
    matmul(p.kernels.data.data(), dout.data.data(), dcols.data.data(), in_c * width,
           v.b * v.l, out_c, true, false);

    // col2im scatter-add
    for (size_t c = 0; c < in_c; ++c)
        for (size_t w = 0; w < width; ++w) {
            const double* row = dcols.data.data() + (c * width + w) * (v.b * v.l);
            ptrdiff_t shift = static_cast<ptrdiff_t>(w) - static_cast<ptrdiff_t>(pad);
            size_t lo = shift < 0 ? static_cast<size_t>(-shift) : 0;
            size_t hi = shift > 0 ? v.l - static_cast<size_t>(shift) : v.l;
            for (size_t b = 0; b < v.b; ++b) {
                double* dst = g.dx.data.data() + (b * in_c + c) * v.l;
                const double* src = row + b * v.l;
                for (size_t l = lo; l < hi; ++l)
                    dst[static_cast<size_t>(static_cast<ptrdiff_t>(l) + shift)] += src[l];
            }
        }
    return g;
}

// -- elementwise --------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    if (!x.same_shape(dy)) throw ConfigError("relu_backward: shape mismatch");
    Tensor dx = dy;
    for (size_t i = 0; i < dx.size(); ++i)
        if (!(x[i] > 0.0)) dx[i] = 0.0;
    return dx;
}

// -- pooling ------------------------------------------------------------

PoolCache maxpool1d(const Tensor& x, size_t k, size_t stride) {
    Bcl v = as_bcl(x, "maxpool1d");
    if (v.l < k) throw ConfigError("maxpool1d: length shorter than the window");
    size_t lo = (v.l - k) / stride + 1;

    PoolCache cache;
    cache.y = Tensor(shape_like(v, v.c, lo));
    cache.argmax.resize(v.b * v.c * lo);
    for (size_t b = 0; b < v.b; ++b)
        for (size_t c = 0; c < v.c; ++c) {
            const double* src = x.data.data() + (b * v.c + c) * v.l;
            double* dst = cache.y.data.data() + (b * v.c + c) * lo;
            uint32_t* am = cache.argmax.data() + (b * v.c + c) * lo;
            for (size_t o = 0; o < lo; ++o) {
                size_t start = o * stride;
                size_t best = start;
                double best_v = src[start];
                for (size_t j = start + 1; j < start + k; ++j)
                    if (src[j] > best_v) {
                        best_v = src[j];
                        best = j;
                    }
                dst[o] = best_v;
                am[o] = static_cast<uint32_t>(best);
            }
        }
    return cache;
}

Tensor maxpool1d_backward(const Tensor& x, const PoolCache& cache, const Tensor& dy,
                          size_t k, size_t stride) {
    Bcl v = as_bcl(x, "maxpool1d_backward");
    size_t lo = (v.l - k) / stride + 1;
    if (dy.size() != v.b * v.c * lo) throw ConfigError("maxpool1d_backward: shape mismatch");
    Tensor dx(x.shape);
    for (size_t bc = 0; bc < v.b * v.c; ++bc) {
        const double* dsrc = dy.data.data() + bc * lo;
        const uint32_t* am = cache.argmax.data() + bc * lo;
        double* dst = dx.data.data() + bc * v.l;
        for (size_t o = 0; o < lo; ++o) dst[am[o]] += dsrc[o];
    }
    return dx;
}

// -- local response normalization ----------------------------------------

Tensor lrn(const Tensor& x, const LrnConfig& cfg) {
    if (cfg.n % 2 == 0 || cfg.n <= 0) throw ConfigError("lrn: window size must be odd");
    if (!(cfg.k > 0.0)) throw ConfigError("lrn: k must be positive");
    Bcl v = as_bcl(x, "lrn");
    size_t half = static_cast<size_t>(cfg.n / 2);

    Tensor y(x.shape);
    for (size_t b = 0; b < v.b; ++b)
        for (size_t l = 0; l < v.l; ++l) {
            for (size_t c = 0; c < v.c; ++c) {
                size_t c0 = c > half ? c - half : 0;
                size_t c1 = std::min(v.c - 1, c + half);
                double sum = 0.0;
                for (size_t cc = c0; cc <= c1; ++cc) {
                    double a = x.data[(b * v.c + cc) * v.l + l];
                    sum += a * a;
                }
                double denom = std::pow(cfg.k + cfg.alpha * sum, cfg.beta);
                y.data[(b * v.c + c) * v.l + l] = x.data[(b * v.c + c) * v.l + l] / denom;
            }
        }
    return y;
}

Tensor lrn_backward(const Tensor& x, const LrnConfig& cfg, const Tensor& dy) {
    Bcl v = as_bcl(x, "lrn_backward");
    if (!x.same_shape(dy)) throw ConfigError("lrn_backward: shape mismatch");
    size_t half = static_cast<size_t>(cfg.n / 2);

    Tensor dx(x.shape);
    std::vector<double> denom_pow(v.c);   // D_c^-beta
    std::vector<double> e(v.c);           // dy_c * a_c * D_c^(-beta-1)
    for (size_t b = 0; b < v.b; ++b)
        for (size_t l = 0; l < v.l; ++l) {
            for (size_t c = 0; c < v.c; ++c) {
                size_t c0 = c > half ? c - half : 0;
                size_t c1 = std::min(v.c - 1, c + half);
                double sum = 0.0;
                for (size_t cc = c0; cc <= c1; ++cc) {
                    double a = x.data[(b * v.c + cc) * v.l + l];
                    sum += a * a;
                }
                double d = cfg.k + cfg.alpha * sum;
                double dpb = std::pow(d, -cfg.beta);
                denom_pow[c] = dpb;
                e[c] = dy.data[(b * v.c + c) * v.l + l] *
                       x.data[(b * v.c + c) * v.l + l] * dpb / d;
            }
            for (size_t j = 0; j < v.c; ++j) {
                size_t c0 = j > half ? j - half : 0;
                size_t c1 = std::min(v.c - 1, j + half);
                double s = 0.0;
                for (size_t cc = c0; cc <= c1; ++cc) s += e[cc];
                size_t at = (b * v.c + j) * v.l + l;
                dx.data[at] = dy.data[at] * denom_pow[j] -
                              2.0 * cfg.alpha * cfg.beta * x.data[at] * s;
            }
        }
    return dx;
}

// -- dense ----------------------------------------------------------------

Tensor dense(const Tensor& x, const DenseParams& p) {
    Bn v = as_bn(x, "dense");
    size_t out = p.weight.dim(0), in = p.weight.dim(1);
    if (v.n != in)
        throw ConfigError("dense: input width " + std::to_string(v.n) +
                          " does not match weight width " + std::to_string(in));
    Tensor y(shape_like(v, out));
    matmul(x.data.data(), p.weight.data.data(), y.data.data(), v.b, out, in, false, true);
    for (size_t b = 0; b < v.b; ++b)
        for (size_t o = 0; o < out; ++o) y.data[b * out + o] += p.bias[o];
    return y;
}

DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy) {
    Bn v = as_bn(x, "dense_backward");
    size_t out = p.weight.dim(0), in = p.weight.dim(1);
    if (dy.size() != v.b * out) throw ConfigError("dense_backward: shape mismatch");

    DenseGrads g;
    g.dx = Tensor(x.shape);
    g.dp.weight = Tensor(p.weight.shape);
    g.dp.bias = Tensor(p.bias.shape);

    // dW = dy^T x, dx = dy W, db = column sums of dy
    matmul(dy.data.data(), x.data.data(), g.dp.weight.data.data(), out, in, v.b, true, false);
    matmul(dy.data.data(), p.weight.data.data(), g.dx.data.data(), v.b, in, out, false,
           false);
    for (size_t b = 0; b < v.b; ++b)
        for (size_t o = 0; o < out; ++o) g.dp.bias[o] += dy.data[b * out + o];
    return g;
}

// -- dropout --------------------------------------------------------------

DropoutCache dropout(const Tensor& x, double p, Rng* rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
    DropoutCache cache;
    if (!training || p == 0.0) {
        cache.y = x;
        return cache;
    }
    if (!rng) throw ConfigError("dropout: rng required in training mode");
    cache.y = Tensor(x.shape);
    cache.mask.resize(x.size());
    cache.p = p;
    double scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < x.size(); ++i) {
        bool keep = rng->uniform() >= p;
        cache.mask[i] = keep;
        cache.y[i] = keep ? x[i] * scale : 0.0;
    }
    return cache;
}

Tensor dropout_backward(const DropoutCache& cache, const Tensor& dy) {
    if (cache.mask.empty()) return dy;  // identity pass
    Tensor dx = dy;
    double scale = 1.0 / (1.0 - cache.p);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] = cache.mask[i] ? dx[i] * scale : 0.0;
    return dx;
}

// -- LSTM -----------------------------------------------------------------

std::pair<Tensor, Tensor> lstm_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                    const LstmParams& p, LstmStepCache* cache) {
    Bn vx = as_bn(x, "lstm_step");
    size_t hidden = p.hidden();
    if (vx.n != p.input())
        throw ConfigError("lstm_step: input width " + std::to_string(vx.n) +
                          " does not match " + std::to_string(p.input()));
    if (h.size() != vx.b * hidden || c.size() != vx.b * hidden)
        throw ConfigError("lstm_step: state shape mismatch");

    size_t gates = 4 * hidden;
    Tensor z({vx.b, gates});
    matmul(x.data.data(), p.wx.data.data(), z.data.data(), vx.b, gates, vx.n, false, true);
    matmul(h.data.data(), p.wh.data.data(), z.data.data(), vx.b, gates, hidden, false, true,
           1.0, 1.0);
    for (size_t b = 0; b < vx.b; ++b)
        for (size_t j = 0; j < gates; ++j) z.data[b * gates + j] += p.bias[j];

    Tensor i(shape_like(vx, hidden)), f(shape_like(vx, hidden)), g(shape_like(vx, hidden)),
        o(shape_like(vx, hidden));
    Tensor c_new(shape_like(vx, hidden)), h_new(shape_like(vx, hidden)),
        tanh_c(shape_like(vx, hidden));

    for (size_t b = 0; b < vx.b; ++b)
        for (size_t u = 0; u < hidden; ++u) {
            const double* zb = z.data.data() + b * gates;
            double iv = sigmoid(zb[u]);
            double fv = sigmoid(zb[hidden + u]);
            double gv = std::tanh(zb[2 * hidden + u]);
            double ov = sigmoid(zb[3 * hidden + u]);
            double cv = fv * c.data[b * hidden + u] + iv * gv;
            double tc = std::tanh(cv);
            size_t at = b * hidden + u;
            i[at] = iv;
            f[at] = fv;
            g[at] = gv;
            o[at] = ov;
            c_new[at] = cv;
            tanh_c[at] = tc;
            h_new[at] = ov * tc;
        }

    if (cache) {
        cache->x = x;
        cache->h_prev = h;
        cache->c_prev = c;
        cache->i = std::move(i);
        cache->f = std::move(f);
        cache->g = std::move(g);
        cache->o = std::move(o);
        cache->c = c_new;
        cache->tanh_c = std::move(tanh_c);
    }
    return {std::move(h_new), std::move(c_new)};
}

LstmStepGrads lstm_step_backward(const LstmParams& p, const LstmStepCache& cache,
                                 const Tensor& dh, const Tensor& dc) {
    Bn vx = as_bn(cache.x, "lstm_step_backward");
    size_t hidden = p.hidden();
    size_t gates = 4 * hidden;

    // gate pre-activation gradients, packed like the parameters
    Tensor dz({vx.b, gates});
    Tensor dc_prev(cache.c_prev.shape);
    for (size_t b = 0; b < vx.b; ++b)
        for (size_t u = 0; u < hidden; ++u) {
            size_t at = b * hidden + u;
            double iv = cache.i[at], fv = cache.f[at], gv = cache.g[at], ov = cache.o[at];
            double tc = cache.tanh_c[at];
            double dhv = dh[at];
            double dov = dhv * tc;
            double dcv = dc.size() ? dc[at] : 0.0;
            dcv += dhv * ov * (1.0 - tc * tc);
            double div = dcv * gv;
            double dgv = dcv * iv;
            double dfv = dcv * cache.c_prev[at];
            dc_prev[at] = dcv * fv;
            double* zb = dz.data.data() + b * gates;
            zb[u] = div * iv * (1.0 - iv);
            zb[hidden + u] = dfv * fv * (1.0 - fv);
            zb[2 * hidden + u] = dgv * (1.0 - gv * gv);
            zb[3 * hidden + u] = dov * ov * (1.0 - ov);
        }

    LstmStepGrads g;
    g.dp.wx = Tensor(p.wx.shape);
    g.dp.wh = Tensor(p.wh.shape);
    g.dp.bias = Tensor(p.bias.shape);
    g.dx = Tensor(cache.x.shape);
    g.dh_prev = Tensor(cache.h_prev.shape);
    g.dc_prev = std::move(dc_prev);

    size_t in = p.input();
    matmul(dz.data.data(), cache.x.data.data(), g.dp.wx.data.data(), gates, in, vx.b, true,
           false);
    matmul(dz.data.data(), cache.h_prev.data.data(), g.dp.wh.data.data(), gates, hidden,
           vx.b, true, false);
    for (size_t b = 0; b < vx.b; ++b)
        for (size_t j = 0; j < gates; ++j) g.dp.bias[j] += dz.data[b * gates + j];
    matmul(dz.data.data(), p.wx.data.data(), g.dx.data.data(), vx.b, in, gates, false,
           false);
    matmul(dz.data.data(), p.wh.data.data(), g.dh_prev.data.data(), vx.b, hidden, gates,
           false, false);
    return g;
}

namespace {

struct Btf {
    size_t b, t, f;
    bool batched;
};

Btf as_btf(const Tensor& x, const char* what) {
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
    throw ConfigError(std::string(what) + ": expected [T,F] or [B,T,F] input");
}

// Gathers timestep t of a [B, T, F] sequence into a [B, F] tensor.
Tensor gather_step(const Tensor& seq, const Btf& v, size_t t, size_t f) {
    Tensor out({v.b, f});
    for (size_t b = 0; b < v.b; ++b)
        std::copy(seq.data.data() + (b * v.t + t) * f, seq.data.data() + (b * v.t + t) * f + f,
                  out.data.data() + b * f);
    return out;
}

}  // namespace

Tensor lstm_sequence(const Tensor& x, std::span<const LstmParams> layers, double dropout_p,
                     Rng* rng, bool training, LstmSeqCache* cache) {
    Btf v = as_btf(x, "lstm_sequence");
    if (layers.empty()) throw ConfigError("lstm_sequence: no layers");
    if (layers[0].input() != v.f)
        throw ConfigError("lstm_sequence: layer 1 expects input width " +
                          std::to_string(layers[0].input()) + ", got " + std::to_string(v.f));

    if (cache) {
        cache->layers.assign(layers.size(), {});
        cache->batch = v.b;
        cache->timesteps = v.t;
    }

    Tensor seq({v.b, v.t, v.f});
    seq.data = x.data;  // canonical batched copy of the input sequence

    Tensor last_h;
    for (size_t li = 0; li < layers.size(); ++li) {
        const LstmParams& p = layers[li];
        size_t in = p.input();
        size_t hidden = p.hidden();
        if (li > 0 && in != layers[li - 1].hidden())
            throw ConfigError("lstm_sequence: layer " + std::to_string(li + 1) +
                              " input width mismatch");
        if (seq.dim(2) != in)
            throw ConfigError("lstm_sequence: sequence width does not match layer " +
                              std::to_string(li + 1));

        Btf sv{v.b, v.t, in, true};
        Tensor h({v.b, hidden});
        Tensor c({v.b, hidden});
        Tensor out_seq({v.b, v.t, hidden});
        if (cache) cache->layers[li].steps.resize(v.t);
        for (size_t t = 0; t < v.t; ++t) {
            Tensor xt = gather_step(seq, sv, t, in);
            LstmStepCache* sc = cache ? &cache->layers[li].steps[t] : nullptr;
            auto [h_new, c_new] = lstm_step(xt, h, c, p, sc);
            h = std::move(h_new);
            c = std::move(c_new);
            for (size_t b = 0; b < v.b; ++b)
                std::copy(h.data.data() + b * hidden, h.data.data() + (b + 1) * hidden,
                          out_seq.data.data() + (b * v.t + t) * hidden);
        }
        DropoutCache drop = dropout(out_seq, dropout_p, rng, training);
        seq = drop.y;
        if (li + 1 == layers.size()) {
            Btf ov{v.b, v.t, hidden, true};
            last_h = gather_step(seq, ov, v.t - 1, hidden);
        }
        if (cache) cache->layers[li].drop = std::move(drop);
    }

    if (!v.batched) {
        last_h.shape = {last_h.dim(1)};
    }
    return last_h;
}

LstmSeqGrads lstm_sequence_backward(std::span<const LstmParams> layers,
                                    const LstmSeqCache& cache, const Tensor& dh_last) {
    size_t nb = cache.batch, nt = cache.timesteps;
    LstmSeqGrads out;
    out.dlayers.resize(layers.size());

    // Gradient w.r.t. the (post-dropout) output sequence of the top layer:
    // only the final timestep receives signal.
    size_t top_hidden = layers.back().hidden();
    Tensor dseq({nb, nt, top_hidden});
    for (size_t b = 0; b < nb; ++b)
        for (size_t u = 0; u < top_hidden; ++u)
            dseq.data[(b * nt + nt - 1) * top_hidden + u] = dh_last[b * top_hidden + u];

    for (size_t li = layers.size(); li-- > 0;) {
        const LstmParams& p = layers[li];
        size_t hidden = p.hidden();
        size_t in = p.input();
        const auto& lc = cache.layers[li];

        // through the output dropout
        Tensor dout = dropout_backward(lc.drop, dseq);

        LstmParams& dp = out.dlayers[li];
        dp.wx = Tensor(p.wx.shape);
        dp.wh = Tensor(p.wh.shape);
        dp.bias = Tensor(p.bias.shape);

        Tensor dh({nb, hidden});
        Tensor dc({nb, hidden});
        Tensor dinput({nb, nt, in});
        for (size_t t = nt; t-- > 0;) {
            for (size_t b = 0; b < nb; ++b)
                for (size_t u = 0; u < hidden; ++u)
                    dh.data[b * hidden + u] += dout.data[(b * nt + t) * hidden + u];
            LstmStepGrads sg = lstm_step_backward(p, lc.steps[t], dh, dc);
            for (size_t i = 0; i < dp.wx.size(); ++i) dp.wx[i] += sg.dp.wx[i];
            for (size_t i = 0; i < dp.wh.size(); ++i) dp.wh[i] += sg.dp.wh[i];
            for (size_t i = 0; i < dp.bias.size(); ++i) dp.bias[i] += sg.dp.bias[i];
            for (size_t b = 0; b < nb; ++b)
                std::copy(sg.dx.data.data() + b * in, sg.dx.data.data() + (b + 1) * in,
                          dinput.data.data() + (b * nt + t) * in);
            dh = std::move(sg.dh_prev);
            dc = std::move(sg.dc_prev);
        }
        if (li == 0) {
            out.dx = std::move(dinput);
        } else {
            dseq = std::move(dinput);
        }
    }
    return out;
}

// -- classifier head ------------------------------------------------------

Tensor softmax(const Tensor& logits) {
    Bn v = as_bn(logits, "softmax");
    Tensor probs(logits.shape);
    for (size_t b = 0; b < v.b; ++b) {
        const double* z = logits.data.data() + b * v.n;
        double* p = probs.data.data() + b * v.n;
        double zmax = z[0];
        for (size_t j = 1; j < v.n; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (size_t j = 0; j < v.n; ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        for (size_t j = 0; j < v.n; ++j) p[j] /= sum;
    }
    return probs;
}

double cross_entropy(const Tensor& probs, size_t label) {
    Bn v = as_bn(probs, "cross_entropy");
    if (v.b != 1) throw ConfigError("cross_entropy: expected a single distribution");
    if (label >= v.n) throw ConfigError("cross_entropy: label out of range");
    return -std::log(std::max(probs[label], 1e-12));
}

XentResult softmax_cross_entropy(const Tensor& logits, std::span<const size_t> labels) {
    Bn v = as_bn(logits, "softmax_cross_entropy");
    if (labels.size() != v.b)
        throw ConfigError("softmax_cross_entropy: batch/label count mismatch");
    XentResult r;
    r.probs = softmax(logits);
    r.dlogits = r.probs;
    double total = 0.0;
    for (size_t b = 0; b < v.b; ++b) {
        if (labels[b] >= v.n) throw ConfigError("softmax_cross_entropy: label out of range");
        total += -std::log(std::max(r.probs[b * v.n + labels[b]], 1e-12));
        r.dlogits[b * v.n + labels[b]] -= 1.0;
    }
    double inv_b = 1.0 / static_cast<double>(v.b);
    for (double& d : r.dlogits.data) d *= inv_b;
    r.mean_loss = total * inv_b;
    return r;
}

// -- regularization and optimizer ------------------------------------------

double l1_penalty(const Tensor& weights, double lambda, Tensor* grad_accum) {
    if (lambda < 0.0) throw ConfigError("l1_penalty: lambda must be nonnegative");
    if (grad_accum && !grad_accum->same_shape(weights))
        throw ConfigError("l1_penalty: gradient shape mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        double w = weights[i];
        sum += std::abs(w);
        if (grad_accum && w != 0.0)
            grad_accum->data[i] += w > 0.0 ? lambda : -lambda;
    }
    return lambda * sum;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr) {
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
        throw ConfigError("adam_step: shape mismatch");
    if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// -- finite-difference harness ----------------------------------------------

double grad_check(const GradCheckProblem& problem, double eps) {
    if (problem.coords.size() != problem.analytic.size())
        throw ConfigError("grad_check: coordinate/gradient count mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < problem.coords.size(); ++i) {
        double* coord = problem.coords[i];
        double saved = *coord;
        *coord = saved + eps;
        double up = problem.loss();
        *coord = saved - eps;
        double down = problem.loss();
        *coord = saved;
        double numeric = (up - down) / (2.0 * eps);
        double analytic = problem.analytic[i];
        double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

}  // namespace netsift::nn
