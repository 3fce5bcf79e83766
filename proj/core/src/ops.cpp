#include "deblurkit/ops.hpp"

#include "deblurkit/errors.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dbk::ops {

namespace {

using detail::Node;

std::shared_ptr<Node> make_node(TensorShape shape) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->data.assign(static_cast<std::size_t>(shape.numel()), 0.0f);
    return n;
}

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void attach(const std::shared_ptr<Node>& out,
            std::vector<std::shared_ptr<Node>> parents,
            std::function<void(Node&)> fn) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw ContractError(std::string(op) + ": shape mismatch " + a.shape().str() +
                            " vs " + b.shape().str());
}

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
           const float* a, int lda, const float* b, int ldb, float beta, float* c,
           int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

// Unfolds one sample's group slice into a [ic_g*kh*kw, out_h*out_w] matrix.
void im2col(const float* x, int channels, int h, int w, int kh, int kw, int stride,
            int pad, int out_h, int out_w, float* col) {
    const std::int64_t cols = static_cast<std::int64_t>(out_h) * out_w;
    std::int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
        const float* plane = x + static_cast<std::int64_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                float* dst = col + row * cols;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + static_cast<std::int64_t>(oy) * out_w, 0,
                                    sizeof(float) * out_w);
                        continue;
                    }
                    const float* src_row = plane + static_cast<std::int64_t>(iy) * w;
                    float* dst_row = dst + static_cast<std::int64_t>(oy) * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst_row[ox] = (ix >= 0 && ix < w) ? src_row[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Scatters a column matrix back onto the (padded) input, accumulating.
void col2im_accumulate(const float* col, int channels, int h, int w, int kh, int kw,
                       int stride, int pad, int out_h, int out_w, float* dx) {
    const std::int64_t cols = static_cast<std::int64_t>(out_h) * out_w;
    std::int64_t row = 0;
    for (int c = 0; c < channels; ++c) {
        float* plane = dx + static_cast<std::int64_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++row) {
                const float* src = col + row * cols;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    float* dst_row = plane + static_cast<std::int64_t>(iy) * w;
                    const float* src_row = src + static_cast<std::int64_t>(oy) * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst_row[ix] += src_row[ox];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    int n, in_c, h, w;
    int out_c, ic_g, kh, kw;
    int stride, pad, groups;
    int out_h, out_w;
    int oc_g;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, const Conv2dOpts& opts) {
    const TensorShape& xs = x.shape();
    const TensorShape& ws = weight.shape();
    ConvDims d{};
    d.n = xs.n;
    d.in_c = xs.c;
    d.h = xs.h;
    d.w = xs.w;
    d.out_c = ws.n;
    d.ic_g = ws.c;
    d.kh = ws.h;
    d.kw = ws.w;
    d.stride = opts.stride;
    d.pad = opts.padding;
    d.groups = opts.groups;
    if (d.stride < 1 || d.pad < 0 || d.groups < 1)
        throw ContractError("conv2d: invalid stride/padding/groups");
    if (d.in_c != d.ic_g * d.groups || d.out_c % d.groups != 0)
        throw ContractError("conv2d: channel/group mismatch, x=" + xs.str() +
                            " w=" + ws.str() + " groups=" + std::to_string(d.groups));
    d.out_h = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.out_w = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    if (d.out_h < 1 || d.out_w < 1)
        throw ContractError("conv2d: kernel larger than padded input, x=" + xs.str());
    d.oc_g = d.out_c / d.groups;
    return d;
}

bool is_pointwise(const ConvDims& d) {
    return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0 && d.groups == 1;
}

bool is_depthwise(const ConvDims& d) {
    return d.groups == d.in_c && d.ic_g == 1 && d.oc_g == 1;
}

void conv_forward(const ConvDims& d, const float* x, const float* w, const float* b,
                  float* y) {
    const std::int64_t out_plane = static_cast<std::int64_t>(d.out_h) * d.out_w;
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;

    if (is_pointwise(d)) {
        // y[n] = W[out_c, in_c] * x[n][in_c, h*w]
        for (int n = 0; n < d.n; ++n)
            sgemm(false, false, d.out_c, static_cast<int>(out_plane), d.in_c, 1.0f, w,
                  d.in_c, x + n * d.in_c * in_plane, static_cast<int>(out_plane), 0.0f,
                  y + n * d.out_c * out_plane, static_cast<int>(out_plane));
    } else if (is_depthwise(d)) {
        for (int n = 0; n < d.n; ++n) {
            for (int c = 0; c < d.in_c; ++c) {
                const float* xp = x + (static_cast<std::int64_t>(n) * d.in_c + c) * in_plane;
                const float* wk = w + static_cast<std::int64_t>(c) * d.kh * d.kw;
                float* yp = y + (static_cast<std::int64_t>(n) * d.out_c + c) * out_plane;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        float acc = 0.0f;
                        const int y0 = oy * d.stride - d.pad;
                        const int x0 = ox * d.stride - d.pad;
                        for (int ky = 0; ky < d.kh; ++ky) {
                            const int iy = y0 + ky;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < d.kw; ++kx) {
                                const int ix = x0 + kx;
                                if (ix < 0 || ix >= d.w) continue;
                                acc += xp[iy * d.w + ix] * wk[ky * d.kw + kx];
                            }
                        }
                        yp[oy * d.out_w + ox] = acc;
                    }
                }
            }
        }
    } else {
        const int k_rows = d.ic_g * d.kh * d.kw;
        std::vector<float> col(static_cast<std::size_t>(k_rows) * out_plane);
        for (int n = 0; n < d.n; ++n) {
            for (int g = 0; g < d.groups; ++g) {
                const float* xg = x + (static_cast<std::int64_t>(n) * d.in_c +
                                       static_cast<std::int64_t>(g) * d.ic_g) * in_plane;
                im2col(xg, d.ic_g, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.out_h,
                       d.out_w, col.data());
                sgemm(false, false, d.oc_g, static_cast<int>(out_plane), k_rows, 1.0f,
                      w + static_cast<std::int64_t>(g) * d.oc_g * k_rows, k_rows,
                      col.data(), static_cast<int>(out_plane), 0.0f,
                      y + (static_cast<std::int64_t>(n) * d.out_c +
                           static_cast<std::int64_t>(g) * d.oc_g) * out_plane,
                      static_cast<int>(out_plane));
            }
        }
    }

    if (b) {
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.out_c; ++c) {
                float* yp = y + (static_cast<std::int64_t>(n) * d.out_c + c) * out_plane;
                const float bc = b[c];
                for (std::int64_t i = 0; i < out_plane; ++i) yp[i] += bc;
            }
    }
}

void conv_backward(const ConvDims& d, const float* x, const float* w, const float* dy,
                   float* dx, float* dw, float* db) {
    const std::int64_t out_plane = static_cast<std::int64_t>(d.out_h) * d.out_w;
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;

    if (db) {
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.out_c; ++c) {
                const float* g = dy + (static_cast<std::int64_t>(n) * d.out_c + c) * out_plane;
                double acc = 0.0;
                for (std::int64_t i = 0; i < out_plane; ++i) acc += g[i];
                db[c] += static_cast<float>(acc);
            }
    }

    if (is_pointwise(d)) {
        for (int n = 0; n < d.n; ++n) {
            const float* xn = x + n * d.in_c * in_plane;
            const float* gn = dy + n * d.out_c * out_plane;
            // dW += dY[n] * X[n]^T
            if (dw)
                sgemm(false, true, d.out_c, d.in_c, static_cast<int>(out_plane), 1.0f,
                      gn, static_cast<int>(out_plane), xn, static_cast<int>(out_plane),
                      1.0f, dw, d.in_c);
            // dX[n] += W^T * dY[n]
            if (dx)
                sgemm(true, false, d.in_c, static_cast<int>(out_plane), d.out_c, 1.0f,
                      w, d.in_c, gn, static_cast<int>(out_plane), 1.0f,
                      dx + n * d.in_c * in_plane, static_cast<int>(out_plane));
        }
        return;
    }

    if (is_depthwise(d)) {
        for (int n = 0; n < d.n; ++n) {
            for (int c = 0; c < d.in_c; ++c) {
                const float* xp = x + (static_cast<std::int64_t>(n) * d.in_c + c) * in_plane;
                const float* wk = w + static_cast<std::int64_t>(c) * d.kh * d.kw;
                const float* gp = dy + (static_cast<std::int64_t>(n) * d.out_c + c) * out_plane;
                float* dxp = dx ? dx + (static_cast<std::int64_t>(n) * d.in_c + c) * in_plane
                                : nullptr;
                float* dwk = dw ? dw + static_cast<std::int64_t>(c) * d.kh * d.kw : nullptr;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const float g = gp[oy * d.out_w + ox];
                        if (g == 0.0f) continue;
                        const int y0 = oy * d.stride - d.pad;
                        const int x0 = ox * d.stride - d.pad;
                        for (int ky = 0; ky < d.kh; ++ky) {
                            const int iy = y0 + ky;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < d.kw; ++kx) {
                                const int ix = x0 + kx;
                                if (ix < 0 || ix >= d.w) continue;
                                if (dxp) dxp[iy * d.w + ix] += g * wk[ky * d.kw + kx];
                                if (dwk) dwk[ky * d.kw + kx] += g * xp[iy * d.w + ix];
                            }
                        }
                    }
                }
            }
        }
        return;
    }

    const int k_rows = d.ic_g * d.kh * d.kw;
    std::vector<float> col(static_cast<std::size_t>(k_rows) * out_plane);
    std::vector<float> dcol(dx ? col.size() : 0);
    for (int n = 0; n < d.n; ++n) {
        for (int g = 0; g < d.groups; ++g) {
            const float* xg = x + (static_cast<std::int64_t>(n) * d.in_c +
                                   static_cast<std::int64_t>(g) * d.ic_g) * in_plane;
            const float* gg = dy + (static_cast<std::int64_t>(n) * d.out_c +
                                    static_cast<std::int64_t>(g) * d.oc_g) * out_plane;
            const float* wg = w + static_cast<std::int64_t>(g) * d.oc_g * k_rows;
            im2col(xg, d.ic_g, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.out_h, d.out_w,
                   col.data());
            if (dw)
                sgemm(false, true, d.oc_g, k_rows, static_cast<int>(out_plane), 1.0f,
                      gg, static_cast<int>(out_plane), col.data(),
                      static_cast<int>(out_plane), 1.0f,
                      dw + static_cast<std::int64_t>(g) * d.oc_g * k_rows, k_rows);
            if (dx) {
                sgemm(true, false, k_rows, static_cast<int>(out_plane), d.oc_g, 1.0f,
                      wg, k_rows, gg, static_cast<int>(out_plane), 0.0f, dcol.data(),
                      static_cast<int>(out_plane));
                col2im_accumulate(dcol.data(), d.ic_g, d.h, d.w, d.kh, d.kw, d.stride,
                                  d.pad, d.out_h, d.out_w,
                                  dx + (static_cast<std::int64_t>(n) * d.in_c +
                                        static_cast<std::int64_t>(g) * d.ic_g) * in_plane);
            }
        }
    }
}

// Elementwise unary op with a data-dependent gradient mask.
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd_factor) {
    auto out = make_node(x.shape());
    std::span<const float> in = x.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = fwd(in[i]);
    if (track({&x})) {
        attach(out, {x.node()}, [bwd_factor](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * bwd_factor(p.data[i], self.data[i]);
        });
    }
    return Tensor::from_node(out);
}

} // namespace

std::int64_t conv2d_macs(int out_h, int out_w, int out_c, int in_c_per_group, int kh,
                         int kw) {
    return static_cast<std::int64_t>(out_h) * out_w * out_c * in_c_per_group * kh * kw;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOpts& opts) {
    const ConvDims d = conv_dims(x, weight, opts);
    if (bias.defined() && !(bias.shape() == TensorShape{1, d.out_c, 1, 1}))
        throw ContractError("conv2d: bias shape " + bias.shape().str() +
                            " does not match out_c=" + std::to_string(d.out_c));

    auto out = make_node({d.n, d.out_c, d.out_h, d.out_w});
    conv_forward(d, x.data().data(), weight.data().data(),
                 bias.defined() ? bias.data().data() : nullptr, out->data.data());

    if (track({&x, &weight, &bias})) {
        std::vector<std::shared_ptr<Node>> parents{x.node(), weight.node()};
        if (bias.defined()) parents.push_back(bias.node());
        attach(out, std::move(parents), [d](Node& self) {
            Node& xn = *self.parents[0];
            Node& wn = *self.parents[1];
            Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
            float* dx = nullptr;
            float* dw = nullptr;
            float* db = nullptr;
            if (xn.requires_grad) { xn.ensure_grad(); dx = xn.grad.data(); }
            if (wn.requires_grad) { wn.ensure_grad(); dw = wn.grad.data(); }
            if (bn && bn->requires_grad) { bn->ensure_grad(); db = bn->grad.data(); }
            if (!dx && !dw && !db) return;
            conv_backward(d, xn.data.data(), wn.data.data(), self.grad.data(), dx, dw,
                          db);
        });
    }
    return Tensor::from_node(out);
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     float eps) {
    const TensorShape s = x.shape();
    const std::int64_t plane = s.plane();
    if (plane < 1) throw ContractError("instance_norm: empty spatial plane");
    if (gamma.defined() && !(gamma.shape() == TensorShape{1, s.c, 1, 1}))
        throw ContractError("instance_norm: gamma shape " + gamma.shape().str());
    if (beta.defined() && !(beta.shape() == TensorShape{1, s.c, 1, 1}))
        throw ContractError("instance_norm: beta shape " + beta.shape().str());

    auto out = make_node(s);
    const int planes = s.n * s.c;
    std::vector<float> mean(planes), istd(planes);
    std::span<const float> in = x.data();
    const float* g = gamma.defined() ? gamma.data().data() : nullptr;
    const float* b = beta.defined() ? beta.data().data() : nullptr;

    for (int p = 0; p < planes; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * plane;
        double m = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) m += xp[i];
        m /= static_cast<double>(plane);
        double var = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double dlt = xp[i] - m;
            var += dlt * dlt;
        }
        var /= static_cast<double>(plane);
        mean[p] = static_cast<float>(m);
        istd[p] = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        const int c = p % s.c;
        const float scale = (g ? g[c] : 1.0f) * istd[p];
        const float shift = (b ? b[c] : 0.0f) - mean[p] * scale;
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * plane;
        for (std::int64_t i = 0; i < plane; ++i) yp[i] = xp[i] * scale + shift;
    }

    if (track({&x, &gamma, &beta})) {
        std::vector<std::shared_ptr<Node>> parents{x.node()};
        int gi = -1, bi = -1;
        if (gamma.defined()) { gi = static_cast<int>(parents.size()); parents.push_back(gamma.node()); }
        if (beta.defined()) { bi = static_cast<int>(parents.size()); parents.push_back(beta.node()); }
        attach(out, std::move(parents),
               [mean = std::move(mean), istd = std::move(istd), s, plane, gi,
                bi](Node& self) {
                   Node& xn = *self.parents[0];
                   Node* gn = gi >= 0 ? self.parents[gi].get() : nullptr;
                   Node* bn = bi >= 0 ? self.parents[bi].get() : nullptr;
                   const bool need_dx = xn.requires_grad;
                   const bool need_dg = gn && gn->requires_grad;
                   const bool need_db = bn && bn->requires_grad;
                   if (!need_dx && !need_dg && !need_db) return;
                   if (need_dx) xn.ensure_grad();
                   if (need_dg) gn->ensure_grad();
                   if (need_db) bn->ensure_grad();
                   const int planes = s.n * s.c;
                   for (int p = 0; p < planes; ++p) {
                       const int c = p % s.c;
                       const float* xp = xn.data.data() + static_cast<std::int64_t>(p) * plane;
                       const float* dyp = self.grad.data() + static_cast<std::int64_t>(p) * plane;
                       const float m = mean[p];
                       const float is = istd[p];
                       double sum_dy = 0.0, sum_dy_xhat = 0.0;
                       for (std::int64_t i = 0; i < plane; ++i) {
                           const double xhat = (xp[i] - m) * is;
                           sum_dy += dyp[i];
                           sum_dy_xhat += dyp[i] * xhat;
                       }
                       if (need_dg) gn->grad[c] += static_cast<float>(sum_dy_xhat);
                       if (need_db) bn->grad[c] += static_cast<float>(sum_dy);
                       if (need_dx) {
                           const float gamma_c = gn ? gn->data[c] : 1.0f;
                           const float mean_dy = static_cast<float>(sum_dy / plane);
                           const float mean_dy_xhat =
                               static_cast<float>(sum_dy_xhat / plane);
                           float* dxp = xn.grad.data() + static_cast<std::int64_t>(p) * plane;
                           for (std::int64_t i = 0; i < plane; ++i) {
                               const float xhat = (xp[i] - m) * is;
                               dxp[i] += gamma_c * is *
                                         (dyp[i] - mean_dy - xhat * mean_dy_xhat);
                           }
                       }
                   }
               });
    }
    return Tensor::from_node(out);
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float negative_slope) {
    return unary_op(
        x, [negative_slope](float v) { return v > 0.0f ? v : v * negative_slope; },
        [negative_slope](float v, float) { return v > 0.0f ? 1.0f : negative_slope; });
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](float v) { return std::tanh(v); },
        [](float, float y) { return 1.0f - y * y; });
}

Tensor hard_sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](float v) { return std::clamp((v + 3.0f) / 6.0f, 0.0f, 1.0f); },
        [](float v, float) { return (v > -3.0f && v < 3.0f) ? 1.0f / 6.0f : 0.0f; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
    return unary_op(
        x, [lo, hi](float v) { return std::clamp(v, lo, hi); },
        [lo, hi](float v, float) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a.shape());
    std::span<const float> pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa[i] + pb[i];
    if (track({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](Node& self) {
            for (int k = 0; k < 2; ++k) {
                Node& p = *self.parents[k];
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    p.grad[i] += self.grad[i];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a.shape());
    std::span<const float> pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa[i] - pb[i];
    if (track({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i] -= self.grad[i];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a.shape());
    std::span<const float> pa = a.data(), pb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = pa[i] * pb[i];
    if (track({&a, &b})) {
        attach(out, {a.node(), b.node()}, [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i] * pb.data[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i] += self.grad[i] * pa.data[i];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor add_scalar(const Tensor& x, float s) {
    return unary_op(
        x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float s) {
    return unary_op(
        x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor sub_broadcast(const Tensor& x, const Tensor& s) {
    if (s.shape().numel() != 1)
        throw ContractError("sub_broadcast: subtrahend must have exactly one element, got " +
                            s.shape().str());
    auto out = make_node(x.shape());
    std::span<const float> px = x.data();
    const float sv = s.data()[0];
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = px[i] - sv;
    if (track({&x, &s})) {
        attach(out, {x.node(), s.node()}, [](Node& self) {
            Node& px_node = *self.parents[0];
            Node& ps_node = *self.parents[1];
            if (px_node.requires_grad) {
                px_node.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    px_node.grad[i] += self.grad[i];
            }
            if (ps_node.requires_grad) {
                ps_node.ensure_grad();
                double acc = 0.0;
                for (float g : self.grad) acc += g;
                ps_node.grad[0] -= static_cast<float>(acc);
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor mul_channelwise(const Tensor& x, const Tensor& scale) {
    const TensorShape xs = x.shape();
    if (!(scale.shape() == TensorShape{xs.n, xs.c, 1, 1}))
        throw ContractError("mul_channelwise: scale shape " + scale.shape().str() +
                            " does not match x " + xs.str());
    const std::int64_t plane = xs.plane();
    auto out = make_node(xs);
    std::span<const float> px = x.data(), ps = scale.data();
    for (int p = 0; p < xs.n * xs.c; ++p) {
        const float sc = ps[p];
        const float* xp = px.data() + static_cast<std::int64_t>(p) * plane;
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * plane;
        for (std::int64_t i = 0; i < plane; ++i) yp[i] = xp[i] * sc;
    }
    if (track({&x, &scale})) {
        attach(out, {x.node(), scale.node()}, [plane, nc = xs.n * xs.c](Node& self) {
            Node& xn = *self.parents[0];
            Node& sn = *self.parents[1];
            if (xn.requires_grad) {
                xn.ensure_grad();
                for (int p = 0; p < nc; ++p) {
                    const float sc = sn.data[p];
                    const float* gp = self.grad.data() + static_cast<std::int64_t>(p) * plane;
                    float* dxp = xn.grad.data() + static_cast<std::int64_t>(p) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dxp[i] += gp[i] * sc;
                }
            }
            if (sn.requires_grad) {
                sn.ensure_grad();
                for (int p = 0; p < nc; ++p) {
                    const float* gp = self.grad.data() + static_cast<std::int64_t>(p) * plane;
                    const float* xp = xn.data.data() + static_cast<std::int64_t>(p) * plane;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
                    sn.grad[p] += static_cast<float>(acc);
                }
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_channels: empty input list");
    const TensorShape first = xs[0].shape();
    int total_c = 0;
    for (const Tensor& t : xs) {
        const TensorShape s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ContractError("concat_channels: spatial/batch mismatch " +
                                first.str() + " vs " + s.str());
        total_c += s.c;
    }
    const TensorShape os{first.n, total_c, first.h, first.w};
    auto out = make_node(os);
    const std::int64_t plane = first.plane();
    for (int n = 0; n < os.n; ++n) {
        std::int64_t c_off = 0;
        for (const Tensor& t : xs) {
            const int tc = t.shape().c;
            std::memcpy(out->data.data() + (static_cast<std::int64_t>(n) * total_c + c_off) * plane,
                        t.data().data() + static_cast<std::int64_t>(n) * tc * plane,
                        sizeof(float) * tc * plane);
            c_off += tc;
        }
    }
    bool any_grad = false;
    if (grad_enabled())
        for (const Tensor& t : xs)
            if (t.requires_grad()) any_grad = true;
    if (any_grad) {
        std::vector<std::shared_ptr<Node>> parents;
        std::vector<int> channels;
        for (const Tensor& t : xs) {
            parents.push_back(t.node());
            channels.push_back(t.shape().c);
        }
        attach(out, std::move(parents),
               [channels = std::move(channels), total_c, plane, batch = os.n](Node& self) {
                   std::int64_t c_off = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                       Node& p = *self.parents[k];
                       const int tc = channels[k];
                       if (p.requires_grad) {
                           p.ensure_grad();
                           for (int n = 0; n < batch; ++n) {
                               const float* g = self.grad.data() +
                                                (static_cast<std::int64_t>(n) * total_c + c_off) * plane;
                               float* dp = p.grad.data() +
                                           static_cast<std::int64_t>(n) * tc * plane;
                               for (std::int64_t i = 0; i < tc * plane; ++i) dp[i] += g[i];
                           }
                       }
                       c_off += tc;
                   }
               });
    }
    return Tensor::from_node(out);
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
    const TensorShape s = x.shape();
    if (c_begin < 0 || c_end > s.c || c_begin >= c_end)
        throw ContractError("slice_channels: bad range [" + std::to_string(c_begin) +
                            "," + std::to_string(c_end) + ") for " + s.str());
    const int oc = c_end - c_begin;
    const std::int64_t plane = s.plane();
    auto out = make_node({s.n, oc, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        std::memcpy(out->data.data() + static_cast<std::int64_t>(n) * oc * plane,
                    x.data().data() + (static_cast<std::int64_t>(n) * s.c + c_begin) * plane,
                    sizeof(float) * oc * plane);
    if (track({&x})) {
        attach(out, {x.node()}, [c_begin, oc, plane, s](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (int n = 0; n < s.n; ++n) {
                const float* g = self.grad.data() + static_cast<std::int64_t>(n) * oc * plane;
                float* dp = p.grad.data() +
                            (static_cast<std::int64_t>(n) * s.c + c_begin) * plane;
                for (std::int64_t i = 0; i < oc * plane; ++i) dp[i] += g[i];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (factor < 1) throw ContractError("upsample_nearest: factor < 1");
    const TensorShape s = x.shape();
    const TensorShape os{s.n, s.c, s.h * factor, s.w * factor};
    auto out = make_node(os);
    std::span<const float> in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * s.plane();
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * os.plane();
        for (int oy = 0; oy < os.h; ++oy) {
            const float* src_row = xp + static_cast<std::int64_t>(oy / factor) * s.w;
            float* dst_row = yp + static_cast<std::int64_t>(oy) * os.w;
            for (int ox = 0; ox < os.w; ++ox) dst_row[ox] = src_row[ox / factor];
        }
    }
    if (track({&x})) {
        attach(out, {x.node()}, [s, os, factor](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (int pl = 0; pl < s.n * s.c; ++pl) {
                const float* g = self.grad.data() + static_cast<std::int64_t>(pl) * os.plane();
                float* dp = p.grad.data() + static_cast<std::int64_t>(pl) * s.plane();
                for (int oy = 0; oy < os.h; ++oy)
                    for (int ox = 0; ox < os.w; ++ox)
                        dp[(oy / factor) * s.w + (ox / factor)] +=
                            g[static_cast<std::int64_t>(oy) * os.w + ox];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor avg_pool2d(const Tensor& x, int kernel, int stride) {
    if (kernel < 1 || stride < 1) throw ContractError("avg_pool2d: bad kernel/stride");
    const TensorShape s = x.shape();
    const int oh = (s.h - kernel) / stride + 1;
    const int ow = (s.w - kernel) / stride + 1;
    if (oh < 1 || ow < 1) throw ContractError("avg_pool2d: input smaller than kernel");
    const TensorShape os{s.n, s.c, oh, ow};
    auto out = make_node(os);
    const float inv = 1.0f / static_cast<float>(kernel * kernel);
    std::span<const float> in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * s.plane();
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * os.plane();
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                float acc = 0.0f;
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx)
                        acc += xp[(oy * stride + ky) * s.w + ox * stride + kx];
                yp[oy * ow + ox] = acc * inv;
            }
    }
    if (track({&x})) {
        attach(out, {x.node()}, [s, os, kernel, stride, inv](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (int pl = 0; pl < s.n * s.c; ++pl) {
                const float* g = self.grad.data() + static_cast<std::int64_t>(pl) * os.plane();
                float* dp = p.grad.data() + static_cast<std::int64_t>(pl) * s.plane();
                for (int oy = 0; oy < os.h; ++oy)
                    for (int ox = 0; ox < os.w; ++ox) {
                        const float gv = g[oy * os.w + ox] * inv;
                        for (int ky = 0; ky < kernel; ++ky)
                            for (int kx = 0; kx < kernel; ++kx)
                                dp[(oy * stride + ky) * s.w + ox * stride + kx] += gv;
                    }
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor mean_hw(const Tensor& x) {
    const TensorShape s = x.shape();
    auto out = make_node({s.n, s.c, 1, 1});
    const std::int64_t plane = s.plane();
    std::span<const float> in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * plane;
        double acc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
        out->data[p] = static_cast<float>(acc / static_cast<double>(plane));
    }
    if (track({&x})) {
        attach(out, {x.node()}, [plane, nc = s.n * s.c](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const float inv = 1.0f / static_cast<float>(plane);
            for (int pl = 0; pl < nc; ++pl) {
                const float gv = self.grad[pl] * inv;
                float* dp = p.grad.data() + static_cast<std::int64_t>(pl) * plane;
                for (std::int64_t i = 0; i < plane; ++i) dp[i] += gv;
            }
        });
    }
    return Tensor::from_node(out);
}

namespace {

int reflect_index(int i, int n) {
    // Mirror without repeating the border sample: -1 -> 1, n -> n-2. Indices
    // far outside keep bouncing (period 2n-2), so any padding width is valid.
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

} // namespace

Tensor reflection_pad(const Tensor& x, int top, int bottom, int left, int right) {
    const TensorShape s = x.shape();
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ContractError("reflection_pad: negative padding");
    const TensorShape os{s.n, s.c, s.h + top + bottom, s.w + left + right};
    auto out = make_node(os);
    std::span<const float> in = x.data();
    std::vector<int> ys(os.h), xsrc(os.w);
    for (int oy = 0; oy < os.h; ++oy) ys[oy] = reflect_index(oy - top, s.h);
    for (int ox = 0; ox < os.w; ++ox) xsrc[ox] = reflect_index(ox - left, s.w);
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * s.plane();
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * os.plane();
        for (int oy = 0; oy < os.h; ++oy) {
            const float* src_row = xp + static_cast<std::int64_t>(ys[oy]) * s.w;
            float* dst_row = yp + static_cast<std::int64_t>(oy) * os.w;
            for (int ox = 0; ox < os.w; ++ox) dst_row[ox] = src_row[xsrc[ox]];
        }
    }
    if (track({&x})) {
        attach(out, {x.node()},
               [s, os, ys = std::move(ys), xsrc = std::move(xsrc)](Node& self) {
                   Node& p = *self.parents[0];
                   if (!p.requires_grad) return;
                   p.ensure_grad();
                   for (int pl = 0; pl < s.n * s.c; ++pl) {
                       const float* g = self.grad.data() + static_cast<std::int64_t>(pl) * os.plane();
                       float* dp = p.grad.data() + static_cast<std::int64_t>(pl) * s.plane();
                       for (int oy = 0; oy < os.h; ++oy)
                           for (int ox = 0; ox < os.w; ++ox)
                               dp[static_cast<std::int64_t>(ys[oy]) * s.w + xsrc[ox]] +=
                                   g[static_cast<std::int64_t>(oy) * os.w + ox];
                   }
               });
    }
    return Tensor::from_node(out);
}

Tensor crop(const Tensor& x, int top, int bottom, int left, int right) {
    const TensorShape s = x.shape();
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ContractError("crop: negative margins");
    const int oh = s.h - top - bottom;
    const int ow = s.w - left - right;
    if (oh < 1 || ow < 1) throw ContractError("crop: margins exceed input " + s.str());
    const TensorShape os{s.n, s.c, oh, ow};
    auto out = make_node(os);
    std::span<const float> in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* xp = in.data() + static_cast<std::int64_t>(p) * s.plane();
        float* yp = out->data.data() + static_cast<std::int64_t>(p) * os.plane();
        for (int oy = 0; oy < oh; ++oy)
            std::memcpy(yp + static_cast<std::int64_t>(oy) * ow,
                        xp + static_cast<std::int64_t>(oy + top) * s.w + left,
                        sizeof(float) * ow);
    }
    if (track({&x})) {
        attach(out, {x.node()}, [s, os, top, left](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (int pl = 0; pl < s.n * s.c; ++pl) {
                const float* g = self.grad.data() + static_cast<std::int64_t>(pl) * os.plane();
                float* dp = p.grad.data() + static_cast<std::int64_t>(pl) * s.plane();
                for (int oy = 0; oy < os.h; ++oy)
                    for (int ox = 0; ox < os.w; ++ox)
                        dp[static_cast<std::int64_t>(oy + top) * s.w + left + ox] +=
                            g[static_cast<std::int64_t>(oy) * os.w + ox];
            }
        });
    }
    return Tensor::from_node(out);
}

Tensor sum_all(const Tensor& x) {
    auto out = make_node({1, 1, 1, 1});
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out->data[0] = static_cast<float>(acc);
    if (track({&x})) {
        attach(out, {x.node()}, [](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const float g = self.grad[0];
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
        });
    }
    return Tensor::from_node(out);
}

Tensor mean_all(const Tensor& x) {
    const std::int64_t n = x.numel();
    auto out = make_node({1, 1, 1, 1});
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    out->data[0] = static_cast<float>(acc / static_cast<double>(n));
    if (track({&x})) {
        attach(out, {x.node()}, [n](Node& self) {
            Node& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const float g = self.grad[0] / static_cast<float>(n);
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
        });
    }
    return Tensor::from_node(out);
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    const std::int64_t n = a.numel();
    auto out = make_node({1, 1, 1, 1});
    std::span<const float> pa = a.data(), pb = b.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        acc += d * d;
    }
    out->data[0] = static_cast<float>(acc / static_cast<double>(n));
    if (track({&a, &b})) {
        attach(out, {a.node(), b.node()}, [n](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            const float g = self.grad[0] * 2.0f / static_cast<float>(n);
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    pa.grad[i] += g * (pa.data[i] - pb.data[i]);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::int64_t i = 0; i < n; ++i)
                    pb.grad[i] -= g * (pa.data[i] - pb.data[i]);
            }
        });
    }
    return Tensor::from_node(out);
}

bool all_finite(const Tensor& x) {
    for (float v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace dbk::ops
