#include "hs3/nn/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <limits>

namespace hs3::nn {

namespace {

using MatrixRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

// Unrolls one batch item's group slice into a (Cg*k*k) x (OH*OW) matrix.
void im2col(const float* src, int in_ch_g, int in_h, int in_w, int kernel,
            int stride, int pad, int dilation, int out_h, int out_w,
            float* col) {
    for (int c = 0; c < in_ch_g; ++c) {
        const float* plane = src + static_cast<std::size_t>(c) * in_h * in_w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                float* row = col + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) *
                                       out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky * dilation;
                    if (iy < 0 || iy >= in_h) {
                        std::memset(row + static_cast<std::size_t>(oy) * out_w, 0,
                                    static_cast<std::size_t>(out_w) * sizeof(float));
                        continue;
                    }
                    const float* in_row = plane + static_cast<std::size_t>(iy) * in_w;
                    float* out_row = row + static_cast<std::size_t>(oy) * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx * dilation;
                        out_row[ox] = (ix >= 0 && ix < in_w) ? in_row[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds the column matrix back onto the input.
void col2im(const float* col, int in_ch_g, int in_h, int in_w, int kernel,
            int stride, int pad, int dilation, int out_h, int out_w,
            float* dst) {
    for (int c = 0; c < in_ch_g; ++c) {
        float* plane = dst + static_cast<std::size_t>(c) * in_h * in_w;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const float* row =
                    col + ((static_cast<std::size_t>(c) * kernel + ky) * kernel + kx) *
                              out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky * dilation;
                    if (iy < 0 || iy >= in_h) continue;
                    float* in_row = plane + static_cast<std::size_t>(iy) * in_w;
                    const float* src_row = row + static_cast<std::size_t>(oy) * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx * dilation;
                        if (ix >= 0 && ix < in_w) in_row[ix] += src_row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad,
               int dilation, int groups, bool bias)
    : in_ch(in_ch), out_ch(out_ch), kernel(kernel), stride(stride), pad(pad),
      dilation(dilation), groups(groups), has_bias(bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0)
        fail_runtime("shape error: conv channels not divisible by groups");
    weight.init_shape(out_ch, in_ch / groups, kernel, kernel);
    if (has_bias)
        this->bias.init_shape(1, out_ch, 1, 1);
}

void Conv2d::init(Rng& rng, const std::string& name_prefix) {
    weight.name = name_prefix + ".weight";
    // He initialization for the fan-in of one output unit.
    const double fan_in = static_cast<double>(in_ch / groups) * kernel * kernel;
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (auto& x : weight.value.v) x = static_cast<float>(gaussian(rng, 0.0, std_dev));
    if (has_bias) {
        bias.name = name_prefix + ".bias";
        bias.value.zero();
    }
}

int Conv2d::out_height(int in_h) const {
    return (in_h + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}
int Conv2d::out_width(int in_w) const { return out_height(in_w); }

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_ch)
        fail_runtime("shape error: conv expects " + std::to_string(in_ch) +
                     " channels, got " + x.shape_str());
    cached_x_ = x;
    const int oh = out_height(x.h), ow = out_width(x.w);
    if (oh <= 0 || ow <= 0)
        fail_runtime("shape error: conv output collapsed for input " + x.shape_str());
    Tensor y(x.n, out_ch, oh, ow);

    const int cg = in_ch / groups, og = out_ch / groups;
    const std::size_t krows = static_cast<std::size_t>(cg) * kernel * kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    std::vector<float> col(krows * cols);

    for (int i = 0; i < x.n; ++i) {
        for (int g = 0; g < groups; ++g) {
            const float* src = &x.v[x.index(i, g * cg, 0, 0)];
            im2col(src, cg, x.h, x.w, kernel, stride, pad, dilation, oh, ow,
                   col.data());
            ConstMapRM w(&weight.value.v[static_cast<std::size_t>(g) * og * krows],
                         og, static_cast<Eigen::Index>(krows));
            ConstMapRM cmat(col.data(), static_cast<Eigen::Index>(krows),
                            static_cast<Eigen::Index>(cols));
            MapRM out(&y.v[y.index(i, g * og, 0, 0)], og,
                      static_cast<Eigen::Index>(cols));
            out.noalias() = w * cmat;
        }
        if (has_bias)
            for (int oc = 0; oc < out_ch; ++oc) {
                const float b = bias.value.v[oc];
                float* plane = &y.v[y.index(i, oc, 0, 0)];
                for (std::size_t p = 0; p < cols; ++p) plane[p] += b;
            }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = cached_x_;
    const int oh = dy.h, ow = dy.w;
    const int cg = in_ch / groups, og = out_ch / groups;
    const std::size_t krows = static_cast<std::size_t>(cg) * kernel * kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    std::vector<float> col(krows * cols);
    std::vector<float> dcol(krows * cols);
    Tensor dx(x.n, x.c, x.h, x.w);

    for (int i = 0; i < x.n; ++i) {
        for (int g = 0; g < groups; ++g) {
            const float* src = &x.v[x.index(i, g * cg, 0, 0)];
            im2col(src, cg, x.h, x.w, kernel, stride, pad, dilation, oh, ow,
                   col.data());
            ConstMapRM cmat(col.data(), static_cast<Eigen::Index>(krows),
                            static_cast<Eigen::Index>(cols));
            ConstMapRM dout(&dy.v[dy.index(i, g * og, 0, 0)], og,
                            static_cast<Eigen::Index>(cols));
            MapRM dw(&weight.grad.v[static_cast<std::size_t>(g) * og * krows], og,
                     static_cast<Eigen::Index>(krows));
            dw.noalias() += dout * cmat.transpose();

            ConstMapRM w(&weight.value.v[static_cast<std::size_t>(g) * og * krows],
                         og, static_cast<Eigen::Index>(krows));
            MapRM dc(dcol.data(), static_cast<Eigen::Index>(krows),
                     static_cast<Eigen::Index>(cols));
            dc.noalias() = w.transpose() * dout;
            col2im(dcol.data(), cg, x.h, x.w, kernel, stride, pad, dilation, oh,
                   ow, &dx.v[dx.index(i, g * cg, 0, 0)]);
        }
        if (has_bias)
            for (int oc = 0; oc < out_ch; ++oc) {
                const float* plane = &dy.v[dy.index(i, oc, 0, 0)];
                double s = 0.0;
                for (std::size_t p = 0; p < cols; ++p) s += plane[p];
                bias.grad.v[oc] += static_cast<float>(s);
            }
    }
    return dx;
}

void Conv2d::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

BatchNorm2d::BatchNorm2d(int channels, float eps, float momentum)
    : channels(channels), eps(eps), momentum(momentum) {
    gamma.init_shape(1, channels, 1, 1);
    beta.init_shape(1, channels, 1, 1);
    running_mean.init_shape(1, channels, 1, 1);
    running_var.init_shape(1, channels, 1, 1);
    running_mean.buffer = running_var.buffer = true;
    running_mean.trainable = running_var.trainable = false;
    std::fill(gamma.value.v.begin(), gamma.value.v.end(), 1.0f);
    std::fill(running_var.value.v.begin(), running_var.value.v.end(), 1.0f);
}

void BatchNorm2d::init(const std::string& name_prefix) {
    gamma.name = name_prefix + ".weight";
    beta.name = name_prefix + ".bias";
    running_mean.name = name_prefix + ".running_mean";
    running_var.name = name_prefix + ".running_var";
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    if (x.c != channels) fail_runtime("shape error: batchnorm " + x.shape_str());
    cached_x_ = x;
    mean_.assign(channels, 0.0f);
    inv_std_.assign(channels, 0.0f);
    used_batch_stats_ = training && !frozen_stats;

    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;
    Tensor y(x.n, x.c, x.h, x.w);

    for (int j = 0; j < channels; ++j) {
        double mean, var;
        if (used_batch_stats_) {
            double s = 0.0, s2 = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const float* p = &x.v[x.index(i, j, 0, 0)];
                for (std::size_t k = 0; k < plane; ++k) {
                    s += p[k];
                    s2 += static_cast<double>(p[k]) * p[k];
                }
            }
            mean = s / static_cast<double>(m);
            var = s2 / static_cast<double>(m) - mean * mean;
            if (var < 0.0) var = 0.0;
            // Running statistics track the unbiased variance.
            const double unbiased =
                m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            running_mean.value.v[j] = static_cast<float>(
                (1.0 - momentum) * running_mean.value.v[j] + momentum * mean);
            running_var.value.v[j] = static_cast<float>(
                (1.0 - momentum) * running_var.value.v[j] + momentum * unbiased);
        } else {
            mean = running_mean.value.v[j];
            var = running_var.value.v[j];
        }
        const float mu = static_cast<float>(mean);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        mean_[j] = mu;
        inv_std_[j] = is;
        const float g = gamma.value.v[j], b = beta.value.v[j];
        for (int i = 0; i < x.n; ++i) {
            const float* p = &x.v[x.index(i, j, 0, 0)];
            float* q = &y.v[y.index(i, j, 0, 0)];
            for (std::size_t k = 0; k < plane; ++k)
                q[k] = (p[k] - mu) * is * g + b;
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const Tensor& x = cached_x_;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    Tensor dx(x.n, x.c, x.h, x.w);

    for (int j = 0; j < channels; ++j) {
        const float mu = mean_[j], is = inv_std_[j], g = gamma.value.v[j];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < x.n; ++i) {
            const float* px = &x.v[x.index(i, j, 0, 0)];
            const float* pd = &dy.v[dy.index(i, j, 0, 0)];
            for (std::size_t k = 0; k < plane; ++k) {
                sum_dy += pd[k];
                sum_dy_xhat += static_cast<double>(pd[k]) * (px[k] - mu) * is;
            }
        }
        gamma.grad.v[j] += static_cast<float>(sum_dy_xhat);
        beta.grad.v[j] += static_cast<float>(sum_dy);

        if (used_batch_stats_) {
            // d/dx of the batch-statistics normalization.
            for (int i = 0; i < x.n; ++i) {
                const float* px = &x.v[x.index(i, j, 0, 0)];
                const float* pd = &dy.v[dy.index(i, j, 0, 0)];
                float* pq = &dx.v[dx.index(i, j, 0, 0)];
                for (std::size_t k = 0; k < plane; ++k) {
                    const double xhat = (px[k] - mu) * is;
                    pq[k] = static_cast<float>(
                        g * is * (pd[k] - sum_dy / m - xhat * sum_dy_xhat / m));
                }
            }
        } else {
            // Running statistics are constants for the gradient.
            const float scale = g * is;
            for (int i = 0; i < x.n; ++i) {
                const float* pd = &dy.v[dy.index(i, j, 0, 0)];
                float* pq = &dx.v[dx.index(i, j, 0, 0)];
                for (std::size_t k = 0; k < plane; ++k) pq[k] = pd[k] * scale;
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
}

Tensor Activation::forward(const Tensor& x) {
    if (kind == Act::none) return x;
    if (frozen && cached_x_.same_shape(x)) {
        Tensor y = x;
        if (kind == Act::relu) {
            for (std::size_t i = 0; i < y.v.size(); ++i)
                if (cached_x_.v[i] <= 0.0f) y.v[i] = 0.0f;
        } else {
            for (std::size_t i = 0; i < y.v.size(); ++i) {
                if (cached_x_.v[i] <= 0.0f) y.v[i] = 0.0f;
                else if (cached_x_.v[i] >= 6.0f) y.v[i] = 6.0f;
            }
        }
        return y;
    }
    cached_x_ = x;
    Tensor y = x;
    if (kind == Act::relu) {
        for (auto& v : y.v) v = v > 0.0f ? v : 0.0f;
    } else {
        for (auto& v : y.v) v = v < 0.0f ? 0.0f : (v > 6.0f ? 6.0f : v);
    }
    return y;
}

Tensor Activation::backward(const Tensor& dy) {
    if (kind == Act::none) return dy;
    Tensor dx = dy;
    if (kind == Act::relu) {
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (cached_x_.v[i] <= 0.0f) dx.v[i] = 0.0f;
    } else {
        for (std::size_t i = 0; i < dx.v.size(); ++i)
            if (cached_x_.v[i] <= 0.0f || cached_x_.v[i] >= 6.0f) dx.v[i] = 0.0f;
    }
    return dx;
}

Tensor Dropout::forward(const Tensor& x, bool training) {
    identity_ = !training || p <= 0.0f;
    if (identity_) return x;
    if (rng == nullptr) fail_runtime("dropout used without an rng");
    const float keep = 1.0f - p;
    scale_.resize(x.v.size());
    Tensor y = x;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        scale_[i] = uniform_unit(*rng) < p ? 0.0f : 1.0f / keep;
        y.v[i] = x.v[i] * scale_[i];
    }
    return y;
}

Tensor Dropout::backward(const Tensor& dy) {
    if (identity_) return dy;
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= scale_[i];
    return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
    n_ = x.n;
    c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    const int oh = (x.h - kernel) / stride + 1;
    const int ow = (x.w - kernel) / stride + 1;
    if (oh <= 0 || ow <= 0)
        fail_runtime("shape error: pool output collapsed for input " + x.shape_str());
    Tensor y(x.n, x.c, oh, ow);
    argmax_.assign(y.v.size(), 0);

    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            const float* plane = &x.v[x.index(i, j, 0, 0)];
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::uint32_t best_idx = 0;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int iy = oy * stride + ky, ix = ox * stride + kx;
                            const std::uint32_t idx =
                                static_cast<std::uint32_t>(iy) * x.w + ix;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    y.v[o] = best;
                    argmax_[o] = best_idx;
                }
        }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    Tensor dx(n_, c_, in_h_, in_w_);
    std::size_t o = 0;
    const std::size_t plane = static_cast<std::size_t>(in_h_) * in_w_;
    const std::size_t out_plane = static_cast<std::size_t>(dy.h) * dy.w;
    for (int i = 0; i < n_; ++i)
        for (int j = 0; j < c_; ++j) {
            float* dplane = &dx.v[(static_cast<std::size_t>(i) * c_ + j) * plane];
            for (std::size_t k = 0; k < out_plane; ++k, ++o)
                dplane[argmax_[o]] += dy.v[o];
        }
    return dx;
}

namespace {

struct LerpWeights {
    int lo, hi;
    float w_lo, w_hi;
};

LerpWeights lerp_axis(int dst, int in_size, int out_size, bool align_corners) {
    double src;
    if (align_corners) {
        src = out_size > 1
                  ? static_cast<double>(dst) * (in_size - 1) / (out_size - 1)
                  : 0.0;
    } else {
        src = (static_cast<double>(dst) + 0.5) * in_size / out_size - 0.5;
        if (src < 0.0) src = 0.0;
    }
    int lo = static_cast<int>(src);
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = lo + 1 <= in_size - 1 ? lo + 1 : in_size - 1;
    const float t = static_cast<float>(src - lo);
    return {lo, hi, 1.0f - t, t};
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners) {
    Tensor y(x.n, x.c, out_h, out_w);
    std::vector<LerpWeights> ys(out_h), xs(out_w);
    for (int oy = 0; oy < out_h; ++oy) ys[oy] = lerp_axis(oy, x.h, out_h, align_corners);
    for (int ox = 0; ox < out_w; ++ox) xs[ox] = lerp_axis(ox, x.w, out_w, align_corners);

    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            const float* p = &x.v[x.index(i, j, 0, 0)];
            float* q = &y.v[y.index(i, j, 0, 0)];
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& a = ys[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& b = xs[ox];
                    q[static_cast<std::size_t>(oy) * out_w + ox] =
                        a.w_lo * (b.w_lo * p[static_cast<std::size_t>(a.lo) * x.w + b.lo] +
                                  b.w_hi * p[static_cast<std::size_t>(a.lo) * x.w + b.hi]) +
                        a.w_hi * (b.w_lo * p[static_cast<std::size_t>(a.hi) * x.w + b.lo] +
                                  b.w_hi * p[static_cast<std::size_t>(a.hi) * x.w + b.hi]);
                }
            }
        }
    return y;
}

Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w,
                                bool align_corners) {
    Tensor dx(dy.n, dy.c, in_h, in_w);
    std::vector<LerpWeights> ys(dy.h), xs(dy.w);
    for (int oy = 0; oy < dy.h; ++oy) ys[oy] = lerp_axis(oy, in_h, dy.h, align_corners);
    for (int ox = 0; ox < dy.w; ++ox) xs[ox] = lerp_axis(ox, in_w, dy.w, align_corners);

    for (int i = 0; i < dy.n; ++i)
        for (int j = 0; j < dy.c; ++j) {
            const float* q = &dy.v[dy.index(i, j, 0, 0)];
            float* p = &dx.v[dx.index(i, j, 0, 0)];
            for (int oy = 0; oy < dy.h; ++oy) {
                const auto& a = ys[oy];
                for (int ox = 0; ox < dy.w; ++ox) {
                    const auto& b = xs[ox];
                    const float g = q[static_cast<std::size_t>(oy) * dy.w + ox];
                    p[static_cast<std::size_t>(a.lo) * in_w + b.lo] += a.w_lo * b.w_lo * g;
                    p[static_cast<std::size_t>(a.lo) * in_w + b.hi] += a.w_lo * b.w_hi * g;
                    p[static_cast<std::size_t>(a.hi) * in_w + b.lo] += a.w_hi * b.w_lo * g;
                    p[static_cast<std::size_t>(a.hi) * in_w + b.hi] += a.w_hi * b.w_hi * g;
                }
            }
        }
    return dx;
}

Tensor Upsample::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    return bilinear_resize(x, x.h * scale, x.w * scale, align_corners);
}

Tensor Upsample::backward(const Tensor& dy) {
    return bilinear_resize_backward(dy, in_h_, in_w_, align_corners);
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor y(x.n, x.c, 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j) {
            const float* p = &x.v[x.index(i, j, 0, 0)];
            double s = 0.0;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
            y.at(i, j, 0, 0) = static_cast<float>(s / static_cast<double>(plane));
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    Tensor dx(dy.n, dy.c, in_h_, in_w_);
    const std::size_t plane = static_cast<std::size_t>(in_h_) * in_w_;
    const float inv = 1.0f / static_cast<float>(plane);
    for (int i = 0; i < dy.n; ++i)
        for (int j = 0; j < dy.c; ++j) {
            const float g = dy.at(i, j, 0, 0) * inv;
            float* p = &dx.v[dx.index(i, j, 0, 0)];
            for (std::size_t k = 0; k < plane; ++k) p[k] = g;
        }
    return dx;
}

CeResult cross_entropy_ignore(const Tensor& logits, const std::vector<label_t>& labels,
                              Tensor& dlogits) {
    const std::size_t pixels = static_cast<std::size_t>(logits.n) * logits.h * logits.w;
    if (labels.size() != pixels)
        fail_runtime("shape error: label count " + std::to_string(labels.size()) +
                     " vs " + std::to_string(pixels) + " logit pixels");
    const int k = logits.c;
    dlogits = Tensor(logits.n, logits.c, logits.h, logits.w);

    // First pass counts valid pixels so the mean scale is known up front.
    std::size_t valid = 0;
    for (const auto lbl : labels) {
        if (lbl == kIgnore) continue;
        if (static_cast<int>(lbl) >= k)
            fail_runtime("invalid truth label " + std::to_string(lbl) +
                         " for " + std::to_string(k) + " classes");
        ++valid;
    }
    CeResult result;
    result.valid_pixels = valid;
    if (valid == 0) return result;

    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    const double inv_valid = 1.0 / static_cast<double>(valid);
    double loss = 0.0;
    std::vector<double> probs(k);

    for (int i = 0; i < logits.n; ++i)
        for (std::size_t px = 0; px < plane; ++px) {
            const label_t lbl = labels[static_cast<std::size_t>(i) * plane + px];
            if (lbl == kIgnore) continue;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j)
                mx = std::max(mx, static_cast<double>(
                                      logits.v[(static_cast<std::size_t>(i) * k + j) * plane + px]));
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                probs[j] = std::exp(
                    logits.v[(static_cast<std::size_t>(i) * k + j) * plane + px] - mx);
                sum += probs[j];
            }
            loss += std::log(sum) -
                    (logits.v[(static_cast<std::size_t>(i) * k + lbl) * plane + px] - mx);
            for (int j = 0; j < k; ++j) {
                double g = probs[j] / sum;
                if (j == static_cast<int>(lbl)) g -= 1.0;
                dlogits.v[(static_cast<std::size_t>(i) * k + j) * plane + px] =
                    static_cast<float>(g * inv_valid);
            }
        }
    result.loss = loss * inv_valid;
    return result;
}

void ConvBnAct::init(Rng& rng, const std::string& name_prefix) {
    conv.init(rng, name_prefix + ".conv");
    if (use_bn) bn.init(name_prefix + ".bn");
    activation = Activation(act);
}

Tensor ConvBnAct::forward(const Tensor& x, bool training) {
    Tensor y = conv.forward(x);
    if (use_bn) y = bn.forward(y, training);
    return activation.forward(y);
}

Tensor ConvBnAct::backward(const Tensor& dy) {
    Tensor g = activation.backward(dy);
    if (use_bn) g = bn.backward(g);
    return conv.backward(g);
}

void ConvBnAct::collect(std::vector<Param*>& out) {
    conv.collect(out);
    if (use_bn) bn.collect(out);
}

}  // namespace hs3::nn
