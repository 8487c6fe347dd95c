#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hs3/common.hpp"
#include "hs3/nn/tensor.hpp"

namespace hs3::nn {

// Layers are explicit objects with paired forward/backward. Each forward
// caches exactly what its own backward needs, so the only calling contract
// is backward-after-forward on the same activation. There is no tape.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride = 1, int pad = 0,
           int dilation = 1, int groups = 1, bool bias = true);

    void init(Rng& rng, const std::string& name_prefix);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out);

    int out_height(int in_h) const;
    int out_width(int in_w) const;

    Param weight;  // (out, in/groups, k, k)
    Param bias;

    int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0, dilation = 1,
        groups = 1;
    bool has_bias = true;

private:
    Tensor cached_x_;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels, float eps = 1e-5f, float momentum = 0.1f);

    void init(const std::string& name_prefix);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out);

    Param gamma, beta;
    Param running_mean, running_var;  // buffers
    // When set, forward always normalizes with the running statistics and
    // never updates them (transfer fine-tuning keeps donor statistics).
    bool frozen_stats = false;

    int channels = 0;
    float eps = 1e-5f;
    float momentum = 0.1f;

private:
    Tensor cached_x_;
    std::vector<float> mean_, inv_std_;
    bool used_batch_stats_ = false;
};

enum class Act { none, relu, relu6 };

// Elementwise activation; caches its input.
class Activation {
public:
    Activation() = default;
    explicit Activation(Act kind) : kind(kind) {}

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    Act kind = Act::none;
    // Derivative-verification hook: when set, forward applies the affine
    // branch selected by the last unfrozen pass instead of re-deciding, so
    // the whole network becomes exactly linear around that point and finite
    // differences agree with backward to float precision.
    bool frozen = false;

private:
    Tensor cached_x_;
};

// Inverted dropout: scales kept units by 1/(1-p) so evaluation needs no
// rescaling. Identity when p = 0 or not training.
class Dropout {
public:
    Dropout() = default;
    Dropout(float p, Rng* rng) : p(p), rng(rng) {}

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);

    float p = 0.0f;
    Rng* rng = nullptr;

private:
    std::vector<float> scale_;
    bool identity_ = true;
};

class MaxPool2d {
public:
    MaxPool2d() = default;
    MaxPool2d(int kernel, int stride) : kernel(kernel), stride(stride) {}

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    int kernel = 2, stride = 2;

private:
    int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
    std::vector<std::uint32_t> argmax_;
};

// Stateless bilinear interpolation to an explicit output size and its
// adjoint. align_corners selects the sampling-grid convention.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners);
Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w,
                                bool align_corners);

class Upsample {
public:
    Upsample() = default;
    Upsample(int scale, bool align_corners)
        : scale(scale), align_corners(align_corners) {}

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    int scale = 2;
    bool align_corners = true;

private:
    int in_h_ = 0, in_w_ = 0;
};

// Global average pool to 1x1 and its adjoint.
class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

private:
    int in_h_ = 0, in_w_ = 0;
};

// Mean softmax cross-entropy over non-ignored pixels. labels holds one entry
// per (n, y, x) in NHW order; kIgnore pixels contribute nothing to the loss
// or the gradient. Returns the loss and writes dlogits.
struct CeResult {
    double loss = 0.0;
    std::size_t valid_pixels = 0;
};
CeResult cross_entropy_ignore(const Tensor& logits, const std::vector<label_t>& labels,
                              Tensor& dlogits);

// conv [+ bn] [+ activation], the repeating unit of both backbones.
class ConvBnAct {
public:
    ConvBnAct() = default;
    ConvBnAct(int in_ch, int out_ch, int kernel, int stride, int pad, int dilation,
              int groups, bool use_bn, Act act)
        : conv(in_ch, out_ch, kernel, stride, pad, dilation, groups, !use_bn),
          act(act), use_bn(use_bn) {
        if (use_bn) bn = BatchNorm2d(out_ch);
    }

    void init(Rng& rng, const std::string& name_prefix);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& out);

    Conv2d conv;
    BatchNorm2d bn;
    Activation activation{Act::none};
    Act act = Act::none;
    bool use_bn = false;
};

}  // namespace hs3::nn
