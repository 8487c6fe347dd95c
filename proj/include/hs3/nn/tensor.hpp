#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace hs3::nn {

// Dense float32 tensor in NCHW layout. Parameter tensors reuse it: conv
// weights are (out, in/groups, kh, kw), per-channel vectors are (1, C, 1, 1).
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::size_t index(int i, int j, int y, int x) const {
        return ((static_cast<std::size_t>(i) * c + j) * h + y) * w + x;
    }
    float at(int i, int j, int y, int x) const { return v[index(i, j, y, x)]; }
    float& at(int i, int j, int y, int x) { return v[index(i, j, y, x)]; }
    void zero() { std::fill(v.begin(), v.end(), 0.0f); }
    std::string shape_str() const;
};

// Named parameter or persistent buffer of a model. Buffers (batch-norm
// running statistics) carry no gradient and are skipped by the optimizer but
// travel with checkpoints.
struct Param {
    Tensor value;
    Tensor grad;
    std::string name;
    bool trainable = true;
    bool buffer = false;

    void init_shape(int n, int c, int h, int w) {
        value = Tensor(n, c, h, w);
        grad = Tensor(n, c, h, w);
    }
    void zero_grad() { grad.zero(); }
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
// Routes the gradient of concat_channels(a, b) back to the two inputs.
void split_channels(const Tensor& dy, Tensor& da, Tensor& db);

Tensor add(const Tensor& a, const Tensor& b);

// Zero padding (top, bottom, left, right) and its adjoint crop.
Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right);

}  // namespace hs3::nn
