#include "hs3/nn/tensor.hpp"

#include <cstring>
#include <sstream>

#include "hs3/common.hpp"

namespace hs3::nn {

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        fail_runtime("shape error: concat expects matching N/H/W, got " +
                     a.shape_str() + " and " + b.shape_str());
    Tensor out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int i = 0; i < a.n; ++i) {
        std::memcpy(&out.v[out.index(i, 0, 0, 0)], &a.v[a.index(i, 0, 0, 0)],
                    plane * a.c * sizeof(float));
        std::memcpy(&out.v[out.index(i, a.c, 0, 0)], &b.v[b.index(i, 0, 0, 0)],
                    plane * b.c * sizeof(float));
    }
    return out;
}

void split_channels(const Tensor& dy, Tensor& da, Tensor& db) {
    if (dy.c != da.c + db.c || dy.n != da.n || dy.h != da.h || dy.w != da.w)
        fail_runtime("shape error: channel split " + dy.shape_str());
    const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
    for (int i = 0; i < dy.n; ++i) {
        std::memcpy(&da.v[da.index(i, 0, 0, 0)], &dy.v[dy.index(i, 0, 0, 0)],
                    plane * da.c * sizeof(float));
        std::memcpy(&db.v[db.index(i, 0, 0, 0)], &dy.v[dy.index(i, da.c, 0, 0)],
                    plane * db.c * sizeof(float));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        fail_runtime("shape error: add " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
    Tensor out(x.n, x.c, x.h + top + bottom, x.w + left + right);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < x.h; ++y)
                std::memcpy(&out.v[out.index(i, j, y + top, left)],
                            &x.v[x.index(i, j, y, 0)],
                            static_cast<std::size_t>(x.w) * sizeof(float));
    return out;
}

Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right) {
    Tensor out(x.n, x.c, x.h - top - bottom, x.w - left - right);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int y = 0; y < out.h; ++y)
                std::memcpy(&out.v[out.index(i, j, y, 0)],
                            &x.v[x.index(i, j, y + top, left)],
                            static_cast<std::size_t>(out.w) * sizeof(float));
    return out;
}

}  // namespace hs3::nn
