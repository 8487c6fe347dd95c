#include "hs3/nn/optim.hpp"

#include <cmath>

namespace hs3::nn {

AdamW::AdamW(std::vector<Param*> params, float lr, float eps, float weight_decay,
             float beta1, float beta2)
    : lr(lr), eps(eps), weight_decay(weight_decay), beta1(beta1), beta2(beta2),
      params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->value.size(), 0.0f);
        v_[i].assign(params_[i]->value.size(), 0.0f);
    }
}

void AdamW::zero_grad() {
    for (auto* p : params_)
        if (!p->buffer) p->zero_grad();
}

void AdamW::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), step_count_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), step_count_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        if (p.buffer || !p.trainable) continue;
        float* w = p.value.v.data();
        const float* g = p.grad.v.data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const std::size_t count = p.value.size();
        for (std::size_t k = 0; k < count; ++k) {
            // Decoupled decay first, then the Adam step (both scaled by lr).
            w[k] -= lr * weight_decay * w[k];
            m[k] = beta1 * m[k] + (1.0f - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0f - beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

}  // namespace hs3::nn
