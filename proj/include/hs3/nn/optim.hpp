#pragma once

#include <vector>

#include "hs3/nn/tensor.hpp"

namespace hs3::nn {

// Adam with decoupled weight decay. Frozen parameters and buffers are
// skipped entirely: their values, moments and step counts never move.
class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<Param*> params, float lr, float eps,
          float weight_decay = 0.01f, float beta1 = 0.9f, float beta2 = 0.999f);

    void zero_grad();
    void step();

    float lr = 1e-3f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;

private:
    std::vector<Param*> params_;
    std::vector<std::vector<float>> m_, v_;
    long step_count_ = 0;
};

}  // namespace hs3::nn
