#pragma once

// Adam / Adamax with the published defaults (lr 1e-3, beta1 0.9, beta2 0.999).

#include <vector>

#include "r1d/autodiff.hpp"
#include "r1d/tensor.hpp"

namespace r1d::optim {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class AdamKind { adam, adamax };

class Adam {
public:
    Adam(std::vector<ad::Var> params, AdamConfig cfg = {}, AdamKind kind = AdamKind::adam);

    // grads[i] must match params[i] in shape; one optimizer step in place.
    void step(const std::vector<Tensor>& grads);
    std::size_t step_count() const { return t_; }

private:
    std::vector<ad::Var> params_;
    AdamConfig cfg_;
    AdamKind kind_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace r1d::optim
