#include "r1d/optim.hpp"

#include <cmath>

#include "r1d/errors.hpp"

namespace r1d::optim {

Adam::Adam(std::vector<ad::Var> params, AdamConfig cfg, AdamKind kind)
    : params_(std::move(params)), cfg_(cfg), kind_(kind) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.value().shape()));
        v_.push_back(Tensor::zeros(p.value().shape()));
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size())
        throw ContractViolation("optimizer step: gradient count mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].mutable_value();
        const Tensor& g = grads[i];
        if (!p.same_shape(g))
            throw ContractViolation("optimizer step: gradient shape mismatch at index " +
                                    std::to_string(i));
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            if (kind_ == AdamKind::adam) {
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            } else {  // adamax: infinity-norm second moment
                v[j] = std::max(cfg_.beta2 * v[j], std::abs(g[j]));
                p[j] -= cfg_.lr / bc1 * m[j] / (v[j] + cfg_.eps);
            }
        }
    }
}

}  // namespace r1d::optim
