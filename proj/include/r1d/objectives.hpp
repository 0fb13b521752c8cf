#pragma once

// The four training losses: plain cross entropy, the gradient-to-logit-ratio
// regularized loss, Jacobian-norm regularized losses (summed and normalized
// forms), and adversarial training with a linear epsilon ramp.
//
// Epoch arguments here are 0-based (number of completed epochs); gated terms
// switch on once epoch >= warmup_epochs, i.e. starting with the
// (warmup_epochs+1)-th training epoch.  epsilon_schedule alone speaks the
// 1-based epoch index t of its defining formula.

#include <functional>
#include <vector>

#include "r1d/autodiff.hpp"
#include "r1d/models.hpp"
#include "r1d/tensor.hpp"

namespace r1d::objectives {

struct NsrConfig {
    double beta = 0.0;
    double eps_delta = 1.0;
    int warmup_epochs = 0;
    double denom_floor = 1e-8;
};

struct JacobConfig {
    double lambda = 0.0;
    bool normalized = false;  // false: summed form; true: 1/N CE + lambda/(N*K) reg
    int warmup_epochs = 0;
};

enum class AdvSchedule { none, linear_after_warmup };

struct AdvConfig {
    double eps = 0.0;
    int attack_iters = 0;
    double alpha = 0.01;
    int warmup_epochs = 0;
    AdvSchedule schedule = AdvSchedule::none;
};

// Produces adversarial inputs for a batch at the given budget; the result is
// consumed as constant data (no gradient flows through the attack).
using Attacker =
    std::function<Tensor(const Tensor& x, const std::vector<int>& labels, double eps)>;

inline bool gates_active(int epoch, int warmup_epochs) { return epoch >= warmup_epochs; }

ad::Var ce_loss(const models::Classifier& m, const Tensor& x, const std::vector<int>& labels,
                const Tensor* mask = nullptr, bool mean = true);

// ||d z_y / d x||_1 * eps_delta / max(|z_y|, denom_floor), single input.
double nsr_regularizer(const models::Classifier& m, const Tensor& x, int y, const NsrConfig& cfg,
                       const Tensor* mask = nullptr);

ad::Var nsr_loss(const models::Classifier& m, const Tensor& x, const std::vector<int>& labels,
                 int epoch, const NsrConfig& cfg, const Tensor* mask = nullptr);

// sqrt of the summed squared input-Jacobian entries over the whole batch.
ad::Var jacobian_regularizer(const models::Classifier& m, const Tensor& x,
                             const Tensor* mask = nullptr);

ad::Var jacob_loss(const models::Classifier& m, const Tensor& x, const std::vector<int>& labels,
                   int epoch, const JacobConfig& cfg, const Tensor* mask = nullptr);

// eps_t = eps * (t - 10) / (t_max - 10) for t > 10, else 0; t is 1-based.
double epsilon_schedule(int t, int t_max, double eps);

ad::Var adv_loss(const models::Classifier& m, const Tensor& x, const std::vector<int>& labels,
                 int epoch, const AdvConfig& cfg, const Attacker& attacker, int t_max,
                 const Tensor* mask = nullptr);

}  // namespace r1d::objectives
