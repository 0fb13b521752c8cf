#include "r1d/objectives.hpp"

#include <cmath>

#include "r1d/errors.hpp"

namespace r1d::objectives {

using ad::Var;
using models::Classifier;

ad::Var ce_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels,
                const Tensor* mask, bool mean) {
    Var z = models::forward_graph(m, ad::constant(x), mask);
    return mean ? ad::softmax_ce_mean(z, labels) : ad::softmax_ce_sum(z, labels);
}

double nsr_regularizer(const Classifier& m, const Tensor& x, int y, const NsrConfig& cfg,
                       const Tensor* mask) {
    if (cfg.eps_delta <= 0.0 || cfg.denom_floor <= 0.0)
        throw ConfigError("nsr: eps_delta and denom_floor must be positive");
    Tensor g = models::input_gradient(m, x, y, mask);
    double l1 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) l1 += std::abs(g[i]);
    Tensor xb = x.reshaped([&] {
        std::vector<std::size_t> sh{1};
        for (auto d : x.shape()) sh.push_back(d);
        return sh;
    }());
    Tensor mb;
    const Tensor* mp = nullptr;
    if (mask) {
        mb = mask->reshaped({1, mask->size()});
        mp = &mb;
    }
    double zy = models::forward(m, xb, mp).at(0, static_cast<std::size_t>(y));
    return l1 * cfg.eps_delta / std::max(std::abs(zy), cfg.denom_floor);
}

namespace {

// elementwise max(a, c) with the selection frozen, as relu(a - c) + c
Var floor_at(const Var& a, double c) { return ad::sadd(ad::relu(ad::sadd(a, -c)), c); }

// per-sample L1 over all non-batch axes: (N, ...) -> (N)
Var per_sample_l1(const Var& g) {
    const auto& sh = g.value().shape();
    std::size_t N = sh[0], D = g.value().size() / N;
    return ad::sum_last(ad::vabs(ad::reshape(g, {N, D})));
}

}  // namespace

ad::Var nsr_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels, int epoch,
                 const NsrConfig& cfg, const Tensor* mask) {
    if (cfg.eps_delta <= 0.0 || cfg.denom_floor <= 0.0)
        throw ConfigError("nsr: eps_delta and denom_floor must be positive");
    if (cfg.beta < 0.0) throw ConfigError("nsr: beta must be non-negative");
    std::size_t N = x.dim(0);
    if (labels.size() != N) throw ContractViolation("nsr_loss: label count mismatch");

    Var xv = ad::leaf(x, true);  // differentiable input for the gradient penalty
    Var z = models::forward_graph(m, xv, mask);
    std::size_t K = z.value().dim(1);
    Var zy = ad::pick_rows(z, labels);

    // correctness mask from the current forward pass
    std::vector<int> pred = models::argmax_rows(z.value());
    Tensor correct({N});
    for (std::size_t n = 0; n < N; ++n) correct[n] = pred[n] == labels[n] ? 1.0 : 0.0;
    Var c = ad::constant(std::move(correct));

    // (z_y - 1)^2 for everyone; sum_{i != y} z_i^2 only when correct
    Var mse_y = ad::square(ad::sadd(zy, -1.0));
    Var others = ad::sub(ad::sum_last(ad::square(z)), ad::square(zy));
    Var loss_n = ad::add(mse_y, ad::mul(c, others));

    if (gates_active(epoch, cfg.warmup_epochs)) {
        // sum_i max(0, 1 - z_y + z_i) counts i = y as a constant 1
        Var margin =
            ad::sadd(ad::sum_last(ad::relu(ad::sadd(ad::sub(z, ad::bcast_last(zy, K)), 1.0))), -1.0);
        loss_n = ad::add(loss_n, ad::mul(c, margin));

        if (cfg.beta > 0.0) {
            Var gx = ad::grad(ad::sum_all(zy), {xv}, /*create_graph=*/true)[0];
            Var ratio = ad::div(ad::smul(per_sample_l1(gx), cfg.eps_delta),
                                floor_at(ad::vabs(zy), cfg.denom_floor));
            Var reg = ad::vlog(ad::sadd(ratio, 1.0));
            loss_n = ad::add(loss_n, ad::smul(ad::mul(c, reg), cfg.beta));
        }
    }
    return ad::smul(ad::sum_all(loss_n), 1.0 / static_cast<double>(N));
}

ad::Var jacobian_regularizer(const Classifier& m, const Tensor& x, const Tensor* mask) {
    Var xv = ad::leaf(x, true);
    Var z = models::forward_graph(m, xv, mask);
    std::size_t K = z.value().dim(1);
    Var total;
    for (std::size_t k = 0; k < K; ++k) {
        // d(sum_n z_{n,k})/dx has the per-sample rows of Jacobian column k
        std::vector<int> col(x.dim(0), static_cast<int>(k));
        Var gk = ad::grad(ad::sum_all(ad::pick_rows(z, col)), {xv}, /*create_graph=*/true)[0];
        Var sq = ad::sum_all(ad::square(gk));
        total = total.defined() ? ad::add(total, sq) : sq;
    }
    return ad::vsqrt(total);
}

ad::Var jacob_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels, int epoch,
                   const JacobConfig& cfg, const Tensor* mask) {
    if (cfg.lambda < 0.0) throw ConfigError("jacob: lambda must be non-negative");
    std::size_t N = x.dim(0);
    Var ce = ce_loss(m, x, labels, mask, /*mean=*/cfg.normalized);
    if (cfg.lambda == 0.0 || !gates_active(epoch, cfg.warmup_epochs)) return ce;
    Var reg = jacobian_regularizer(m, x, mask);
    double scale = cfg.normalized
                       ? cfg.lambda / (static_cast<double>(N) * static_cast<double>(m.spec.num_classes))
                       : cfg.lambda;
    return ad::add(ce, ad::smul(reg, scale));
}

double epsilon_schedule(int t, int t_max, double eps) {
    if (t_max <= 10) throw ConfigError("epsilon_schedule: t_max must exceed 10");
    if (t <= 10) return 0.0;
    return eps * static_cast<double>(t - 10) / static_cast<double>(t_max - 10);
}

ad::Var adv_loss(const Classifier& m, const Tensor& x, const std::vector<int>& labels, int epoch,
                 const AdvConfig& cfg, const Attacker& attacker, int t_max, const Tensor* mask) {
    if (cfg.eps < 0.0) throw ConfigError("adv: eps must be non-negative");
    if (!gates_active(epoch, cfg.warmup_epochs)) return ce_loss(m, x, labels, mask);

    double eps_eff = cfg.eps;
    if (cfg.schedule == AdvSchedule::linear_after_warmup)
        eps_eff = epsilon_schedule(epoch + 1, t_max, cfg.eps);

    Tensor x_adv = eps_eff > 0.0 && attacker ? attacker(x, labels, eps_eff) : x;
    if (!x_adv.same_shape(x)) throw AttackError("attacker changed the input shape");
    Var clean = ce_loss(m, x, labels, mask);
    Var adv = ce_loss(m, x_adv, labels, mask);
    return ad::add(ad::smul(clean, 0.5), ad::smul(adv, 0.5));
}

}  // namespace r1d::objectives
