#include "r1d/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "r1d/autodiff.hpp"
#include "r1d/errors.hpp"
#include "r1d/rng.hpp"

namespace r1d::attacks {

using models::Classifier;

std::vector<double> gaussian_kernel(std::size_t width, double sigma) {
    if (width == 0) throw ConfigError("smoothing kernel width must be positive");
    std::vector<double> k(width);
    if (width == 1) {
        k[0] = 1.0;
        return k;
    }
    if (sigma <= 0.0) throw ConfigError("smoothing kernel sigma must be positive");
    double c = static_cast<double>(width - 1) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
        double d = static_cast<double>(i) - c;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

std::uint64_t sample_seed(std::uint64_t config_seed, const Tensor& x, std::size_t row) {
    std::size_t per = x.size() / x.dim(0);
    std::uint64_t h = rng::fnv1a(&config_seed, sizeof(config_seed));
    return rng::fnv1a(x.data() + row * per, per * sizeof(double), h);
}

namespace {

void validate(const AttackConfig& cfg) {
    if (cfg.eps < 0.0) throw ConfigError("attack eps must be non-negative");
    if (cfg.iters < 0) throw ConfigError("attack iteration count must be non-negative");
    if (cfg.family != AttackFamily::white_noise && cfg.alpha <= 0.0)
        throw ConfigError("attack step size must be positive");
    if (cfg.has_clip && cfg.clip_lo > cfg.clip_hi)
        throw ConfigError("attack clip range is inverted");
    if (cfg.family == AttackFamily::sap && !cfg.smooth.enabled)
        throw ConfigError("sap attack requires a smoothing kernel");
}

// temporarily drop parameter gradients so attack backward passes only walk the
// input path; restores the previous flags on destruction.  Parameter values
// are never touched.
struct ParamFreeze {
    explicit ParamFreeze(const Classifier& m) : m_(const_cast<Classifier&>(m)) {
        for (auto& p : m_.params) {
            prev_.push_back(p.var.requires_grad());
            p.var.node()->requires_grad = false;
        }
    }
    ~ParamFreeze() {
        for (std::size_t i = 0; i < prev_.size(); ++i)
            m_.params[i].var.node()->requires_grad = prev_[i];
    }
    Classifier& m_;
    std::vector<bool> prev_;
};

// restore masked-out positions of xk to the original input values
void restore_invalid(Tensor& xk, const Tensor& x0, const Tensor* mask) {
    if (!mask) return;
    std::size_t N = xk.dim(0), T = mask->dim(1);
    std::size_t C = xk.size() / (N * T);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < T; ++t)
            if (mask->at(n, t) == 0.0)
                for (std::size_t c = 0; c < C; ++c)
                    xk[(n * C + c) * T + t] = x0[(n * C + c) * T + t];
}

void project(Tensor& xk, const Tensor& x0, const AttackConfig& cfg) {
    for (std::size_t i = 0; i < xk.size(); ++i) {
        double lo = x0[i] - cfg.eps, hi = x0[i] + cfg.eps;
        if (cfg.has_clip) {
            lo = std::max(lo, cfg.clip_lo);
            hi = std::min(hi, cfg.clip_hi);
        }
        xk[i] = std::clamp(xk[i], lo, hi);
    }
}

// smooth the per-coordinate signed gradient along the last axis, one lead at a
// time, with a same-length normalized Gaussian
Tensor smooth_signs(const Tensor& s, const SmoothKernel& sk) {
    std::size_t T = s.shape().back();
    if (sk.width > T) throw ConfigError("smoothing kernel is wider than the signal");
    auto kv = gaussian_kernel(sk.width, sk.sigma);
    if (sk.width == 1) return s;
    std::size_t rows = s.size() / T;
    std::size_t pl = (sk.width - 1) / 2, pr = sk.width - 1 - pl;
    ad::NoGradGuard ng;
    Tensor k({1, 1, sk.width}, std::move(kv));
    ad::Var rs = ad::constant(s.reshaped({rows, 1, T}));
    Tensor out =
        ad::conv1d(ad::pad_last(rs, pl, pr), ad::constant(std::move(k)), 1).value();
    return out.reshaped(s.shape());
}

Tensor signs(const Tensor& g) {
    Tensor s(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
        s[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    return s;
}

Tensor iterative_attack(const Classifier& m, const Tensor& x, const std::vector<int>& labels,
                        const AttackConfig& cfg, const Tensor* mask) {
    if (m.train_mode) throw ContractViolation("attacks require an eval-mode model");
    if (labels.size() != x.dim(0)) throw ContractViolation("attack: label count mismatch");
    if (cfg.iters == 0 || cfg.eps == 0.0) return x;

    ParamFreeze freeze(m);
    Tensor xk = x;
    if (cfg.rand_init) {
        for (std::size_t n = 0; n < x.dim(0); ++n) {
            rng::Engine g = rng::make_engine(sample_seed(cfg.seed, x, n));
            std::size_t per = x.size() / x.dim(0);
            for (std::size_t i = 0; i < per; ++i)
                xk[n * per + i] += rng::uniform(g, -cfg.eps, cfg.eps);
        }
        project(xk, x, cfg);
        restore_invalid(xk, x, mask);
    }

    for (int k = 0; k < cfg.iters; ++k) {
        Tensor g = models::ce_input_gradient(m, xk, labels, mask);
        if (!g.all_finite()) {
            std::size_t per = g.size() / g.dim(0);
            for (std::size_t n = 0; n < g.dim(0); ++n)
                for (std::size_t i = 0; i < per; ++i)
                    if (!std::isfinite(g[n * per + i]))
                        throw AttackError("non-finite attack gradient for sample " +
                                          std::to_string(n));
        }
        Tensor s = signs(g);
        if (cfg.family == AttackFamily::sap) s = smooth_signs(s, cfg.smooth);
        for (std::size_t i = 0; i < xk.size(); ++i) xk[i] += cfg.alpha * s[i];
        project(xk, x, cfg);
        restore_invalid(xk, x, mask);
    }
    return xk;
}

Tensor batch1_of(const Tensor& x) {
    std::vector<std::size_t> sh{1};
    for (auto d : x.shape()) sh.push_back(d);
    return x.reshaped(sh);
}

}  // namespace

Tensor pgd_attack(const Classifier& m, const Tensor& x, int y, const AttackConfig& cfg,
                  const Tensor* mask) {
    validate(cfg);
    if (cfg.family != AttackFamily::pgd) throw ConfigError("pgd_attack: config family mismatch");
    Tensor mb = mask ? mask->reshaped({1, mask->size()}) : Tensor{};
    return iterative_attack(m, batch1_of(x), {y}, cfg, mask ? &mb : nullptr).reshaped(x.shape());
}

Tensor sap_attack(const Classifier& m, const Tensor& x, int y, const AttackConfig& cfg,
                  const Tensor* mask) {
    validate(cfg);
    if (cfg.family != AttackFamily::sap) throw ConfigError("sap_attack: config family mismatch");
    Tensor mb = mask ? mask->reshaped({1, mask->size()}) : Tensor{};
    return iterative_attack(m, batch1_of(x), {y}, cfg, mask ? &mb : nullptr).reshaped(x.shape());
}

Tensor white_noise_attack(const Tensor& x, double eps, std::uint64_t seed) {
    if (eps < 0.0) throw ConfigError("attack eps must be non-negative");
    Tensor out = x;
    if (eps == 0.0) return out;
    rng::Engine g = rng::make_engine(seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += rng::uniform(g, -eps, eps);
    return out;
}

Tensor attack_batch(const Classifier& m, const Tensor& x, const std::vector<int>& labels,
                    const AttackConfig& cfg, const Tensor* mask) {
    validate(cfg);
    if (cfg.family == AttackFamily::white_noise) {
        Tensor out = x;
        std::size_t per = x.size() / x.dim(0);
        for (std::size_t n = 0; n < x.dim(0); ++n) {
            rng::Engine g = rng::make_engine(sample_seed(cfg.seed, x, n));
            for (std::size_t i = 0; i < per; ++i) out[n * per + i] += rng::uniform(g, -cfg.eps, cfg.eps);
        }
        restore_invalid(out, x, mask);
        return out;
    }
    return iterative_attack(m, x, labels, cfg, mask);
}

}  // namespace r1d::attacks
