#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "r1d/attacks.hpp"
#include "r1d/errors.hpp"
#include "r1d/models.hpp"
#include "r1d/rng.hpp"

using namespace r1d;
using namespace r1d::attacks;
using namespace r1d::models;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    rng::Engine g = rng::make_engine(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng::uniform(g, lo, hi);
    return t;
}

double linf(const Tensor& a, const Tensor& b, std::size_t row) {
    std::size_t per = a.size() / a.dim(0);
    double m = 0.0;
    for (std::size_t i = 0; i < per; ++i)
        m = std::max(m, std::abs(a[row * per + i] - b[row * per + i]));
    return m;
}

Classifier identity_logit_model() {
    Classifier m = build_custom_mlp({2, 2}, 0, 0);
    m.param("fc1.w").mutable_value() = Tensor({2, 2}, {1, 0, 0, 1});
    m.param("fc1.b").mutable_value() = Tensor::zeros({2});
    return m;
}

}  // namespace

TEST_CASE("gaussian kernel is normalized, symmetric, degenerate at width 1") {
    auto k1 = gaussian_kernel(1, 3.0);
    REQUIRE(k1.size() == 1);
    CHECK(k1[0] == 1.0);

    auto k = gaussian_kernel(15, 3.0);
    REQUIRE(k.size() == 15);
    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 7; ++i) CHECK(k[i] == doctest::Approx(k[14 - i]).epsilon(1e-12));
    CHECK(*std::max_element(k.begin(), k.end()) == doctest::Approx(k[7]));
    CHECK_THROWS_AS(gaussian_kernel(0, 3.0), r1d::ConfigError);
    CHECK_THROWS_AS(gaussian_kernel(5, 0.0), r1d::ConfigError);
}

TEST_CASE("one pgd step on the identity-logit model") {
    Classifier m = identity_logit_model();
    AttackConfig cfg;
    cfg.eps = 0.05;
    cfg.alpha = 0.01;
    cfg.iters = 1;

    Tensor x = Tensor::vector({0.2, 0.0});
    Tensor xa = pgd_attack(m, x, 1, cfg);
    CHECK(xa[0] == doctest::Approx(0.21).epsilon(1e-12));
    CHECK(xa[1] == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("pgd identities: zero iterations or zero budget") {
    Classifier m = build_custom_mlp({5, 6, 3}, 1, 1);
    Tensor x = random_tensor({5}, 2);
    AttackConfig cfg;
    cfg.iters = 0;
    cfg.eps = 0.1;
    Tensor a = pgd_attack(m, x, 0, cfg);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == x[i]);

    cfg.iters = 5;
    cfg.eps = 0.0;
    Tensor b = pgd_attack(m, x, 0, cfg);
    for (std::size_t i = 0; i < 5; ++i) CHECK(b[i] == x[i]);
}

TEST_CASE("pgd budget holds for every sample, with and without extras") {
    Classifier m = build_custom_mlp({7, 10, 4}, 1, 3);
    Tensor x = random_tensor({50, 7}, 4);
    std::vector<int> y;
    for (int n = 0; n < 50; ++n) y.push_back(n % 4);

    AttackConfig cfg;
    cfg.eps = 0.03;
    cfg.alpha = 0.01;
    cfg.iters = 10;
    Tensor xa = attack_batch(m, x, y, cfg);
    for (std::size_t n = 0; n < 50; ++n) CHECK(linf(xa, x, n) <= cfg.eps + 1e-9);

    cfg.rand_init = true;
    cfg.seed = 9;
    Tensor xb = attack_batch(m, x, y, cfg);
    for (std::size_t n = 0; n < 50; ++n) CHECK(linf(xb, x, n) <= cfg.eps + 1e-9);

    cfg.rand_init = false;
    cfg.has_clip = true;
    cfg.clip_lo = -0.5;
    cfg.clip_hi = 0.5;
    Tensor xin = random_tensor({50, 7}, 5, -0.49, 0.49);  // clipping presumes in-range inputs
    Tensor xc = attack_batch(m, xin, y, cfg);
    for (std::size_t n = 0; n < 50; ++n) CHECK(linf(xc, xin, n) <= cfg.eps + 1e-9);
    for (std::size_t i = 0; i < xc.size(); ++i) {
        CHECK(xc[i] >= -0.5 - 1e-12);
        CHECK(xc[i] <= 0.5 + 1e-12);
    }
}

TEST_CASE("attacks leave the model untouched") {
    Classifier m = build_custom_mlp({6, 8, 3}, 1, 5);
    std::uint64_t before = parameter_checksum(m);
    Tensor x = random_tensor({10, 6}, 6);
    std::vector<int> y(10, 1);
    AttackConfig cfg;
    cfg.eps = 0.05;
    cfg.iters = 8;
    attack_batch(m, x, y, cfg);
    CHECK(parameter_checksum(m) == before);
    for (const auto& p : m.params) CHECK(p.var.requires_grad());
}

TEST_CASE("sap with width-1 kernel follows the pgd trajectory exactly") {
    Classifier m = build_custom_mlp({12, 10, 3}, 1, 7);
    Tensor x = random_tensor({4, 12}, 8);
    std::vector<int> y{0, 1, 2, 0};

    AttackConfig pgd;
    pgd.eps = 0.04;
    pgd.iters = 6;
    AttackConfig sap = pgd;
    sap.family = AttackFamily::sap;
    sap.smooth.enabled = true;
    sap.smooth.width = 1;

    Tensor a = attack_batch(m, x, y, pgd);
    Tensor b = attack_batch(m, x, y, sap);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("sap perturbations are smoother than pgd perturbations") {
    Classifier m = build_mlp(9);
    const std::size_t N = 100;
    Tensor x = random_tensor({N, 187}, 10, -0.8, 0.8);
    std::vector<int> y;
    for (std::size_t n = 0; n < N; ++n) y.push_back(int(n % 5));

    AttackConfig pgd;
    pgd.eps = 0.05;
    pgd.iters = 10;
    AttackConfig sap = pgd;
    sap.family = AttackFamily::sap;
    sap.smooth.enabled = true;  // default width 15, sigma 3

    Tensor xp = attack_batch(m, x, y, pgd);
    Tensor xs = attack_batch(m, x, y, sap);

    auto second_diff_energy = [&](const Tensor& xa, std::size_t n) {
        double e = 0.0;
        for (std::size_t t = 1; t + 1 < 187; ++t) {
            double d0 = xa[n * 187 + t - 1] - x[n * 187 + t - 1];
            double d1 = xa[n * 187 + t] - x[n * 187 + t];
            double d2 = xa[n * 187 + t + 1] - x[n * 187 + t + 1];
            double s = d2 - 2 * d1 + d0;
            e += s * s;
        }
        return e;
    };
    std::vector<double> gap;
    for (std::size_t n = 0; n < N; ++n)
        gap.push_back(second_diff_energy(xp, n) - second_diff_energy(xs, n));
    std::nth_element(gap.begin(), gap.begin() + N / 2, gap.end());
    CHECK(gap[N / 2] >= 0.0);  // median paired difference favors the smoothed attack
}

TEST_CASE("white noise attack obeys its contract") {
    Tensor x = random_tensor({100000}, 11);
    Tensor same = white_noise_attack(x, 0.0, 12);
    for (std::size_t i = 0; i < 100; ++i) CHECK(same[i] == x[i]);

    Tensor a = white_noise_attack(x, 0.1, 13);
    Tensor b = white_noise_attack(x, 0.1, 13);
    double mx = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double u = a[i] - x[i];
        mx = std::max(mx, std::abs(u));
        mean += std::abs(u);
        CHECK(a[i] == b[i]);
    }
    mean /= double(x.size());
    CHECK(mx <= 0.1);
    CHECK(std::abs(mean - 0.05) < 0.002);
}

TEST_CASE("batch of one equals the single-sample attack") {
    Classifier m = build_custom_mlp({9, 8, 4}, 1, 14);
    Tensor x = random_tensor({9}, 15);
    AttackConfig cfg;
    cfg.eps = 0.06;
    cfg.iters = 7;
    Tensor single = pgd_attack(m, x, 2, cfg);
    Tensor batched = attack_batch(m, x.reshaped({1, 9}), {2}, cfg);
    for (std::size_t i = 0; i < 9; ++i) CHECK(single[i] == batched[i]);

    // white noise: the batch path derives its per-sample seed from content
    Tensor xb = x.reshaped({1, 9});
    AttackConfig wn;
    wn.family = AttackFamily::white_noise;
    wn.eps = 0.1;
    wn.seed = 99;
    Tensor nb = attack_batch(m, xb, {0}, wn);
    Tensor ns = white_noise_attack(x, 0.1, sample_seed(99, xb, 0));
    for (std::size_t i = 0; i < 9; ++i) CHECK(nb[i] == ns[i]);
}

TEST_CASE("batch order never changes a sample's perturbation") {
    Classifier m = build_custom_mlp({6, 7, 3}, 1, 16);
    const std::size_t N = 8;
    Tensor x = random_tensor({N, 6}, 17);
    std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};

    std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
    Tensor xp({N, 6});
    std::vector<int> yp(N);
    for (std::size_t n = 0; n < N; ++n) {
        yp[n] = y[perm[n]];
        for (std::size_t d = 0; d < 6; ++d) xp.at(n, d) = x.at(perm[n], d);
    }

    for (bool rinit : {false, true}) {
        AttackConfig cfg;
        cfg.eps = 0.05;
        cfg.iters = 5;
        cfg.rand_init = rinit;
        cfg.seed = 23;
        Tensor a = attack_batch(m, x, y, cfg);
        Tensor b = attack_batch(m, xp, yp, cfg);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t d = 0; d < 6; ++d) CHECK(b.at(n, d) == a.at(perm[n], d));
    }
}

TEST_CASE("masked positions are untouched by every family") {
    MaskedCnnConfig mc;
    mc.num_leads = 2;
    mc.num_classes = 3;
    mc.input_len = 64;
    mc.stem_channels = 4;
    mc.stem_kernel = 4;
    mc.stem_stride = 2;
    mc.block_channels = {8};
    mc.block_kernel = 4;
    mc.block_stride = 2;
    mc.gn_groups = 2;
    Classifier m = build_masked_cnn(mc, 18);

    Tensor x = random_tensor({3, 2, 64}, 19);
    Tensor mask({3, 64});
    std::vector<std::pair<std::size_t, std::size_t>> runs{{0, 40}, {10, 30}, {24, 40}};
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t t = runs[n].first; t < runs[n].first + runs[n].second; ++t)
            mask.at(n, t) = 1.0;
    std::vector<int> y{0, 1, 2};

    for (auto family : {AttackFamily::pgd, AttackFamily::sap, AttackFamily::white_noise}) {
        AttackConfig cfg;
        cfg.family = family;
        cfg.eps = 0.05;
        cfg.iters = 4;
        cfg.rand_init = family == AttackFamily::pgd;
        cfg.seed = 31;
        if (family == AttackFamily::sap) {
            cfg.smooth.enabled = true;
            cfg.smooth.width = 7;
        }
        Tensor xa = attack_batch(m, x, y, cfg, &mask);
        bool changed_valid = false;
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t c = 0; c < 2; ++c)
                for (std::size_t t = 0; t < 64; ++t) {
                    double before = x.at(n, c, t), after = xa.at(n, c, t);
                    if (mask.at(n, t) == 0.0)
                        CHECK(after == before);
                    else if (after != before)
                        changed_valid = true;
                }
        CHECK(changed_valid);
        for (std::size_t n = 0; n < 3; ++n) CHECK(linf(xa, x, n) <= cfg.eps + 1e-9);
    }
}

TEST_CASE("attack configuration errors") {
    Classifier m = build_custom_mlp({4, 3}, 0, 20);
    Tensor x = random_tensor({4}, 21);
    AttackConfig cfg;
    cfg.eps = -0.1;
    CHECK_THROWS_AS(pgd_attack(m, x, 0, cfg), r1d::ConfigError);

    cfg.eps = 0.1;
    cfg.family = AttackFamily::sap;
    cfg.iters = 1;
    CHECK_THROWS_AS(sap_attack(m, x, 0, cfg), r1d::ConfigError);  // kernel not enabled

    cfg.smooth.enabled = true;
    cfg.smooth.width = 100;  // wider than the 4-long signal
    CHECK_THROWS_AS(sap_attack(m, x, 0, cfg), r1d::ConfigError);

    cfg.family = AttackFamily::pgd;
    cfg.smooth.enabled = false;
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(pgd_attack(m, x, 0, cfg), r1d::ConfigError);

    Classifier tm = build_custom_mlp({4, 3}, 0, 22);
    tm.train_mode = true;
    AttackConfig ok;
    ok.eps = 0.1;
    ok.iters = 1;
    CHECK_THROWS_AS(pgd_attack(tm, x, 0, ok), r1d::ContractViolation);
}

TEST_CASE("non-finite gradients raise an attack error naming the sample") {
    Classifier m = build_custom_mlp({3, 2}, 0, 23);
    m.param("fc1.w").mutable_value()[0] = std::numeric_limits<double>::infinity();
    Tensor x = random_tensor({2, 3}, 24);
    AttackConfig cfg;
    cfg.eps = 0.1;
    cfg.iters = 1;
    try {
        attack_batch(m, x, {0, 1}, cfg);
        FAIL("expected AttackError");
    } catch (const r1d::AttackError& e) {
        CHECK(std::string(e.what()).find("sample") != std::string::npos);
    }
}
