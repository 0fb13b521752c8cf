#pragma once

// L-infinity bounded perturbations: K-step projected signed-gradient ascent on
// the true-label cross entropy, a smoothed variant that convolves each step's
// signed gradient with a normalized Gaussian along time, and seeded uniform
// white noise.  All attacks leave the model untouched and keep masked
// positions exactly equal to the input.

#include <cstdint>
#include <vector>

#include "r1d/models.hpp"
#include "r1d/tensor.hpp"

namespace r1d::attacks {

enum class AttackFamily { pgd, sap, white_noise };

struct SmoothKernel {
    bool enabled = false;
    double sigma = 3.0;
    std::size_t width = 15;
};

struct AttackConfig {
    AttackFamily family = AttackFamily::pgd;
    double eps = 0.0;
    double alpha = 0.01;
    int iters = 0;
    bool rand_init = false;
    bool has_clip = false;
    double clip_lo = 0.0, clip_hi = 0.0;
    SmoothKernel smooth;  // sap only
    std::uint64_t seed = 0;
};

// Normalized discrete Gaussian, sum = 1; width 1 degenerates to identity.
std::vector<double> gaussian_kernel(std::size_t width, double sigma);

// Per-sample seed used by attack_batch: derived from the config seed and the
// sample's bytes, so batch order cannot change any sample's perturbation.
std::uint64_t sample_seed(std::uint64_t config_seed, const Tensor& x, std::size_t row);

Tensor pgd_attack(const models::Classifier& m, const Tensor& x, int y, const AttackConfig& cfg,
                  const Tensor* mask = nullptr);
Tensor sap_attack(const models::Classifier& m, const Tensor& x, int y, const AttackConfig& cfg,
                  const Tensor* mask = nullptr);
Tensor white_noise_attack(const Tensor& x, double eps, std::uint64_t seed);

// Batched attack: x is (N, ...), labels one per row, mask (N, T) optional.
Tensor attack_batch(const models::Classifier& m, const Tensor& x, const std::vector<int>& labels,
                    const AttackConfig& cfg, const Tensor* mask = nullptr);

}  // namespace r1d::attacks
