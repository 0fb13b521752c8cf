#pragma once

// ReLU-family classifiers over 1-D signals: a plain MLP for fixed-length beats,
// a residual CNN for the same beats, and a masked variable-length CNN for
// multi-lead recordings.  All of them are built from a small layer IR that one
// interpreter (forward_graph) evaluates; the same interpreter can record every
// data-dependent gate (ReLU mask, max-pool argmax, normalization statistics)
// into a GateTape and replay it frozen, which makes the network exactly affine
// in its input and yields the (W_x, b_x) linearization oracle.

#include <cstdint>
#include <string>
#include <vector>

#include "r1d/autodiff.hpp"
#include "r1d/tensor.hpp"

namespace r1d::models {

enum class LayerKind {
    affine,
    relu,
    leaky_relu,
    conv,        // 1-D convolution with explicit zero padding
    group_norm,  // per-sample group normalization with per-channel affine
    max_pool,
    avg_pool,
    flatten,     // (N, C, T) -> (N, C*T)
    residual,    // x + branch(x); branch must preserve shape
    masked_mean  // mask-weighted temporal average -> (N, C)
};

struct LayerSpec {
    LayerKind kind{};
    std::string name;                     // parameter prefix where applicable
    std::size_t in_dim = 0, out_dim = 0;  // affine
    std::size_t in_ch = 0, out_ch = 0;    // conv
    std::size_t kernel = 0, stride = 1;   // conv and pools
    std::size_t pad_left = 0, pad_right = 0;
    std::size_t groups = 0, channels = 0;  // group_norm
    double slope = 0.01;                   // leaky_relu
    std::size_t mask_factor = 0;           // masked_mean: temporal downsampling of the stack
    std::vector<LayerSpec> branch;         // residual body
};

enum class ModelKind { mlp, beat_cnn, masked_cnn };

struct ClassifierSpec {
    ModelKind kind{};
    std::size_t num_classes = 0;
    std::vector<std::size_t> input_shape;  // per-sample shape, no batch dim
    std::vector<LayerSpec> layers;
};

struct NamedParam {
    std::string name;
    ad::Var var;
};

struct Classifier {
    ClassifierSpec spec;
    std::vector<NamedParam> params;  // deterministic order
    bool train_mode = false;

    const ad::Var& param(const std::string& name) const;
    ad::Var& param(const std::string& name);
    bool has_param(const std::string& name) const;
};

// Records data-dependent gates during a forward pass; with recording off, the
// same tape replays them as constants, freezing the network into an affine map.
struct GateTape {
    bool recording = true;
    std::vector<Tensor> relu_masks;
    std::vector<ad::IndexMap> pool_indices;
    std::vector<Tensor> norm_mu, norm_inv;
    std::size_t relu_i = 0, pool_i = 0, norm_i = 0;
    void rewind() { relu_i = pool_i = norm_i = 0; }
};

struct MaskedCnnConfig {
    std::size_t num_leads = 8;
    std::size_t num_classes = 9;
    std::size_t input_len = 33792;
    std::size_t stem_channels = 32;
    std::size_t stem_kernel = 16;
    std::size_t stem_stride = 2;
    std::vector<std::size_t> block_channels = {64, 128, 256, 512};
    std::size_t block_kernel = 8;
    std::size_t block_stride = 2;
    std::size_t gn_groups = 8;
};

// Exact local linearization: logits(x) = W^T x + b with gates frozen at x.
// W has one column per class (input_dim x num_classes).
struct AffineForm {
    Tensor W;
    Tensor b;
};

Classifier build_mlp(std::uint64_t seed = 0);
// widths = {in, h1, ..., out}; ReLU after the first relu_count affine layers
Classifier build_custom_mlp(const std::vector<std::size_t>& widths, std::size_t relu_count,
                            std::uint64_t seed = 0);
Classifier build_beat_cnn(std::uint64_t seed = 0);
Classifier build_masked_cnn(std::uint64_t seed = 0);
Classifier build_masked_cnn(const MaskedCnnConfig& cfg, std::uint64_t seed);

// x: (N, D) for affine-first models, (N, C, T) for convolutional ones
// ((N, T) is promoted to one channel).  mask: (N, T) of {0,1}, required by
// masked_cnn and rejected with a contract violation when absent.
ad::Var forward_graph(const Classifier& m, const ad::Var& x, const Tensor* mask = nullptr,
                      GateTape* tape = nullptr);
Tensor forward(const Classifier& m, const Tensor& x, const Tensor* mask = nullptr);
// argmax over logit rows (first index wins ties)
std::vector<int> predict(const Classifier& m, const Tensor& x, const Tensor* mask = nullptr);
std::vector<int> argmax_rows(const Tensor& logits);

// d z_y / d x for a single input (shape of x).
Tensor input_gradient(const Classifier& m, const Tensor& x, int class_index,
                      const Tensor* mask = nullptr);
// d (sum of per-sample cross entropies) / d x for a batch (shape of x).
Tensor ce_input_gradient(const Classifier& m, const Tensor& x, const std::vector<int>& labels,
                         const Tensor* mask = nullptr);

AffineForm linearize_at(const Classifier& m, const Tensor& x, const Tensor* mask = nullptr);

std::size_t parameter_count(const Classifier& m);
void set_requires_grad(Classifier& m, bool rg);
std::uint64_t parameter_checksum(const Classifier& m);

void save_checkpoint(const Classifier& m, const std::string& path);
Classifier load_checkpoint(const std::string& path);

}  // namespace r1d::models
