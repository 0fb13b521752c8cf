#pragma once

// Tape-free reverse-mode automatic differentiation over Tensor.
//
// Every operation builds a graph node whose backward rule (vjp) is itself
// expressed through these same operations. grad(..., create_graph=true)
// therefore returns differentiable gradients, which is how the
// input-gradient regularizers get exact second-order parameter gradients.
//
// ReLU / |x| / max-pool freeze their gates in the backward rule with the
// convention ReLU'(0) = 0; the frozen selection is treated as constant, so
// repeated differentiation is exact almost everywhere.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "r1d/tensor.hpp"

namespace r1d::ad {

class Var;
using IndexMap = std::shared_ptr<const std::vector<long long>>;  // -1 entries read/write nothing

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<std::vector<Var>(const Var&)> vjp;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& mutable_value() { return n_->value; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    Node* node() const { return n_.get(); }
    const std::vector<std::size_t>& shape() const { return n_->value.shape(); }

private:
    std::shared_ptr<Node> n_;
};

// --- graph construction ------------------------------------------------

Var leaf(Tensor value, bool requires_grad);
Var constant(Tensor value);
Var constant_scalar(double v);

bool grad_enabled();

// Scope that suspends graph recording; ops inside produce plain values.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// --- primitive operations ----------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);  // elementwise
Var div(const Var& a, const Var& b);  // elementwise
Var smul(const Var& a, double s);
Var sadd(const Var& a, double s);

Var matmul(const Var& a, const Var& b);  // (R x I) . (I x C)
Var transpose(const Var& a);             // 2-D

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var vabs(const Var& x);
Var vexp(const Var& x);
Var vlog(const Var& x);
Var vsqrt(const Var& x);

Var sum_all(const Var& x);                // -> shape {1}
Var bcast_full(const Var& s, std::vector<std::size_t> shape);
Var sum_last(const Var& x);               // (..., L) -> (...)
Var bcast_last(const Var& v, std::size_t L);
Var sum_first(const Var& x);              // (R, C) -> (C)
Var bcast_first(const Var& v, std::size_t R);

Var reshape(const Var& x, std::vector<std::size_t> shape);
Var detach(const Var& x);

Var gather(const Var& x, IndexMap map, std::vector<std::size_t> out_shape);
Var scatter_into(const Var& v, IndexMap map, std::vector<std::size_t> out_shape);

Var pad_last(const Var& x, std::size_t left, std::size_t right);
Var crop_last(const Var& x, std::size_t offset, std::size_t len);

// 1-D convolution family. x: (N, Cin, T); k: (Cout, Cin, Kw); no implicit
// padding, To = (T - Kw) / stride + 1.
Var conv1d(const Var& x, const Var& k, std::size_t stride);
Var conv1d_igrad(const Var& gy, const Var& k, std::size_t stride, std::size_t T);
Var conv1d_kgrad(const Var& x, const Var& gy, std::size_t stride, std::size_t Kw);

Var avgpool1d(const Var& x, std::size_t k, std::size_t s);
Var avgpool1d_adj(const Var& g, std::size_t k, std::size_t s, std::size_t T);
Var maxpool1d(const Var& x, std::size_t k, std::size_t s, IndexMap* out_idx = nullptr);
Var maxpool1d_frozen(const Var& x, const IndexMap& idx, std::vector<std::size_t> out_shape);

Var row_max(const Var& x);  // 2-D -> (R); constant w.r.t. the graph

// --- compositions -------------------------------------------------------

Var square(const Var& a);
Var mean_all(const Var& x);
Var logsumexp_rows(const Var& z);                       // (N, K) -> (N)
Var pick_rows(const Var& z, const std::vector<int>& idx);  // z[n, idx[n]] -> (N)
Var softmax_ce_rows(const Var& z, const std::vector<int>& labels);  // per-row CE -> (N)
Var softmax_ce_mean(const Var& z, const std::vector<int>& labels);
Var softmax_ce_sum(const Var& z, const std::vector<int>& labels);

Tensor onehot(const std::vector<int>& labels, std::size_t num_classes);

// --- differentiation ----------------------------------------------------

// d(out)/d(wrt) for a scalar out. With create_graph the returned Vars carry
// their own graphs and can be differentiated again.
std::vector<Var> grad(const Var& out, const std::vector<Var>& wrt, bool create_graph = false);

}  // namespace r1d::ad
