#include "r1d/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "r1d/errors.hpp"

namespace r1d::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_recording = true;

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<std::vector<Var>(const Var&)> vjp) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    if (g_recording)
        for (const auto& p : parents)
            if (p.requires_grad()) rg = true;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->vjp = std::move(vjp);
    }
    return Var(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
}

std::size_t last_dim(const Var& x) {
    if (x.value().rank() < 1) throw ContractViolation("reduction on rank-0 tensor");
    return x.value().shape().back();
}

}  // namespace

bool grad_enabled() { return g_recording; }

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var constant(Tensor value) { return leaf(std::move(value), false); }
Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

// --- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    return make_op(std::move(out), {a, b},
                   [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
    return make_op(std::move(out), {a, b},
                   [](const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var neg(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -out[i];
    return make_op(std::move(out), {a},
                   [](const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] *= pb[i];
    return make_op(std::move(out), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{mul(g, b), mul(g, a)};
    });
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] /= pb[i];
    return make_op(std::move(out), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
    });
}

Var smul(const Var& a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return make_op(std::move(out), {a},
                   [s](const Var& g) { return std::vector<Var>{smul(g, s)}; });
}

Var sadd(const Var& a, double s) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
    return make_op(std::move(out), {a},
                   [](const Var& g) { return std::vector<Var>{g}; });
}

// --- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ContractViolation("matmul: incompatible shapes " + av.shape_str() + " " +
                                bv.shape_str());
    std::size_t R = av.dim(0), I = av.dim(1), C = bv.dim(1);
    Tensor out({R, C});
    CMapMat A(av.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(I));
    CMapMat B(bv.data(), static_cast<Eigen::Index>(I), static_cast<Eigen::Index>(C));
    MapMat O(out.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(C));
    O.noalias() = A * B;
    return make_op(std::move(out), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

Var transpose(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) throw ContractViolation("transpose: rank-2 required");
    std::size_t R = av.dim(0), C = av.dim(1);
    Tensor out({C, R});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(c, r) = av.at(r, c);
    return make_op(std::move(out), {a},
                   [](const Var& g) { return std::vector<Var>{transpose(g)}; });
}

// --- nonlinearities (frozen-gate backward) -------------------------------

Var relu(const Var& x) {
    Tensor out = x.value();
    Tensor mask(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = out[i] > 0.0 ? 1.0 : 0.0;
        if (out[i] < 0.0) out[i] = 0.0;
    }
    Var mc = constant(std::move(mask));
    return make_op(std::move(out), {x},
                   [mc](const Var& g) { return std::vector<Var>{mul(g, mc)}; });
}

Var leaky_relu(const Var& x, double slope) {
    Tensor out = x.value();
    Tensor mask(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = out[i] > 0.0 ? 1.0 : slope;
        if (out[i] < 0.0) out[i] *= slope;
    }
    Var mc = constant(std::move(mask));
    return make_op(std::move(out), {x},
                   [mc](const Var& g) { return std::vector<Var>{mul(g, mc)}; });
}

Var vabs(const Var& x) {
    Tensor out = x.value();
    Tensor sgn(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        sgn[i] = out[i] > 0.0 ? 1.0 : (out[i] < 0.0 ? -1.0 : 0.0);
        out[i] = std::abs(out[i]);
    }
    Var sc = constant(std::move(sgn));
    return make_op(std::move(out), {x},
                   [sc](const Var& g) { return std::vector<Var>{mul(g, sc)}; });
}

Var vexp(const Var& x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return make_op(std::move(out), {x},
                   [x](const Var& g) { return std::vector<Var>{mul(g, vexp(x))}; });
}

Var vlog(const Var& x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return make_op(std::move(out), {x},
                   [x](const Var& g) { return std::vector<Var>{div(g, x)}; });
}

Var vsqrt(const Var& x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
    return make_op(std::move(out), {x}, [x](const Var& g) {
        return std::vector<Var>{div(g, smul(vsqrt(x), 2.0))};
    });
}

// --- reductions and broadcasts ------------------------------------------

Var sum_all(const Var& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.value().size(); ++i) s += x.value()[i];
    auto shape = x.value().shape();
    return make_op(Tensor::scalar(s), {x}, [shape](const Var& g) {
        return std::vector<Var>{bcast_full(g, shape)};
    });
}

Var bcast_full(const Var& s, std::vector<std::size_t> shape) {
    if (s.value().size() != 1) throw ContractViolation("bcast_full: scalar required");
    Tensor out = Tensor::full(shape, s.value()[0]);
    return make_op(std::move(out), {s},
                   [](const Var& g) { return std::vector<Var>{sum_all(g)}; });
}

Var sum_last(const Var& x) {
    std::size_t L = last_dim(x);
    std::vector<std::size_t> out_shape(x.value().shape().begin(), x.value().shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::size_t rows = x.value().size() / L;
    Tensor out(out_shape);
    const double* px = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < L; ++c) s += px[r * L + c];
        out[r] = s;
    }
    auto in_shape = x.value().shape();
    return make_op(std::move(out), {x}, [L, in_shape](const Var& g) {
        return std::vector<Var>{reshape(bcast_last(g, L), in_shape)};
    });
}

Var bcast_last(const Var& v, std::size_t L) {
    std::vector<std::size_t> out_shape = v.value().shape();
    out_shape.push_back(L);
    std::size_t rows = v.value().size();
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < L; ++c) out[r * L + c] = v.value()[r];
    return make_op(std::move(out), {v},
                   [](const Var& g) { return std::vector<Var>{sum_last(g)}; });
}

Var sum_first(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ContractViolation("sum_first: rank-2 required");
    std::size_t R = xv.dim(0), C = xv.dim(1);
    Tensor out({C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c] += xv.at(r, c);
    return make_op(std::move(out), {x},
                   [R](const Var& g) { return std::vector<Var>{bcast_first(g, R)}; });
}

Var bcast_first(const Var& v, std::size_t R) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1) throw ContractViolation("bcast_first: rank-1 required");
    std::size_t C = vv.size();
    Tensor out({R, C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = vv[c];
    return make_op(std::move(out), {v},
                   [](const Var& g) { return std::vector<Var>{sum_first(g)}; });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    auto old_shape = x.value().shape();
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [old_shape](const Var& g) {
        return std::vector<Var>{reshape(g, old_shape)};
    });
}

Var detach(const Var& x) { return constant(x.value()); }

// --- gather / scatter ----------------------------------------------------

Var gather(const Var& x, IndexMap map, std::vector<std::size_t> out_shape) {
    if (!map || map->size() != shape_numel(out_shape))
        throw ContractViolation("gather: index map size mismatch");
    Tensor out(out_shape);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        long long j = (*map)[i];
        out[i] = j >= 0 ? xv[static_cast<std::size_t>(j)] : 0.0;
    }
    auto in_shape = xv.shape();
    return make_op(std::move(out), {x}, [map, in_shape](const Var& g) {
        return std::vector<Var>{scatter_into(g, map, in_shape)};
    });
}

Var scatter_into(const Var& v, IndexMap map, std::vector<std::size_t> out_shape) {
    if (!map || map->size() != v.value().size())
        throw ContractViolation("scatter_into: index map size mismatch");
    Tensor out(out_shape);
    const Tensor& vv = v.value();
    for (std::size_t i = 0; i < vv.size(); ++i) {
        long long j = (*map)[i];
        if (j >= 0) out[static_cast<std::size_t>(j)] += vv[i];
    }
    auto in_shape = vv.shape();
    return make_op(std::move(out), {v}, [map, in_shape](const Var& g) {
        return std::vector<Var>{gather(g, map, in_shape)};
    });
}

// --- padding / cropping on the last axis ---------------------------------

Var pad_last(const Var& x, std::size_t left, std::size_t right) {
    std::size_t T = last_dim(x);
    std::size_t rows = x.value().size() / T;
    std::vector<std::size_t> out_shape = x.value().shape();
    out_shape.back() = T + left + right;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < T; ++t)
            out[r * (T + left + right) + left + t] = x.value()[r * T + t];
    return make_op(std::move(out), {x}, [left, T](const Var& g) {
        return std::vector<Var>{crop_last(g, left, T)};
    });
}

Var crop_last(const Var& x, std::size_t offset, std::size_t len) {
    std::size_t T = last_dim(x);
    if (offset + len > T) throw ContractViolation("crop_last: window out of range");
    std::size_t rows = x.value().size() / T;
    std::vector<std::size_t> out_shape = x.value().shape();
    out_shape.back() = len;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) out[r * len + t] = x.value()[r * T + offset + t];
    std::size_t right = T - offset - len;
    return make_op(std::move(out), {x}, [offset, right](const Var& g) {
        return std::vector<Var>{pad_last(g, offset, right)};
    });
}

// --- 1-D convolution -----------------------------------------------------

namespace {

void check_conv_args(const Tensor& x, const Tensor& k, std::size_t stride) {
    if (x.rank() != 3 || k.rank() != 3)
        throw ContractViolation("conv1d: rank-3 input and kernel required");
    if (x.dim(1) != k.dim(1))
        throw ContractViolation("conv1d: channel mismatch " + x.shape_str() + " " + k.shape_str());
    if (stride == 0 || x.dim(2) < k.dim(2))
        throw ContractViolation("conv1d: kernel wider than input");
}

std::size_t conv_out_len(std::size_t T, std::size_t Kw, std::size_t stride) {
    return (T - Kw) / stride + 1;
}

void im2col(const double* xn, std::size_t Ci, std::size_t T, std::size_t Kw, std::size_t stride,
            std::size_t To, double* col) {
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t q = 0; q < Kw; ++q) {
            double* row = col + (ci * Kw + q) * To;
            const double* src = xn + ci * T + q;
            for (std::size_t t = 0; t < To; ++t) row[t] = src[t * stride];
        }
}

}  // namespace

Var conv1d(const Var& x, const Var& k, std::size_t stride) {
    const Tensor& xv = x.value();
    const Tensor& kv = k.value();
    check_conv_args(xv, kv, stride);
    std::size_t N = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2);
    std::size_t Co = kv.dim(0), Kw = kv.dim(2);
    std::size_t To = conv_out_len(T, Kw, stride);
    Tensor out({N, Co, To});
    std::vector<double> col(Ci * Kw * To);
    CMapMat K(kv.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(Ci * Kw));
    for (std::size_t n = 0; n < N; ++n) {
        im2col(xv.data() + n * Ci * T, Ci, T, Kw, stride, To, col.data());
        CMapMat C(col.data(), static_cast<Eigen::Index>(Ci * Kw), static_cast<Eigen::Index>(To));
        MapMat O(out.data() + n * Co * To, static_cast<Eigen::Index>(Co),
                 static_cast<Eigen::Index>(To));
        O.noalias() = K * C;
    }
    return make_op(std::move(out), {x, k}, [x, k, stride, T, Kw](const Var& g) {
        return std::vector<Var>{conv1d_igrad(g, k, stride, T), conv1d_kgrad(x, g, stride, Kw)};
    });
}

Var conv1d_igrad(const Var& gy, const Var& k, std::size_t stride, std::size_t T) {
    const Tensor& gv = gy.value();
    const Tensor& kv = k.value();
    if (gv.rank() != 3 || kv.rank() != 3 || gv.dim(1) != kv.dim(0))
        throw ContractViolation("conv1d_igrad: incompatible shapes");
    std::size_t N = gv.dim(0), Co = gv.dim(1), To = gv.dim(2);
    std::size_t Ci = kv.dim(1), Kw = kv.dim(2);
    Tensor out({N, Ci, T});
    std::vector<double> colg(Ci * Kw * To);
    CMapMat K(kv.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(Ci * Kw));
    for (std::size_t n = 0; n < N; ++n) {
        CMapMat G(gv.data() + n * Co * To, static_cast<Eigen::Index>(Co),
                  static_cast<Eigen::Index>(To));
        MapMat CG(colg.data(), static_cast<Eigen::Index>(Ci * Kw),
                  static_cast<Eigen::Index>(To));
        CG.noalias() = K.transpose() * G;
        double* gx = out.data() + n * Ci * T;
        for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t q = 0; q < Kw; ++q) {
                const double* row = colg.data() + (ci * Kw + q) * To;
                double* dst = gx + ci * T + q;
                for (std::size_t t = 0; t < To; ++t) dst[t * stride] += row[t];
            }
    }
    return make_op(std::move(out), {gy, k}, [gy, k, stride, Kw](const Var& v) {
        return std::vector<Var>{conv1d(v, k, stride), conv1d_kgrad(v, gy, stride, Kw)};
    });
}

Var conv1d_kgrad(const Var& x, const Var& gy, std::size_t stride, std::size_t Kw) {
    const Tensor& xv = x.value();
    const Tensor& gv = gy.value();
    if (xv.rank() != 3 || gv.rank() != 3 || xv.dim(0) != gv.dim(0))
        throw ContractViolation("conv1d_kgrad: incompatible shapes");
    std::size_t N = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2);
    std::size_t Co = gv.dim(1), To = gv.dim(2);
    Tensor out({Co, Ci, Kw});
    std::vector<double> col(Ci * Kw * To);
    MapMat GK(out.data(), static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(Ci * Kw));
    for (std::size_t n = 0; n < N; ++n) {
        im2col(xv.data() + n * Ci * T, Ci, T, Kw, stride, To, col.data());
        CMapMat C(col.data(), static_cast<Eigen::Index>(Ci * Kw), static_cast<Eigen::Index>(To));
        CMapMat G(gv.data() + n * Co * To, static_cast<Eigen::Index>(Co),
                  static_cast<Eigen::Index>(To));
        GK.noalias() += G * C.transpose();
    }
    std::size_t T_saved = T;
    return make_op(std::move(out), {x, gy}, [x, gy, stride, T_saved](const Var& u) {
        return std::vector<Var>{conv1d_igrad(gy, u, stride, T_saved), conv1d(x, u, stride)};
    });
}

// --- pooling -------------------------------------------------------------

Var avgpool1d(const Var& x, std::size_t k, std::size_t s) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ContractViolation("avgpool1d: rank-3 required");
    std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    if (T < k || s == 0) throw ContractViolation("avgpool1d: window wider than input");
    std::size_t To = conv_out_len(T, k, s);
    Tensor out({N, C, To});
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t to = 0; to < To; ++to) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += xv[nc * T + to * s + i];
            out[nc * To + to] = acc / static_cast<double>(k);
        }
    return make_op(std::move(out), {x}, [k, s, T](const Var& g) {
        return std::vector<Var>{avgpool1d_adj(g, k, s, T)};
    });
}

Var avgpool1d_adj(const Var& g, std::size_t k, std::size_t s, std::size_t T) {
    const Tensor& gv = g.value();
    if (gv.rank() != 3) throw ContractViolation("avgpool1d_adj: rank-3 required");
    std::size_t N = gv.dim(0), C = gv.dim(1), To = gv.dim(2);
    Tensor out({N, C, T});
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t to = 0; to < To; ++to) {
            double v = gv[nc * To + to] / static_cast<double>(k);
            for (std::size_t i = 0; i < k; ++i) out[nc * T + to * s + i] += v;
        }
    return make_op(std::move(out), {g}, [k, s](const Var& v) {
        return std::vector<Var>{avgpool1d(v, k, s)};
    });
}

Var maxpool1d(const Var& x, std::size_t k, std::size_t s, IndexMap* out_idx) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ContractViolation("maxpool1d: rank-3 required");
    std::size_t N = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    if (T < k || s == 0) throw ContractViolation("maxpool1d: window wider than input");
    std::size_t To = conv_out_len(T, k, s);
    Tensor out({N, C, To});
    auto idx = std::make_shared<std::vector<long long>>(N * C * To);
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t to = 0; to < To; ++to) {
            std::size_t base = nc * T + to * s;
            std::size_t best = base;
            for (std::size_t i = 1; i < k; ++i)
                if (xv[base + i] > xv[best]) best = base + i;
            out[nc * To + to] = xv[best];
            (*idx)[nc * To + to] = static_cast<long long>(best);
        }
    IndexMap map = idx;
    if (out_idx) *out_idx = map;
    auto in_shape = xv.shape();
    return make_op(std::move(out), {x}, [map, in_shape](const Var& g) {
        return std::vector<Var>{scatter_into(g, map, in_shape)};
    });
}

Var maxpool1d_frozen(const Var& x, const IndexMap& idx, std::vector<std::size_t> out_shape) {
    return gather(x, idx, std::move(out_shape));
}

Var row_max(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ContractViolation("row_max: rank-2 required");
    std::size_t R = xv.dim(0), C = xv.dim(1);
    Tensor out({R});
    for (std::size_t r = 0; r < R; ++r) {
        double m = xv.at(r, 0);
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, xv.at(r, c));
        out[r] = m;
    }
    return constant(std::move(out));
}

// --- compositions --------------------------------------------------------

Var square(const Var& a) { return mul(a, a); }

Var mean_all(const Var& x) {
    return smul(sum_all(x), 1.0 / static_cast<double>(x.value().size()));
}

Var logsumexp_rows(const Var& z) {
    std::size_t K = last_dim(z);
    Var m = row_max(z);  // constant shift for stability
    Var shifted = sub(z, bcast_last(m, K));
    return add(vlog(sum_last(vexp(shifted))), m);
}

Var pick_rows(const Var& z, const std::vector<int>& idx) {
    const Tensor& zv = z.value();
    if (zv.rank() != 2 || zv.dim(0) != idx.size())
        throw ContractViolation("pick_rows: label count does not match rows");
    std::size_t K = zv.dim(1);
    auto map = std::make_shared<std::vector<long long>>(idx.size());
    for (std::size_t n = 0; n < idx.size(); ++n) {
        if (idx[n] < 0 || static_cast<std::size_t>(idx[n]) >= K)
            throw ContractViolation("pick_rows: index out of range");
        (*map)[n] = static_cast<long long>(n * K + static_cast<std::size_t>(idx[n]));
    }
    return gather(z, map, {idx.size()});
}

Var softmax_ce_rows(const Var& z, const std::vector<int>& labels) {
    return sub(logsumexp_rows(z), pick_rows(z, labels));
}

Var softmax_ce_mean(const Var& z, const std::vector<int>& labels) {
    return mean_all(softmax_ce_rows(z, labels));
}

Var softmax_ce_sum(const Var& z, const std::vector<int>& labels) {
    return sum_all(softmax_ce_rows(z, labels));
}

Tensor onehot(const std::vector<int>& labels, std::size_t num_classes) {
    Tensor out({labels.size(), num_classes});
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes)
            throw ContractViolation("onehot: label out of range");
        out.at(n, static_cast<std::size_t>(labels[n])) = 1.0;
    }
    return out;
}

// --- reverse pass --------------------------------------------------------

std::vector<Var> grad(const Var& out, const std::vector<Var>& wrt, bool create_graph) {
    if (!out.defined() || out.value().size() != 1)
        throw ContractViolation("grad: scalar output required");

    std::vector<Node*> topo;
    if (out.requires_grad()) {
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(out.node(), 0);
        seen.insert(out.node());
        while (!stack.empty()) {
            auto& top = stack.back();
            if (top.second < top.first->parents.size()) {
                const Var& pv = top.first->parents[top.second++];
                Node* p = pv.node();
                if (p && pv.requires_grad() && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                topo.push_back(top.first);
                stack.pop_back();
            }
        }
    }

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    std::unordered_map<Node*, Var> cot;
    if (out.requires_grad()) cot[out.node()] = constant(Tensor::full({1}, 1.0));

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        auto ci = cot.find(n);
        if (ci == cot.end() || !n->vjp) continue;
        std::vector<Var> pg = n->vjp(ci->second);
        if (pg.size() != n->parents.size())
            throw ContractViolation("grad: vjp arity mismatch");
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            const Var& p = n->parents[i];
            if (!p.requires_grad()) continue;
            auto pi = cot.find(p.node());
            if (pi == cot.end())
                cot.emplace(p.node(), pg[i]);
            else
                pi->second = add(pi->second, pg[i]);
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        auto wi = cot.find(w.node());
        if (wi != cot.end())
            result.push_back(wi->second);
        else
            result.push_back(constant(Tensor::zeros(w.value().shape())));
    }
    return result;
}

}  // namespace r1d::ad
