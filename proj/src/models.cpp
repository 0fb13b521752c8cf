#include "r1d/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "r1d/errors.hpp"
#include "r1d/rng.hpp"

namespace r1d::models {

using ad::Var;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// --- layer construction helpers -----------------------------------------

namespace {

LayerSpec affine_l(std::string name, std::size_t in, std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::affine;
    l.name = std::move(name);
    l.in_dim = in;
    l.out_dim = out;
    return l;
}

LayerSpec relu_l() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
}

LayerSpec conv_l(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                 std::size_t s, std::size_t pl, std::size_t pr) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = std::move(name);
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kernel = k;
    l.stride = s;
    l.pad_left = pl;
    l.pad_right = pr;
    return l;
}

LayerSpec gn_l(std::string name, std::size_t groups, std::size_t channels) {
    LayerSpec l;
    l.kind = LayerKind::group_norm;
    l.name = std::move(name);
    l.groups = groups;
    l.channels = channels;
    return l;
}

LayerSpec maxpool_l(std::size_t k, std::size_t s) {
    LayerSpec l;
    l.kind = LayerKind::max_pool;
    l.kernel = k;
    l.stride = s;
    return l;
}

LayerSpec flatten_l() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

LayerSpec masked_mean_l(std::size_t factor) {
    LayerSpec l;
    l.kind = LayerKind::masked_mean;
    l.mask_factor = factor;
    return l;
}

void collect_params(const std::vector<LayerSpec>& layers,
                    std::vector<std::pair<std::string, std::vector<std::size_t>>>& out) {
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::affine:
                out.push_back({l.name + ".w", {l.in_dim, l.out_dim}});
                out.push_back({l.name + ".b", {l.out_dim}});
                break;
            case LayerKind::conv:
                out.push_back({l.name + ".w", {l.out_ch, l.in_ch, l.kernel}});
                out.push_back({l.name + ".b", {l.out_ch}});
                break;
            case LayerKind::group_norm:
                out.push_back({l.name + ".gamma", {l.channels}});
                out.push_back({l.name + ".beta", {l.channels}});
                break;
            case LayerKind::residual:
                collect_params(l.branch, out);
                break;
            default:
                break;
        }
    }
}

double init_std(const std::string& name, const std::vector<std::size_t>& shape) {
    if (shape.size() == 2) return std::sqrt(2.0 / static_cast<double>(shape[0]));  // affine w
    if (shape.size() == 3)  // conv w: fan-in = in_ch * kernel
        return std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2]));
    (void)name;
    return 0.0;
}

Classifier finish_build(ClassifierSpec spec, std::uint64_t seed) {
    Classifier m;
    m.spec = std::move(spec);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> plist;
    collect_params(m.spec.layers, plist);
    for (const auto& [name, shape] : plist) {
        Tensor t(shape);
        bool is_gamma = name.size() >= 6 && name.rfind(".gamma") == name.size() - 6;
        if (is_gamma) {
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0;
        } else {
            double sd = init_std(name, shape);
            if (sd > 0.0) {
                rng::Engine g = rng::make_engine(rng::derive_seed(seed, "init:" + name));
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd * rng::normal(g);
            }
        }
        m.params.push_back({name, ad::leaf(std::move(t), true)});
    }
    return m;
}

}  // namespace

const Var& Classifier::param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.var;
    throw ContractViolation("unknown parameter: " + name);
}

Var& Classifier::param(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return p.var;
    throw ContractViolation("unknown parameter: " + name);
}

bool Classifier::has_param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return true;
    return false;
}

// --- builders ------------------------------------------------------------

Classifier build_mlp(std::uint64_t seed) {
    ClassifierSpec s;
    s.kind = ModelKind::mlp;
    s.num_classes = 5;
    s.input_shape = {187};
    s.layers = {affine_l("fc1", 187, 128), relu_l(), affine_l("fc2", 128, 128), relu_l(),
                affine_l("fc3", 128, 128), relu_l(), affine_l("fc4", 128, 32),
                affine_l("fc5", 32, 5)};
    return finish_build(std::move(s), seed);
}

Classifier build_custom_mlp(const std::vector<std::size_t>& widths, std::size_t relu_count,
                            std::uint64_t seed) {
    if (widths.size() < 2) throw ContractViolation("build_custom_mlp: need at least two widths");
    if (relu_count >= widths.size() - 1)
        throw ContractViolation("build_custom_mlp: relu_count must leave a final affine layer");
    ClassifierSpec s;
    s.kind = ModelKind::mlp;
    s.num_classes = widths.back();
    s.input_shape = {widths.front()};
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        s.layers.push_back(affine_l("fc" + std::to_string(i + 1), widths[i], widths[i + 1]));
        if (i < relu_count) s.layers.push_back(relu_l());
    }
    return finish_build(std::move(s), seed);
}

Classifier build_beat_cnn(std::uint64_t seed) {
    ClassifierSpec s;
    s.kind = ModelKind::beat_cnn;
    s.num_classes = 5;
    s.input_shape = {187};
    s.layers.push_back(conv_l("stem", 1, 32, 5, 1, 2, 2));
    s.layers.push_back(relu_l());
    for (int b = 1; b <= 5; ++b) {
        LayerSpec res;
        res.kind = LayerKind::residual;
        std::string p = "block" + std::to_string(b);
        res.branch = {conv_l(p + ".conv1", 32, 32, 5, 1, 2, 2), relu_l(),
                      conv_l(p + ".conv2", 32, 32, 5, 1, 2, 2)};
        s.layers.push_back(res);
        s.layers.push_back(maxpool_l(5, 2));
    }
    // temporal extent after five k5/s2 pools: 187 -> 92 -> 44 -> 20 -> 8 -> 2
    s.layers.push_back(flatten_l());
    s.layers.push_back(affine_l("head1", 64, 32));
    s.layers.push_back(relu_l());
    s.layers.push_back(affine_l("head2", 32, 5));
    return finish_build(std::move(s), seed);
}

Classifier build_masked_cnn(std::uint64_t seed) { return build_masked_cnn(MaskedCnnConfig{}, seed); }

Classifier build_masked_cnn(const MaskedCnnConfig& cfg, std::uint64_t seed) {
    ClassifierSpec s;
    s.kind = ModelKind::masked_cnn;
    s.num_classes = cfg.num_classes;
    s.input_shape = {cfg.num_leads, cfg.input_len};

    auto same_pad = [](std::size_t kernel, std::size_t stride) {
        // output length T/stride needs total padding kernel - stride
        if (kernel < stride) throw ContractViolation("conv block: kernel must cover the stride");
        return kernel - stride;
    };

    std::size_t pad = same_pad(cfg.stem_kernel, cfg.stem_stride);
    s.layers.push_back(conv_l("stem", cfg.num_leads, cfg.stem_channels, cfg.stem_kernel,
                              cfg.stem_stride, pad / 2, pad - pad / 2));
    s.layers.push_back(gn_l("stem.gn", cfg.gn_groups, cfg.stem_channels));
    s.layers.push_back(relu_l());

    std::size_t factor = cfg.stem_stride;
    std::size_t in_ch = cfg.stem_channels;
    for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
        std::string p = "block" + std::to_string(b + 1);
        std::size_t out_ch = cfg.block_channels[b];
        pad = same_pad(cfg.block_kernel, cfg.block_stride);
        s.layers.push_back(
            conv_l(p, in_ch, out_ch, cfg.block_kernel, cfg.block_stride, pad / 2, pad - pad / 2));
        s.layers.push_back(gn_l(p + ".gn", cfg.gn_groups, out_ch));
        s.layers.push_back(relu_l());
        factor *= cfg.block_stride;
        in_ch = out_ch;
    }
    if (cfg.input_len % factor != 0)
        throw ContractViolation("masked cnn: input length must be divisible by the stride product");

    s.layers.push_back(masked_mean_l(factor));
    s.layers.push_back(affine_l("head", in_ch, cfg.num_classes));
    return finish_build(std::move(s), seed);
}

// --- forward interpreter --------------------------------------------------

namespace {

// (C) -> (N, C, T)
Var chan_bcast(const Var& v, std::size_t N, std::size_t T) {
    std::size_t C = v.value().size();
    return ad::reshape(ad::bcast_first(ad::reshape(ad::bcast_last(v, T), {C * T}), N), {N, C, T});
}

Tensor relu_mask_of(const Tensor& x, double neg = 0.0) {
    Tensor m(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) m[i] = x[i] > 0.0 ? 1.0 : neg;
    return m;
}

Var group_norm_layer(const Var& x, const Var& gamma, const Var& beta, std::size_t G,
                     GateTape* tape) {
    const auto& sh = x.value().shape();
    if (sh.size() != 3) throw ContractViolation("group_norm: rank-3 input required");
    std::size_t N = sh[0], C = sh[1], T = sh[2];
    if (G == 0 || C % G != 0)
        throw ContractViolation("group_norm: channels not divisible by group count");
    std::size_t M = (C / G) * T;
    Var xr = ad::reshape(x, {N * G, M});
    Var mu, inv;
    if (tape && !tape->recording) {
        mu = ad::constant(tape->norm_mu.at(tape->norm_i));
        inv = ad::constant(tape->norm_inv.at(tape->norm_i));
        ++tape->norm_i;
    } else {
        mu = ad::smul(ad::sum_last(xr), 1.0 / static_cast<double>(M));
        Var cent = ad::sub(xr, ad::bcast_last(mu, M));
        Var var = ad::smul(ad::sum_last(ad::square(cent)), 1.0 / static_cast<double>(M));
        inv = ad::div(ad::constant(Tensor::full({N * G}, 1.0)), ad::vsqrt(ad::sadd(var, 1e-5)));
        if (tape && tape->recording) {
            tape->norm_mu.push_back(mu.value());
            tape->norm_inv.push_back(inv.value());
            ++tape->norm_i;
        }
    }
    Var y = ad::mul(ad::sub(xr, ad::bcast_last(mu, M)), ad::bcast_last(inv, M));
    y = ad::reshape(y, {N, C, T});
    return ad::add(ad::mul(y, chan_bcast(gamma, N, T)), chan_bcast(beta, N, T));
}

struct MaskInfo {
    Tensor mask;                  // canonical (N, T): ones prefix per row
    std::vector<std::size_t> valid;  // per-sample valid length
};

// Compact each sample's valid positions to the front (in order) and zero the
// tail.  Logits then depend only on the valid segment and its length, never on
// where the segment sat inside the padded buffer.
Var canonicalize_masked(const Var& x, const Tensor& mask, MaskInfo& info) {
    const auto& sh = x.value().shape();
    std::size_t N = sh[0], C = sh[1], T = sh[2];
    if (mask.rank() != 2 || mask.dim(0) != N || mask.dim(1) != T)
        throw ContractViolation("mask shape must be (batch, time), got " + mask.shape_str());
    auto map = std::make_shared<std::vector<long long>>(N * C * T, -1);
    info.mask = Tensor({N, T});
    info.valid.assign(N, 0);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t j = 0;
        for (std::size_t t = 0; t < T; ++t) {
            double mv = mask.at(n, t);
            if (mv != 0.0 && mv != 1.0)
                throw ContractViolation("mask entries must be 0 or 1");
            if (mv == 1.0) {
                for (std::size_t c = 0; c < C; ++c)
                    (*map)[(n * C + c) * T + j] = static_cast<long long>((n * C + c) * T + t);
                info.mask.at(n, j) = 1.0;
                ++j;
            }
        }
        info.valid[n] = j;
    }
    return ad::gather(x, map, {N, C, T});
}

Var masked_mean_layer(const Var& h, const MaskInfo& info, std::size_t factor) {
    const auto& sh = h.value().shape();
    std::size_t N = sh[0], C = sh[1], To = sh[2];
    if (info.mask.dim(1) != To * factor)
        throw ContractViolation("masked_mean: mask length does not match feature length");
    Tensor m3({N, C, To});
    Tensor invc({N, C});
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t count = 0;
        for (std::size_t to = 0; to < To; ++to) {
            double acc = 0.0;
            for (std::size_t i = 0; i < factor; ++i) acc += info.mask.at(n, to * factor + i);
            double keep = acc / static_cast<double>(factor) > 0.5 ? 1.0 : 0.0;
            if (keep == 1.0) ++count;
            for (std::size_t c = 0; c < C; ++c) m3.at(n, c, to) = keep;
        }
        double ic = 1.0 / static_cast<double>(count == 0 ? 1 : count);
        for (std::size_t c = 0; c < C; ++c) invc.at(n, c) = ic;
    }
    Var s = ad::sum_last(ad::mul(h, ad::constant(std::move(m3))));
    return ad::mul(s, ad::constant(std::move(invc)));
}

Var run_layers(const Classifier& m, const std::vector<LayerSpec>& layers, Var h,
               const MaskInfo* minfo, GateTape* tape) {
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::affine: {
                const auto& sh = h.value().shape();
                if (sh.size() != 2 || sh[1] != l.in_dim)
                    throw ContractViolation("affine " + l.name + ": expected (batch, " +
                                            std::to_string(l.in_dim) + "), got " +
                                            h.value().shape_str());
                h = ad::add(ad::matmul(h, m.param(l.name + ".w")),
                            ad::bcast_first(m.param(l.name + ".b"), sh[0]));
                break;
            }
            case LayerKind::relu:
            case LayerKind::leaky_relu: {
                double neg = l.kind == LayerKind::relu ? 0.0 : l.slope;
                if (tape && !tape->recording) {
                    h = ad::mul(h, ad::constant(tape->relu_masks.at(tape->relu_i++)));
                } else {
                    if (tape) {
                        tape->relu_masks.push_back(relu_mask_of(h.value(), neg));
                        ++tape->relu_i;
                    }
                    h = l.kind == LayerKind::relu ? ad::relu(h) : ad::leaky_relu(h, l.slope);
                }
                break;
            }
            case LayerKind::conv: {
                const auto& sh = h.value().shape();
                if (sh.size() != 3 || sh[1] != l.in_ch)
                    throw ContractViolation("conv " + l.name + ": expected " +
                                            std::to_string(l.in_ch) + " channels, got " +
                                            h.value().shape_str());
                Var xp = (l.pad_left || l.pad_right) ? ad::pad_last(h, l.pad_left, l.pad_right) : h;
                Var y = ad::conv1d(xp, m.param(l.name + ".w"), l.stride);
                h = ad::add(y, chan_bcast(m.param(l.name + ".b"), sh[0], y.value().dim(2)));
                break;
            }
            case LayerKind::group_norm:
                h = group_norm_layer(h, m.param(l.name + ".gamma"), m.param(l.name + ".beta"),
                                     l.groups, tape);
                break;
            case LayerKind::max_pool: {
                if (l.pad_left || l.pad_right)
                    throw UnsupportedArchitecture("max_pool with padding is not supported");
                if (tape && !tape->recording) {
                    const auto& sh = h.value().shape();
                    std::size_t To = (sh[2] - l.kernel) / l.stride + 1;
                    h = ad::gather(h, tape->pool_indices.at(tape->pool_i++), {sh[0], sh[1], To});
                } else {
                    ad::IndexMap idx;
                    h = ad::maxpool1d(h, l.kernel, l.stride, &idx);
                    if (tape) {
                        tape->pool_indices.push_back(idx);
                        ++tape->pool_i;
                    }
                }
                break;
            }
            case LayerKind::avg_pool: {
                Var xp = (l.pad_left || l.pad_right) ? ad::pad_last(h, l.pad_left, l.pad_right) : h;
                h = ad::avgpool1d(xp, l.kernel, l.stride);
                break;
            }
            case LayerKind::flatten: {
                const auto& sh = h.value().shape();
                if (sh.size() != 3) throw ContractViolation("flatten: rank-3 input required");
                h = ad::reshape(h, {sh[0], sh[1] * sh[2]});
                break;
            }
            case LayerKind::residual: {
                Var b = run_layers(m, l.branch, h, minfo, tape);
                if (!b.value().same_shape(h.value()))
                    throw ContractViolation("residual branch must preserve shape");
                h = ad::add(h, b);
                break;
            }
            case LayerKind::masked_mean: {
                if (!minfo) throw ContractViolation("masked_mean layer requires a mask");
                h = masked_mean_layer(h, *minfo, l.mask_factor);
                break;
            }
            default:
                throw UnsupportedArchitecture("unknown layer kind in classifier spec");
        }
    }
    return h;
}

}  // namespace

Var forward_graph(const Classifier& m, const Var& x, const Tensor* mask, GateTape* tape) {
    Var h = x;
    const auto& in = m.spec.input_shape;
    const auto& sh = h.value().shape();

    if (m.spec.kind == ModelKind::masked_cnn) {
        if (!mask) throw ContractViolation("masked classifier requires an input mask");
        if (sh.size() != 3 || sh[1] != in[0] || sh[2] != in[1])
            throw ContractViolation("input shape " + h.value().shape_str() +
                                    " does not match classifier input (leads, time)");
        MaskInfo minfo;
        h = canonicalize_masked(h, *mask, minfo);
        return run_layers(m, m.spec.layers, h, &minfo, tape);
    }

    if (mask) throw ContractViolation("this classifier does not take an input mask");
    if (in.size() == 1) {
        if (sh.size() != 2 || sh[1] != in[0])
            throw ContractViolation("input shape " + h.value().shape_str() +
                                    " does not match classifier input length " +
                                    std::to_string(in[0]));
        if (m.spec.kind == ModelKind::beat_cnn) h = ad::reshape(h, {sh[0], 1, sh[1]});
    }
    return run_layers(m, m.spec.layers, h, nullptr, tape);
}

Tensor forward(const Classifier& m, const Tensor& x, const Tensor* mask) {
    ad::NoGradGuard ng;
    return forward_graph(m, ad::constant(x), mask).value();
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ContractViolation("argmax_rows: rank-2 logits required");
    std::size_t N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(N, 0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 1; k < K; ++k)
            if (logits.at(n, k) > logits.at(n, static_cast<std::size_t>(out[n]))) out[n] = int(k);
    return out;
}

std::vector<int> predict(const Classifier& m, const Tensor& x, const Tensor* mask) {
    return argmax_rows(forward(m, x, mask));
}

namespace {

Tensor batch1(const Tensor& x) {
    std::vector<std::size_t> sh{1};
    for (auto d : x.shape()) sh.push_back(d);
    return x.reshaped(std::move(sh));
}

}  // namespace

Tensor input_gradient(const Classifier& m, const Tensor& x, int class_index, const Tensor* mask) {
    if (m.train_mode) throw ContractViolation("input_gradient requires eval mode");
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= m.spec.num_classes)
        throw ContractViolation("class index out of range");
    Tensor xb = batch1(x);
    Tensor mb = mask ? batch1(*mask) : Tensor{};
    Var xv = ad::leaf(std::move(xb), true);
    Var z = forward_graph(m, xv, mask ? &mb : nullptr);
    Var zy = ad::pick_rows(z, {class_index});
    Tensor g = ad::grad(ad::sum_all(zy), {xv})[0].value();
    return g.reshaped(x.shape());
}

Tensor ce_input_gradient(const Classifier& m, const Tensor& x, const std::vector<int>& labels,
                         const Tensor* mask) {
    Var xv = ad::leaf(x, true);
    Var z = forward_graph(m, xv, mask);
    Var ce = ad::softmax_ce_sum(z, labels);
    return ad::grad(ce, {xv})[0].value();
}

AffineForm linearize_at(const Classifier& m, const Tensor& x, const Tensor* mask) {
    if (m.train_mode) throw ContractViolation("linearize_at requires eval mode");
    Tensor xb = batch1(x);
    Tensor mb = mask ? batch1(*mask) : Tensor{};
    const Tensor* mp = mask ? &mb : nullptr;

    GateTape tape;
    {
        ad::NoGradGuard ng;
        forward_graph(m, ad::constant(xb), mp, &tape);
    }
    tape.recording = false;

    std::size_t K = m.spec.num_classes, D = x.size();
    AffineForm f;
    f.W = Tensor({D, K});
    f.b = Tensor({K});
    {
        ad::NoGradGuard ng;
        tape.rewind();
        Tensor zb = forward_graph(m, ad::constant(Tensor::zeros(xb.shape())), mp, &tape).value();
        for (std::size_t k = 0; k < K; ++k) f.b[k] = zb[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
        tape.rewind();
        Var xv = ad::leaf(xb, true);
        Var z = forward_graph(m, xv, mp, &tape);
        Var zk = ad::pick_rows(z, {static_cast<int>(k)});
        Tensor g = ad::grad(ad::sum_all(zk), {xv})[0].value();
        for (std::size_t d = 0; d < D; ++d) f.W.at(d, k) = g[d];
    }
    if (!f.W.all_finite() || !f.b.all_finite())
        throw ContractViolation("linearization produced non-finite coefficients");
    return f;
}

std::size_t parameter_count(const Classifier& m) {
    std::size_t n = 0;
    for (const auto& p : m.params) n += p.var.value().size();
    return n;
}

void set_requires_grad(Classifier& m, bool rg) {
    for (auto& p : m.params) p.var.node()->requires_grad = rg;
}

std::uint64_t parameter_checksum(const Classifier& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : m.params) {
        h = rng::fnv1a(p.name, h);
        const Tensor& t = p.var.value();
        h = rng::fnv1a(t.data(), t.size() * sizeof(double), h);
    }
    return h;
}

// --- checkpoint io --------------------------------------------------------

namespace {

const char kMagic[8] = {'R', '1', 'D', 'C', 'K', 'P', 'T', '1'};

std::string kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::affine: return "affine";
        case LayerKind::relu: return "relu";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::conv: return "conv";
        case LayerKind::group_norm: return "group_norm";
        case LayerKind::max_pool: return "max_pool";
        case LayerKind::avg_pool: return "avg_pool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::residual: return "residual";
        case LayerKind::masked_mean: return "masked_mean";
    }
    throw UnsupportedArchitecture("unknown layer kind");
}

LayerKind kind_of(const std::string& s) {
    if (s == "affine") return LayerKind::affine;
    if (s == "relu") return LayerKind::relu;
    if (s == "leaky_relu") return LayerKind::leaky_relu;
    if (s == "conv") return LayerKind::conv;
    if (s == "group_norm") return LayerKind::group_norm;
    if (s == "max_pool") return LayerKind::max_pool;
    if (s == "avg_pool") return LayerKind::avg_pool;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "residual") return LayerKind::residual;
    if (s == "masked_mean") return LayerKind::masked_mean;
    throw ParseError("unknown layer kind: " + s);
}

json layer_to_json(const LayerSpec& l) {
    json j;
    j["kind"] = kind_name(l.kind);
    if (!l.name.empty()) j["name"] = l.name;
    if (l.in_dim) j["in_dim"] = l.in_dim;
    if (l.out_dim) j["out_dim"] = l.out_dim;
    if (l.in_ch) j["in_ch"] = l.in_ch;
    if (l.out_ch) j["out_ch"] = l.out_ch;
    if (l.kernel) j["kernel"] = l.kernel;
    if (l.stride != 1) j["stride"] = l.stride;
    if (l.pad_left) j["pad_left"] = l.pad_left;
    if (l.pad_right) j["pad_right"] = l.pad_right;
    if (l.groups) j["groups"] = l.groups;
    if (l.channels) j["channels"] = l.channels;
    if (l.kind == LayerKind::leaky_relu) j["slope"] = l.slope;
    if (l.mask_factor) j["mask_factor"] = l.mask_factor;
    if (!l.branch.empty()) {
        json b = json::array();
        for (const auto& bl : l.branch) b.push_back(layer_to_json(bl));
        j["branch"] = b;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    l.kind = kind_of(j.at("kind").get<std::string>());
    l.name = j.value("name", std::string{});
    l.in_dim = j.value("in_dim", std::size_t{0});
    l.out_dim = j.value("out_dim", std::size_t{0});
    l.in_ch = j.value("in_ch", std::size_t{0});
    l.out_ch = j.value("out_ch", std::size_t{0});
    l.kernel = j.value("kernel", std::size_t{0});
    l.stride = j.value("stride", std::size_t{1});
    l.pad_left = j.value("pad_left", std::size_t{0});
    l.pad_right = j.value("pad_right", std::size_t{0});
    l.groups = j.value("groups", std::size_t{0});
    l.channels = j.value("channels", std::size_t{0});
    l.slope = j.value("slope", 0.01);
    l.mask_factor = j.value("mask_factor", std::size_t{0});
    if (j.contains("branch"))
        for (const auto& b : j.at("branch")) l.branch.push_back(layer_from_json(b));
    return l;
}

std::string model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::mlp: return "mlp";
        case ModelKind::beat_cnn: return "beat_cnn";
        case ModelKind::masked_cnn: return "masked_cnn";
    }
    throw UnsupportedArchitecture("unknown model kind");
}

ModelKind model_kind_of(const std::string& s) {
    if (s == "mlp") return ModelKind::mlp;
    if (s == "beat_cnn") return ModelKind::beat_cnn;
    if (s == "masked_cnn") return ModelKind::masked_cnn;
    throw ParseError("unknown model kind: " + s);
}

}  // namespace

void save_checkpoint(const Classifier& m, const std::string& path) {
    json spec;
    spec["kind"] = model_kind_name(m.spec.kind);
    spec["num_classes"] = m.spec.num_classes;
    spec["input_shape"] = m.spec.input_shape;
    json layers = json::array();
    for (const auto& l : m.spec.layers) layers.push_back(layer_to_json(l));
    spec["layers"] = layers;

    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& p : m.params) {
        json t;
        t["name"] = p.name;
        t["shape"] = p.var.value().shape();
        t["dtype"] = "f64";
        t["offset"] = offset;
        t["count"] = p.var.value().size();
        tensors.push_back(t);
        offset += p.var.value().size();
    }
    json header;
    header["spec"] = spec;
    header["tensors"] = tensors;

    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 8);
    std::uint64_t hl = hs.size();
    out.write(reinterpret_cast<const char*>(&hl), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : m.params) {
        const Tensor& t = p.var.value();
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing checkpoint: " + path);
}

Classifier load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ParseError("not a checkpoint file: " + path);
    std::uint64_t hl = 0;
    in.read(reinterpret_cast<char*>(&hl), 8);
    if (!in || hl == 0 || hl > (1ull << 30)) throw ParseError("corrupt checkpoint header: " + path);
    std::string hs(hl, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hl));
    if (!in) throw ParseError("truncated checkpoint header: " + path);

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw ParseError("bad checkpoint header json: " + std::string(e.what()));
    }

    Classifier m;
    try {
        const json& spec = header.at("spec");
        m.spec.kind = model_kind_of(spec.at("kind").get<std::string>());
        m.spec.num_classes = spec.at("num_classes").get<std::size_t>();
        m.spec.input_shape = spec.at("input_shape").get<std::vector<std::size_t>>();
        for (const auto& l : spec.at("layers")) m.spec.layers.push_back(layer_from_json(l));

        for (const auto& t : header.at("tensors")) {
            std::string name = t.at("name").get<std::string>();
            auto shape = t.at("shape").get<std::vector<std::size_t>>();
            if (t.at("dtype").get<std::string>() != "f64")
                throw ParseError("unsupported tensor dtype in checkpoint");
            Tensor v(shape);
            in.read(reinterpret_cast<char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(double)));
            if (!in) throw ParseError("truncated checkpoint data: " + path);
            m.params.push_back({std::move(name), ad::leaf(std::move(v), true)});
        }
    } catch (const json::exception& e) {
        throw ParseError("bad checkpoint header: " + std::string(e.what()));
    }

    // stored tensors must match the embedded spec block exactly
    std::vector<std::pair<std::string, std::vector<std::size_t>>> want;
    collect_params(m.spec.layers, want);
    if (want.size() != m.params.size())
        throw ValidationError("checkpoint parameter list does not match its spec");
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].first != m.params[i].name ||
            want[i].second != m.params[i].var.value().shape())
            throw ValidationError("checkpoint tensor " + m.params[i].name +
                                  " does not match its spec");
        if (!m.params[i].var.value().all_finite())
            throw ValidationError("checkpoint tensor " + m.params[i].name +
                                  " has non-finite values");
    }
    return m;
}

}  // namespace r1d::models
