#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "matdiff/nn/ops.hpp"
#include "matdiff/rng.hpp"

namespace matdiff::nn {

struct Parameter {
    Tensor value;
    Tensor grad;
    Parameter() = default;
    explicit Parameter(Tensor v)
        : value(std::move(v)), grad(Tensor::zeros(value.shape())) {}
};

// Graph leaf whose gradient buffer is the parameter's own grad tensor, so
// backward() accumulates straight into it.
inline Var param_var(Parameter& p) {
    Var v = Var::leaf(p.value, true);
    if (v.requires_grad()) v.node()->grad = p.grad;
    return v;
}

using ParamFn = std::function<void(const std::string&, Parameter&)>;

inline Tensor normal_init(std::vector<int> shape, float std, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
    return t;
}

// ---- basic layers ----

struct Conv2d {
    Parameter w, b;
    int stride = 1;
    Pad pad = Pad::Zero;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride_, Pad pad_, Rng& rng,
           bool zero = false)
        : stride(stride_), pad(pad_) {
        float std = zero ? 0.0f : std::sqrt(2.0f / (float)(cin * k * k));
        w = Parameter(normal_init({cout, cin, k, k}, std, rng));
        b = Parameter(Tensor::zeros({cout}));
    }

    Var operator()(const Var& x) {
        return conv2d(x, param_var(w), param_var(b), stride, pad);
    }

    void visit(const std::string& p, const ParamFn& fn) {
        fn(p + ".w", w);
        fn(p + ".b", b);
    }
};

struct Linear {
    Parameter w, b;

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool zero = false) {
        float std = zero ? 0.0f : std::sqrt(1.0f / (float)in);
        w = Parameter(normal_init({out, in}, std, rng));
        b = Parameter(Tensor::zeros({out}));
    }

    Var operator()(const Var& x) {
        return linear(x, param_var(w), param_var(b));
    }

    void visit(const std::string& p, const ParamFn& fn) {
        fn(p + ".w", w);
        fn(p + ".b", b);
    }
};

struct GroupNormLayer {
    Parameter g, b;
    int groups = 1;

    GroupNormLayer() = default;
    GroupNormLayer(int channels, int groups_)
        : g(Tensor::full({channels}, 1.0f)), b(Tensor::zeros({channels})) {
        groups = groups_;
        while (channels % groups) --groups;
    }

    Var operator()(const Var& x) {
        return group_norm(x, param_var(g), param_var(b), groups);
    }

    void visit(const std::string& p, const ParamFn& fn) {
        fn(p + ".g", g);
        fn(p + ".b", b);
    }
};

// ---- feature rolling ----
//
// A "site" is one conv or attention layer. Applying a plan rolls the site
// input by stride*(a,b), runs the layer, and rolls the output back by
// (-a,-b); on a circularly padded net this is an exact identity. Shifts are
// in output-resolution units so strided layers stay aligned.

struct RollSite {
    int h_units = 0; // number of valid shift values vertically
    int w_units = 0;
};

struct RollPlan {
    std::vector<std::pair<int, int>> shifts; // one (a, b) per site

    static RollPlan zeros(const std::vector<RollSite>& sites) {
        RollPlan p;
        p.shifts.assign(sites.size(), {0, 0});
        return p;
    }

    static RollPlan random(const std::vector<RollSite>& sites, Rng& rng) {
        RollPlan p;
        p.shifts.reserve(sites.size());
        for (const auto& s : sites)
            p.shifts.push_back({(int)rng.below((uint64_t)s.h_units),
                                (int)rng.below((uint64_t)s.w_units)});
        return p;
    }
};

struct RollContext {
    bool record = false;
    std::vector<RollSite> sites;          // filled in record mode
    const RollPlan* plan = nullptr;       // consumed in apply mode
    size_t cursor = 0;

    std::pair<int, int> next(int h_in, int w_in, int stride) {
        if (record) {
            sites.push_back({h_in / stride, w_in / stride});
            return {0, 0};
        }
        if (!plan || cursor >= plan->shifts.size())
            throw std::runtime_error("roll plan exhausted");
        return plan->shifts[cursor++];
    }
};

// Wraps one layer evaluation in roll/unroll when a context is active.
inline Var at_site(RollContext* ctx, int stride, const Var& x,
                   const std::function<Var(const Var&)>& f) {
    if (!ctx) return f(x);
    auto [a, b] = ctx->next(x.dim(2), x.dim(3), stride);
    if (a == 0 && b == 0) return f(x);
    Var y = f(roll2d_var(x, stride * a, stride * b));
    return roll2d_var(y, -a, -b);
}

// ---- composite blocks ----

struct ResBlock {
    GroupNormLayer n1, n2;
    Conv2d c1, c2, skip;
    Linear emb;
    bool has_skip = false;
    bool has_emb = false;

    ResBlock() = default;
    ResBlock(int cin, int cout, int emb_dim, int groups, Pad pad, Rng& rng)
        : n1(cin, groups),
          n2(cout, groups),
          c1(cin, cout, 3, 1, pad, rng),
          c2(cout, cout, 3, 1, pad, rng, /*zero=*/true) {
        if (cin != cout) {
            skip = Conv2d(cin, cout, 1, 1, pad, rng);
            has_skip = true;
        }
        if (emb_dim > 0) {
            emb = Linear(emb_dim, cout, rng);
            has_emb = true;
        }
    }

    Var forward(const Var& x, const Var& t, RollContext* ctx) {
        Var h = silu(n1(x));
        h = at_site(ctx, 1, h, [&](const Var& v) { return c1(v); });
        if (has_emb && t.defined()) h = add_vec_spatial(h, emb(silu(t)));
        h = silu(n2(h));
        h = at_site(ctx, 1, h, [&](const Var& v) { return c2(v); });
        Var s = x;
        if (has_skip)
            s = at_site(ctx, 1, x, [&](const Var& v) { return skip(v); });
        return add(h, s);
    }

    void visit(const std::string& p, const ParamFn& fn) {
        n1.visit(p + ".n1", fn);
        n2.visit(p + ".n2", fn);
        c1.visit(p + ".c1", fn);
        c2.visit(p + ".c2", fn);
        if (has_skip) skip.visit(p + ".skip", fn);
        if (has_emb) emb.visit(p + ".emb", fn);
    }
};

struct SelfAttention2d {
    GroupNormLayer norm;
    Conv2d q, k, v, proj;
    int channels = 0;

    SelfAttention2d() = default;
    SelfAttention2d(int c, int groups, Pad pad, Rng& rng)
        : norm(c, groups),
          q(c, c, 1, 1, pad, rng),
          k(c, c, 1, 1, pad, rng),
          v(c, c, 1, 1, pad, rng),
          proj(c, c, 1, 1, pad, rng, /*zero=*/true),
          channels(c) {}

    Var forward(const Var& x, RollContext* ctx) {
        return at_site(ctx, 1, x, [&](const Var& xin) {
            int H = xin.dim(2), W = xin.dim(3);
            Var h = norm(xin);
            Var tq = nchw_to_ntc(q(h));
            Var tk = nchw_to_ntc(k(h));
            Var tv = nchw_to_ntc(v(h));
            Var scores = mul_scalar(bmm(tq, transpose_12(tk)),
                                    1.0f / std::sqrt((float)channels));
            Var attn = bmm(softmax_lastdim(scores), tv);
            return add(xin, proj(ntc_to_nchw(attn, H, W)));
        });
    }

    static Var transpose_12(const Var& x) {
        const Tensor& xv = x.val();
        int N = xv.dim(0), A = xv.dim(1), B = xv.dim(2);
        Tensor out = Tensor::zeros({N, B, A});
        for (int n = 0; n < N; ++n)
            for (int a = 0; a < A; ++a)
                for (int b = 0; b < B; ++b)
                    out.data()[((int64_t)n * B + b) * A + a] =
                        xv.data()[((int64_t)n * A + a) * B + b];
        return make_op(std::move(out), {x}, [N, A, B](Node& nd) {
            const Tensor& g = nd.grad;
            Tensor& gx = nd.parents[0]->grad_buffer();
            for (int n = 0; n < N; ++n)
                for (int a = 0; a < A; ++a)
                    for (int b = 0; b < B; ++b)
                        gx.data()[((int64_t)n * A + a) * B + b] +=
                            g.data()[((int64_t)n * B + b) * A + a];
        });
    }

    void visit(const std::string& p, const ParamFn& fn) {
        norm.visit(p + ".norm", fn);
        q.visit(p + ".q", fn);
        k.visit(p + ".k", fn);
        v.visit(p + ".v", fn);
        proj.visit(p + ".proj", fn);
    }
};

// Conditioning vector enters as a single key/value token.
struct CrossAttention2d {
    GroupNormLayer norm;
    Conv2d q, proj;
    Linear kf, vf;
    int channels = 0;

    CrossAttention2d() = default;
    CrossAttention2d(int c, int cond_dim, int groups, Pad pad, Rng& rng)
        : norm(c, groups),
          q(c, c, 1, 1, pad, rng),
          proj(c, c, 1, 1, pad, rng, /*zero=*/true),
          kf(cond_dim, c, rng),
          vf(cond_dim, c, rng),
          channels(c) {}

    Var forward(const Var& x, const Var& cond, RollContext* ctx) {
        return at_site(ctx, 1, x, [&](const Var& xin) {
            int N = xin.dim(0), H = xin.dim(2), W = xin.dim(3);
            Var tq = nchw_to_ntc(q(norm(xin)));
            Var kt = reshape(kf(cond), {N, 1, channels});
            Var vt = reshape(vf(cond), {N, 1, channels});
            Var scores = mul_scalar(bmm(tq, SelfAttention2d::transpose_12(kt)),
                                    1.0f / std::sqrt((float)channels));
            Var attn = bmm(softmax_lastdim(scores), vt);
            return add(xin, proj(ntc_to_nchw(attn, H, W)));
        });
    }

    void visit(const std::string& p, const ParamFn& fn) {
        norm.visit(p + ".norm", fn);
        q.visit(p + ".q", fn);
        proj.visit(p + ".proj", fn);
        kf.visit(p + ".kf", fn);
        vf.visit(p + ".vf", fn);
    }
};

// ---- parameter utilities ----

template <typename M>
std::vector<std::pair<std::string, Parameter*>> collect_params(M& m) {
    std::vector<std::pair<std::string, Parameter*>> out;
    m.visit("", [&](const std::string& name, Parameter& p) {
        out.push_back({name, &p});
    });
    return out;
}

template <typename M>
int64_t param_count(M& m) {
    int64_t n = 0;
    m.visit("", [&](const std::string&, Parameter& p) { n += p.value.numel(); });
    return n;
}

template <typename M>
void zero_grads(M& m) {
    m.visit("", [&](const std::string&, Parameter& p) { p.grad.fill(0.0f); });
}

template <typename A, typename B>
void copy_params(A& src, B& dst) {
    std::map<std::string, Parameter*> s;
    src.visit("", [&](const std::string& n, Parameter& p) { s[n] = &p; });
    dst.visit("", [&](const std::string& n, Parameter& p) {
        auto it = s.find(n);
        if (it == s.end())
            throw std::runtime_error("copy_params: missing source param " + n);
        if (it->second->value.shape() != p.value.shape())
            throw std::runtime_error("copy_params: shape mismatch at " + n);
        std::memcpy(p.value.data(), it->second->value.data(),
                    sizeof(float) * p.value.numel());
    });
}

// Copies only the names both modules share; returns how many were copied.
template <typename A, typename B>
int copy_matching_params(A& src, B& dst) {
    std::map<std::string, Parameter*> s;
    src.visit("", [&](const std::string& n, Parameter& p) { s[n] = &p; });
    int copied = 0;
    dst.visit("", [&](const std::string& n, Parameter& p) {
        auto it = s.find(n);
        if (it != s.end() && it->second->value.shape() == p.value.shape()) {
            std::memcpy(p.value.data(), it->second->value.data(),
                        sizeof(float) * p.value.numel());
            ++copied;
        }
    });
    return copied;
}

template <typename M>
uint64_t param_hash(M& m) {
    uint64_t h = 0xcbf29ce484222325ull;
    m.visit("", [&](const std::string& name, Parameter& p) {
        h = fnv1a(name, h);
        h = fnv1a(std::string_view((const char*)p.value.data(),
                                   sizeof(float) * p.value.numel()),
                  h);
    });
    return h;
}

} // namespace matdiff::nn
