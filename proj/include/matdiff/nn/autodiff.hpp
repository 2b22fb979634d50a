#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "matdiff/nn/tensor.hpp"

namespace matdiff::nn {

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
inline int64_t next_node_id() {
    static std::atomic<int64_t> counter{0};
    return counter.fetch_add(1);
}
} // namespace detail

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled_flag()) {
        detail::grad_enabled_flag() = false;
    }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

struct Node {
    Tensor value;
    Tensor grad; // undefined until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    int64_t id = 0;

    Tensor& grad_buffer() {
        if (!grad.defined()) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

// Lightweight handle over a graph node.
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Tensor t, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->requires_grad = requires_grad && grad_enabled();
        n->id = detail::next_node_id();
        return Var(n);
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor& val() const { return node_->value; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Tensor& grad() const { return node_->grad; }
    std::shared_ptr<Node> node() const { return node_; }

    Var detach() const { return leaf(node_->value, false); }

  private:
    std::shared_ptr<Node> node_;
};

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backward) {
    bool need = grad_enabled();
    bool any = false;
    if (need)
        for (const auto& p : parents) any = any || p.requires_grad();
    if (!need || !any) return Var::leaf(std::move(value), false);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
    n->id = detail::next_node_id();
    return Var(n);
}

// Reverse pass from a scalar root. Nodes run in reverse creation order,
// which is a valid topological order for a tape built forward.
inline void backward(const Var& root) {
    if (root.val().numel() != 1)
        throw std::runtime_error("backward root must be a scalar");
    if (!root.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            Node* pp = p.get();
            if (pp->requires_grad && seen.insert(pp).second) stack.push_back(pp);
        }
    }
    std::sort(order.begin(), order.end(),
              [](Node* a, Node* b) { return a->id > b->id; });
    root.node()->grad_buffer().fill(1.0f);
    for (Node* n : order) {
        if (n->backward && n->grad.defined()) n->backward(*n);
    }
}

// ---- elementwise ops ----

namespace detail {
inline void check_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw std::runtime_error(std::string(what) + ": shape mismatch " +
                                 a.shape_str() + " vs " + b.shape_str());
}

template <typename Fwd, typename Bwd>
Var unary_op(const Var& x, Fwd fwd, Bwd bwd) {
    const Tensor& xv = x.val();
    Tensor out = Tensor::zeros(xv.shape());
    const float* xp = xv.data();
    float* op = out.data();
    for (int64_t i = 0; i < xv.numel(); ++i) op[i] = fwd(xp[i]);
    return make_op(std::move(out), {x}, [bwd](Node& n) {
        Node& p = *n.parents[0];
        const float* g = n.grad.data();
        const float* xp = p.value.data();
        const float* yp = n.value.data();
        float* gp = p.grad_buffer().data();
        for (int64_t i = 0; i < n.value.numel(); ++i)
            gp[i] += bwd(xp[i], yp[i]) * g[i];
    });
}
} // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::check_same(a.val(), b.val(), "add");
    Tensor out = a.val().clone();
    out.add_(b.val());
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k)
            n.parents[k]->grad_buffer().add_(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same(a.val(), b.val(), "sub");
    Tensor out = a.val().clone();
    out.add_(b.val(), -1.0f);
    return make_op(std::move(out), {a, b}, [](Node& n) {
        n.parents[0]->grad_buffer().add_(n.grad);
        n.parents[1]->grad_buffer().add_(n.grad, -1.0f);
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same(a.val(), b.val(), "mul");
    Tensor out = Tensor::zeros(a.val().shape());
    const float* ap = a.val().data();
    const float* bp = b.val().data();
    float* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] * bp[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const float* g = n.grad.data();
        const float* ap = n.parents[0]->value.data();
        const float* bp = n.parents[1]->value.data();
        float* ga = n.parents[0]->grad_buffer().data();
        float* gb = n.parents[1]->grad_buffer().data();
        for (int64_t i = 0; i < n.value.numel(); ++i) {
            ga[i] += bp[i] * g[i];
            gb[i] += ap[i] * g[i];
        }
    });
}

inline Var div(const Var& a, const Var& b) {
    detail::check_same(a.val(), b.val(), "div");
    Tensor out = Tensor::zeros(a.val().shape());
    const float* ap = a.val().data();
    const float* bp = b.val().data();
    float* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] / bp[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const float* g = n.grad.data();
        const float* ap = n.parents[0]->value.data();
        const float* bp = n.parents[1]->value.data();
        float* ga = n.parents[0]->grad_buffer().data();
        float* gb = n.parents[1]->grad_buffer().data();
        for (int64_t i = 0; i < n.value.numel(); ++i) {
            ga[i] += g[i] / bp[i];
            gb[i] -= g[i] * ap[i] / (bp[i] * bp[i]);
        }
    });
}

// y = a*x + b
inline Var affine(const Var& x, float a, float b) {
    return detail::unary_op(
        x, [a, b](float v) { return a * v + b; },
        [a](float, float) { return a; });
}

inline Var neg(const Var& x) { return affine(x, -1.0f, 0.0f); }
inline Var mul_scalar(const Var& x, float s) { return affine(x, s, 0.0f); }
inline Var add_scalar(const Var& x, float s) { return affine(x, 1.0f, s); }

inline Var relu(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

inline Var leaky_relu(const Var& x, float slope = 0.2f) {
    return detail::unary_op(
        x, [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

inline Var sigmoid(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
        [](float, float y) { return y * (1.0f - y); });
}

inline Var silu(const Var& x) {
    return detail::unary_op(
        x,
        [](float v) { return v / (1.0f + std::exp(-v)); },
        [](float v, float) {
            float s = 1.0f / (1.0f + std::exp(-v));
            return s * (1.0f + v * (1.0f - s));
        });
}

inline Var vexp(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return std::exp(v); },
        [](float, float y) { return y; });
}

inline Var vlog(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return std::log(v); },
        [](float v, float) { return 1.0f / v; });
}

inline Var vsqrt(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return std::sqrt(v); },
        [](float, float y) { return 0.5f / y; });
}

inline Var vabs(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

inline Var square(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return v * v; },
        [](float v, float) { return 2.0f * v; });
}

inline Var clamp(const Var& x, float lo, float hi) {
    return detail::unary_op(
        x, [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

inline Var reciprocal(const Var& x) {
    return detail::unary_op(
        x, [](float v) { return 1.0f / v; },
        [](float, float y) { return -y * y; });
}

inline Var sum_all(const Var& x) {
    double acc = 0.0;
    const float* p = x.val().data();
    for (int64_t i = 0; i < x.val().numel(); ++i) acc += p[i];
    Tensor out = Tensor::scalar((float)acc);
    return make_op(std::move(out), {x}, [](Node& n) {
        float g = n.grad[0];
        n.parents[0]->grad_buffer().add_(
            Tensor::full(n.parents[0]->value.shape(), g));
    });
}

inline Var mean_all(const Var& x) {
    int64_t cnt = x.val().numel();
    double acc = 0.0;
    const float* p = x.val().data();
    for (int64_t i = 0; i < cnt; ++i) acc += p[i];
    Tensor out = Tensor::scalar((float)(acc / (double)cnt));
    return make_op(std::move(out), {x}, [cnt](Node& n) {
        float g = n.grad[0] / (float)cnt;
        float* gp = n.parents[0]->grad_buffer().data();
        for (int64_t i = 0; i < cnt; ++i) gp[i] += g;
    });
}

// ---- small broadcast helpers on NCHW ----

// y[n,c,h,w] = x[n,c,h,w] * m[n,0,h,w]
inline Var mul_bc1(const Var& x, const Var& m) {
    const Tensor& xv = x.val();
    const Tensor& mv = m.val();
    if (mv.dim(1) != 1 || mv.dim(0) != xv.dim(0) || mv.dim(2) != xv.dim(2) ||
        mv.dim(3) != xv.dim(3))
        throw std::runtime_error("mul_bc1 shape mismatch");
    Tensor out = Tensor::zeros(xv.shape());
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at4(n, c, h, w) = xv.at4(n, c, h, w) * mv.at4(n, 0, h, w);
    return make_op(std::move(out), {x, m}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& mv = nd.parents[1]->value;
        Tensor& gx = nd.parents[0]->grad_buffer();
        Tensor& gm = nd.parents[1]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        float gv = g.at4(n, c, h, w);
                        gx.at4(n, c, h, w) += gv * mv.at4(n, 0, h, w);
                        gm.at4(n, 0, h, w) += gv * xv.at4(n, c, h, w);
                    }
    });
}

// y[n,c,h,w] = x[n,c,h,w] + m[n,0,h,w]
inline Var add_bc1(const Var& x, const Var& m) {
    const Tensor& xv = x.val();
    const Tensor& mv = m.val();
    if (mv.dim(1) != 1) throw std::runtime_error("add_bc1 needs 1-channel rhs");
    Tensor out = Tensor::zeros(xv.shape());
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at4(n, c, h, w) = xv.at4(n, c, h, w) + mv.at4(n, 0, h, w);
    return make_op(std::move(out), {x, m}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        Tensor& gm = nd.parents[1]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        float gv = g.at4(n, c, h, w);
                        gx.at4(n, c, h, w) += gv;
                        gm.at4(n, 0, h, w) += gv;
                    }
    });
}

// y[n,0,h,w] = sum_c x[n,c,h,w]
inline Var sum_channels(const Var& x) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out = Tensor::zeros({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at4(n, 0, h, w) += xv.at4(n, c, h, w);
    return make_op(std::move(out), {x}, [N, C, H, W](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        gx.at4(n, c, h, w) += g.at4(n, 0, h, w);
    });
}

// y[n,0,h,w] = sum_c x[n,c,h,w] * k[c]
inline Var dot_const(const Var& x, const std::vector<float>& k) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if ((int)k.size() != C) throw std::runtime_error("dot_const size mismatch");
    Tensor out = Tensor::zeros({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out.at4(n, 0, h, w) += xv.at4(n, c, h, w) * k[c];
    return make_op(std::move(out), {x}, [N, C, H, W, k](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        gx.at4(n, c, h, w) += g.at4(n, 0, h, w) * k[c];
    });
}

// ---- channel / batch concatenation and slicing ----

inline Var concat_ch(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::runtime_error("concat_ch: empty");
    int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C = 0;
    for (const auto& x : xs) {
        if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
            throw std::runtime_error("concat_ch shape mismatch");
        C += x.dim(1);
    }
    Tensor out = Tensor::zeros({N, C, H, W});
    int64_t plane = (int64_t)H * W;
    int c0 = 0;
    for (const auto& x : xs) {
        int Cx = x.dim(1);
        for (int n = 0; n < N; ++n)
            std::memcpy(out.data() + ((int64_t)n * C + c0) * plane,
                        x.val().data() + (int64_t)n * Cx * plane,
                        sizeof(float) * Cx * plane);
        c0 += Cx;
    }
    return make_op(std::move(out), xs, [N, C, plane](Node& nd) {
        const Tensor& g = nd.grad;
        int c0 = 0;
        for (auto& p : nd.parents) {
            int Cx = p->value.dim(1);
            Tensor& gx = p->grad_buffer();
            for (int n = 0; n < N; ++n) {
                const float* src = g.data() + ((int64_t)n * C + c0) * plane;
                float* dst = gx.data() + (int64_t)n * Cx * plane;
                for (int64_t i = 0; i < Cx * plane; ++i) dst[i] += src[i];
            }
            c0 += Cx;
        }
    });
}

inline Var slice_ch(const Var& x, int c0, int c1) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::runtime_error("slice_ch range");
    int Cs = c1 - c0;
    int64_t plane = (int64_t)H * W;
    Tensor out = Tensor::zeros({N, Cs, H, W});
    for (int n = 0; n < N; ++n)
        std::memcpy(out.data() + (int64_t)n * Cs * plane,
                    xv.data() + ((int64_t)n * C + c0) * plane,
                    sizeof(float) * Cs * plane);
    return make_op(std::move(out), {x}, [N, C, c0, Cs, plane](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n) {
            const float* src = g.data() + (int64_t)n * Cs * plane;
            float* dst = gx.data() + ((int64_t)n * C + c0) * plane;
            for (int64_t i = 0; i < Cs * plane; ++i) dst[i] += src[i];
        }
    });
}

inline Var concat_batch(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.ndim() != bv.ndim()) throw std::runtime_error("concat_batch ndim");
    std::vector<int> shape = av.shape();
    for (int i = 1; i < av.ndim(); ++i)
        if (bv.dim(i) != av.dim(i)) throw std::runtime_error("concat_batch shape");
    shape[0] = av.dim(0) + bv.dim(0);
    Tensor out = Tensor::zeros(shape);
    int64_t an = av.numel();
    std::memcpy(out.data(), av.data(), sizeof(float) * an);
    std::memcpy(out.data() + an, bv.data(), sizeof(float) * bv.numel());
    return make_op(std::move(out), {a, b}, [an](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& ga = nd.parents[0]->grad_buffer();
        Tensor& gb = nd.parents[1]->grad_buffer();
        float* gap = ga.data();
        float* gbp = gb.data();
        const float* gp = g.data();
        for (int64_t i = 0; i < ga.numel(); ++i) gap[i] += gp[i];
        for (int64_t i = 0; i < gb.numel(); ++i) gbp[i] += gp[an + i];
    });
}

inline Var slice_batch(const Var& x, int n0, int n1) {
    const Tensor& xv = x.val();
    int N = xv.dim(0);
    if (n0 < 0 || n1 > N || n0 >= n1) throw std::runtime_error("slice_batch range");
    std::vector<int> shape = xv.shape();
    shape[0] = n1 - n0;
    int64_t per = xv.numel() / N;
    Tensor out = Tensor::zeros(shape);
    std::memcpy(out.data(), xv.data() + n0 * per, sizeof(float) * (n1 - n0) * per);
    return make_op(std::move(out), {x}, [n0, per](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        float* dst = gx.data() + n0 * per;
        const float* src = g.data();
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    });
}

// Circular shift: out[n,c,y,x] = in[n,c,(y-dy) mod H,(x-dx) mod W].
inline Var roll2d_var(const Var& x, int dy, int dx) {
    const Tensor& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    auto md = [](int a, int m) { return ((a % m) + m) % m; };
    if (md(dy, H) == 0 && md(dx, W) == 0) {
        return make_op(xv.clone(), {x}, [](Node& nd) {
            nd.parents[0]->grad_buffer().add_(nd.grad);
        });
    }
    Tensor out = Tensor::zeros(xv.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                int sy = md(y - dy, H);
                for (int xc = 0; xc < W; ++xc)
                    out.at4(n, c, y, xc) = xv.at4(n, c, sy, md(xc - dx, W));
            }
    return make_op(std::move(out), {x}, [N, C, H, W, dy, dx, md](Node& nd) {
        const Tensor& g = nd.grad;
        Tensor& gx = nd.parents[0]->grad_buffer();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y) {
                    int sy = md(y - dy, H);
                    for (int xc = 0; xc < W; ++xc)
                        gx.at4(n, c, sy, md(xc - dx, W)) += g.at4(n, c, y, xc);
                }
    });
}

inline Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x.val().clone().reshaped(shape);
    return make_op(std::move(out), {x}, [](Node& nd) {
        Tensor g = nd.grad.reshaped(nd.parents[0]->value.shape());
        nd.parents[0]->grad_buffer().add_(g);
    });
}

} // namespace matdiff::nn
